use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};

use oubridge_cli::{
    cmd_classify, cmd_compare, cmd_field, cmd_rate, cmd_simulate, parse_scenario, simulate_paths_csv, CliError,
    CliResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Classify,
    Rate,
    Compare,
    Field,
    Simulate,
}

/// Exit-time asymptotics and Monte Carlo for Ornstein-Uhlenbeck bridges.
///
/// Exit codes: 0 success, 2 parse error, 3 unsupported configuration,
/// 4 numerical failure. OUBRIDGE_THREADS caps the Monte Carlo workers.
#[derive(Debug, Parser)]
#[command(name = "oubridge", version)]
struct Args {
    command: Command,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the Monte Carlo seed of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the leading `#` metadata line of CSV output.
    #[arg(long)]
    no_header_meta: bool,
    /// simulate: also write the per-path exit CSV here.
    #[arg(long)]
    paths: Option<PathBuf>,
}

fn meta_line(cmd: Command, sc: &oubridge::Scenario) -> String {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut line = format!("# oubridge {} {:?} generated_unix={now}", env!("CARGO_PKG_VERSION"), cmd).to_lowercase();
    if cmd == Command::Compare {
        let mc = sc.mc_for(1.0);
        line.push_str(&format!(
            " n_paths={} n_steps={} seed={} crossing_correction={}",
            mc.n_paths, mc.n_steps, mc.seed, mc.crossing_correction
        ));
    }
    line.push('\n');
    line
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn write_out(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Parse(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(args: &Args) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", args.scenario.display())))?;
    let mut sc = parse_scenario(&text)?;
    if let Some(seed) = args.seed {
        let mut mc = sc.mc.unwrap_or_default();
        mc.seed = seed;
        sc.mc = Some(mc);
    }
    let csv = |body: String| {
        if args.no_header_meta {
            body
        } else {
            meta_line(args.command, &sc) + &body
        }
    };
    let output = match args.command {
        Command::Classify => json(&cmd_classify(&sc)?),
        Command::Rate => csv(cmd_rate(&sc)?),
        Command::Compare => csv(cmd_compare(&sc)?),
        Command::Field => csv(cmd_field(&sc)?),
        Command::Simulate => {
            if let Some(p) = &args.paths {
                write_out(Some(p), &csv(simulate_paths_csv(&sc)?))?;
            }
            json(&cmd_simulate(&sc)?)
        }
    };
    write_out(args.out.as_ref(), &output)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oubridge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
