//! Command bodies of the `oubridge` binary. Each returns the artifact text;
//! `main` only handles arguments, files and exit codes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use oubridge::classification::{
    classify, critical_trajectory, deterministic_exit, monotonicity, omega_contains, region_tag, tau_star,
    theta_tag, Family, MonotonicityKind, RegionTag, Roman, Side, Sub,
};
use oubridge::expansion::q_asymptotic;
use oubridge::montecarlo::{estimate_exit_probability, path_records, McEstimate};
use oubridge::rate_function::exit_solution;
use oubridge::{Error, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Unreadable or malformed input.
    Parse(String),
    /// Valid input the library refuses.
    Unsupported(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Unsupported(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Unsupported(m) => write!(f, "unsupported configuration: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericalBlowup(_) | Error::InsufficientExits { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Unsupported(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses and validates a scenario file body.
pub fn parse_scenario(text: &str) -> CliResult<Scenario> {
    let sc: Scenario = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

/// Shortest round-trip-safe rendering: 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub x: f64,
    pub s: f64,
    pub in_omega: bool,
    pub region: RegionTag,
    pub theta: Option<RegionTag>,
    pub monotonicity: MonotonicityKind,
    pub turning_time: Option<f64>,
    /// Deterministic exit time; absent when the flow stays in D.
    pub tau0: Option<f64>,
    pub exit_side: Option<Side>,
    pub tangential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub label: String,
    pub family: String,
    pub mirrored: bool,
    /// True when Omega is empty for every start (Brownian bridge).
    pub omega_empty: bool,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    pub t4: Option<f64>,
    pub tau_star: Option<f64>,
    pub points: Vec<PointReport>,
}

pub fn cmd_classify(sc: &Scenario) -> CliResult<ClassifyReport> {
    let spec = sc.spec()?;
    let domain = sc.domain()?;
    let label = classify(&spec, &domain)?;
    let (mut t2, mut t3, mut t4) = (None, None, None);
    if label.is(Family::A, Roman::VII, Some(Sub::III)) {
        let c = critical_trajectory(&spec, &domain)?;
        t2 = Some(c.t_crit);
        t3 = c.t3;
    } else if label.is(Family::B, Roman::I, Some(Sub::II)) {
        t4 = Some(critical_trajectory(&spec, &domain)?.t_crit);
    }
    let tau = match label.family() {
        Family::B => tau_star(&spec, &domain)?,
        Family::A => None,
    };
    let theta_applies = label.family() == Family::B && !spec.is_brownian() && !label.is(Family::B, Roman::IV, None);
    let mut points = vec![];
    for p in sc.start_points() {
        let mono = monotonicity(&spec, p);
        let det = deterministic_exit(&spec, &domain, p);
        points.push(PointReport {
            x: p.x,
            s: p.s,
            in_omega: omega_contains(&spec, p),
            region: region_tag(&spec, &domain, p)?,
            theta: if theta_applies { Some(theta_tag(&spec, &domain, p)?) } else { None },
            monotonicity: mono.kind,
            turning_time: mono.turning_time,
            tau0: finite(det.tau0),
            exit_side: det.boundary,
            tangential: det.tangential,
        });
    }
    Ok(ClassifyReport {
        label: label.short(),
        family: format!("{:?}", label.family()),
        mirrored: label.mirrored(),
        omega_empty: spec.is_brownian(),
        t2,
        t3,
        t4,
        tau_star: tau,
        points,
    })
}

pub const RATE_HEADER: &str = "x,s,u,u1,u2,d_star,nu_star,regularity,du_dx,d2u_dx2";

pub fn cmd_rate(sc: &Scenario) -> CliResult<String> {
    let spec = sc.spec()?;
    let domain = sc.domain()?;
    let mut out = String::new();
    writeln!(out, "{RATE_HEADER}").unwrap();
    for p in sc.start_points() {
        let sol = exit_solution(&spec, &domain, p)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:?},{},{}",
            fmt_real(p.x),
            fmt_real(p.s),
            fmt_real(sol.u),
            fmt_opt(sol.u1),
            fmt_opt(sol.u2),
            fmt_real(sol.d_star()),
            fmt_real(sol.nu_star()),
            sol.regularity,
            fmt_opt(sol.du_dx),
            fmt_opt(sol.d2u_dx2),
        )
        .unwrap();
    }
    Ok(out)
}

pub const COMPARE_HEADER: &str = "x,s,eps,q_mc,ci_low,ci_high,q_asym,u,w,psi1,minus_eps_ln_qmc,case_label,regularity,\
n_exited,exits_lower,exits_upper,lower_fraction,mean_exit_time,reason";

/// One row of the Monte Carlo versus asymptotics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub x: f64,
    pub s: f64,
    pub eps: f64,
    pub q_mc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub q_asym: Option<f64>,
    pub u: f64,
    pub w: Option<f64>,
    pub psi1: Option<f64>,
    pub minus_eps_ln_qmc: Option<f64>,
    pub case_label: String,
    pub regularity: String,
    pub n_exited: u64,
    pub exits_lower: u64,
    pub exits_upper: u64,
    pub mean_exit_time: Option<f64>,
    pub reason: Option<String>,
}

impl ComparisonRow {
    pub fn lower_fraction(&self) -> Option<f64> {
        (self.n_exited > 0).then(|| self.exits_lower as f64 / self.n_exited as f64)
    }

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_real(self.x),
            fmt_real(self.s),
            fmt_real(self.eps),
            fmt_real(self.q_mc),
            fmt_real(self.ci_low),
            fmt_real(self.ci_high),
            fmt_opt(self.q_asym),
            fmt_real(self.u),
            fmt_opt(self.w),
            fmt_opt(self.psi1),
            fmt_opt(self.minus_eps_ln_qmc),
            self.case_label,
            self.regularity,
            self.n_exited,
            self.exits_lower,
            self.exits_upper,
            fmt_opt(self.lower_fraction()),
            fmt_opt(self.mean_exit_time),
            self.reason.as_deref().map(csv_text).unwrap_or_default(),
        )
    }
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn compare_rows(sc: &Scenario) -> CliResult<Vec<ComparisonRow>> {
    let spec = sc.spec()?;
    let domain = sc.domain()?;
    let label = classify(&spec, &domain)?.short();
    let mut rows = vec![];
    for p in sc.start_points() {
        let sol = exit_solution(&spec, &domain, p)?;
        for &eps in &sc.eps {
            let mc = estimate_exit_probability(&spec, &domain, p, &sc.mc_for(eps))?;
            let (q_asym, w, psi1, reason) = match q_asymptotic(&spec, &domain, p, eps, sc.order) {
                Ok(r) => (Some(r.q_approx), Some(r.w), r.psi.first().copied(), r.clamped.then(|| "clamped".to_string())),
                Err(e @ (Error::SeriesInvalidHere(_) | Error::NotStronglyRegular(_))) => {
                    (None, None, None, Some(e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            rows.push(ComparisonRow {
                x: p.x,
                s: p.s,
                eps,
                q_mc: mc.q_hat,
                ci_low: mc.ci_low,
                ci_high: mc.ci_high,
                q_asym,
                u: sol.u,
                w,
                psi1,
                minus_eps_ln_qmc: (mc.q_hat > 0.0).then(|| -eps * mc.q_hat.ln()),
                case_label: label.clone(),
                regularity: format!("{:?}", sol.regularity),
                n_exited: mc.n_exited,
                exits_lower: mc.exit_side_counts.lower,
                exits_upper: mc.exit_side_counts.upper,
                mean_exit_time: mc.mean_exit_time,
                reason,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_compare(sc: &Scenario) -> CliResult<String> {
    let mut out = String::new();
    writeln!(out, "{COMPARE_HEADER}").unwrap();
    for row in compare_rows(sc)? {
        writeln!(out, "{}", row.csv()).unwrap();
    }
    Ok(out)
}

pub const FIELD_HEADER: &str = "kind,id,x,t,value";

/// Drift on a grid (`kind = field`, `value = b(x, t)`), the deterministic
/// flow from every scenario point (`kind = flow`, `id` = point index) and,
/// where the case has one, the critical trajectory (`kind = critical`).
pub fn cmd_field(sc: &Scenario) -> CliResult<String> {
    let spec = sc.spec()?;
    let domain = sc.domain()?;
    let grid = sc.field.unwrap_or_default();
    let lo = domain.d1.min(spec.x_end);
    let hi = domain.d2.max(spec.x_end);
    let margin = 0.1 * (hi - lo);
    let x_min = grid.x_min.unwrap_or(lo - margin);
    let x_max = grid.x_max.unwrap_or(hi + margin);
    let big_t = spec.t_end;
    let mut out = String::new();
    writeln!(out, "{FIELD_HEADER}").unwrap();
    for j in 0..grid.nt {
        // The drift is singular at T, so the time grid stops short of it.
        let t = big_t * j as f64 / grid.nt as f64;
        for i in 0..grid.nx {
            let x = if grid.nx == 1 { x_min } else { x_min + (x_max - x_min) * i as f64 / (grid.nx - 1) as f64 };
            writeln!(out, "field,,{},{},{}", fmt_real(x), fmt_real(t), fmt_real(spec.drift(x, t)?)).unwrap();
        }
    }
    let n = grid.polyline_points.max(2);
    for (id, p) in sc.start_points().into_iter().enumerate() {
        for k in 0..n {
            let t = p.s + (big_t - p.s) * k as f64 / (n - 1) as f64;
            writeln!(out, "flow,{id},{},{},", fmt_real(spec.flow(p, t)?), fmt_real(t)).unwrap();
        }
    }
    if let Ok(crit) = critical_trajectory(&spec, &domain) {
        for k in 0..n {
            let t = big_t * k as f64 / (n - 1) as f64;
            writeln!(out, "critical,0,{},{},", fmt_real(crit.at(t)), fmt_real(t)).unwrap();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub x: f64,
    pub s: f64,
    pub estimate: McEstimate,
}

pub fn cmd_simulate(sc: &Scenario) -> CliResult<Vec<SimulationReport>> {
    let spec = sc.spec()?;
    let domain = sc.domain()?;
    let mut out = vec![];
    for p in sc.start_points() {
        for &eps in &sc.eps {
            let estimate = estimate_exit_probability(&spec, &domain, p, &sc.mc_for(eps))?;
            out.push(SimulationReport { x: p.x, s: p.s, estimate });
        }
    }
    Ok(out)
}

pub const PATHS_HEADER: &str = "point,eps,path_id,exit_time,exit_side,exited";

/// Per-path exit dump for every (point, eps) cell.
pub fn simulate_paths_csv(sc: &Scenario) -> CliResult<String> {
    let spec = sc.spec()?;
    let domain = sc.domain()?;
    let mut out = String::new();
    writeln!(out, "{PATHS_HEADER}").unwrap();
    for (i, p) in sc.start_points().into_iter().enumerate() {
        for &eps in &sc.eps {
            for r in path_records(&spec, &domain, p, &sc.mc_for(eps))? {
                let side = r.exit_side.map(|s| format!("{s:?}")).unwrap_or_default();
                writeln!(out, "{i},{},{},{},{side},{}", fmt_real(eps), r.path_id, fmt_opt(r.exit_time), r.exited()).unwrap();
            }
        }
    }
    Ok(out)
}
