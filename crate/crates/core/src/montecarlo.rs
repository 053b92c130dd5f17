//! Exact-transition simulation of the bridge with a Brownian-bridge
//! crossing correction between grid points.
//!
//! Paths are built dyadically. With `n_steps = m * 2^k` (`m` odd) the path
//! is first sampled on the `m`-step skeleton by exact forward transitions,
//! then each of the `k` levels fills the midpoints from their exact
//! conditional law given both neighbours. The joint law equals that of
//! `n_steps` sequential exact transitions. Because normals are consumed
//! skeleton first, doubling `n_steps` keeps every earlier grid value and
//! only adds new midpoints, so grid refinements share their random streams.
//!
//! Every path owns two ChaCha8 streams keyed by `(seed, path index)`: one
//! for the Gaussian increments and one for the crossing uniforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge_model::{BridgeSpec, Domain, SpaceTimePoint};
use crate::classification::Side;
use crate::error::{Error, Result};
use crate::numeric::{shc, sinh_ratio};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;
/// Fewest exits [`exit_statistics`] accepts.
pub const MIN_EXITS: u64 = 100;
/// Paths per parallel work unit.
const CHUNK: u64 = 512;
/// Above this exponent the crossing probability is below `e^-745` anyway.
const MAX_EXPONENT: f64 = 745.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub eps: f64,
    pub n_paths: u64,
    pub n_steps: usize,
    pub seed: u64,
    pub crossing_correction: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { eps: 0.1, n_paths: 10_000, n_steps: 2000, seed: 0, crossing_correction: true }
    }
}

impl McConfig {
    pub fn new(eps: f64, n_paths: u64) -> Self {
        Self { eps, n_paths, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        if self.n_steps < 2 {
            return Err(Error::Config(format!("n_steps must be at least 2, got {}", self.n_steps)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SideCounts {
    pub lower: u64,
    pub upper: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub q_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: u64,
    pub n_exited: u64,
    pub n_steps: usize,
    pub seed: u64,
    pub eps: f64,
    pub crossing_correction: bool,
    pub mean_exit_time: Option<f64>,
    pub exit_side_counts: SideCounts,
}

/// First exit of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub path_id: u64,
    pub exit_time: Option<f64>,
    pub exit_side: Option<Side>,
}

impl PathRecord {
    pub fn exited(&self) -> bool {
        self.exit_time.is_some()
    }
}

/// Estimate together with the per-path exits it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStatistics {
    pub estimate: McEstimate,
    pub records: Vec<PathRecord>,
}

impl ExitStatistics {
    /// Share of exited paths leaving through `side`.
    pub fn side_fraction(&self, side: Side) -> f64 {
        let c = self.estimate.exit_side_counts;
        let n = match side {
            Side::Lower => c.lower,
            Side::Upper => c.upper,
        };
        n as f64 / self.estimate.n_exited as f64
    }

    /// Share of exited paths with `|tau - center| < eta`.
    pub fn time_fraction_within(&self, center: f64, eta: f64) -> f64 {
        let close = self
            .records
            .iter()
            .filter_map(|r| r.exit_time)
            .filter(|t| (t - center).abs() < eta)
            .count();
        close as f64 / self.estimate.n_exited as f64
    }
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Probability that a Brownian bridge with variance rate `eps` from `x_i`
/// to `x_j` over `dt` touches `d`. One when the segment reaches `d`.
pub fn crossing_probability(x_i: f64, x_j: f64, dt: f64, eps: f64, d: f64) -> f64 {
    let (a, b) = (d - x_i, d - x_j);
    if a * b <= 0.0 {
        return 1.0;
    }
    let exponent = 2.0 * a * b / (eps * dt);
    if exponent > MAX_EXPONENT {
        0.0
    } else {
        (-exponent).exp()
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    /// Weight of the left neighbour.
    left: f64,
    /// Weight of the right neighbour (zero on the skeleton).
    right: f64,
    shift: f64,
    /// Standard deviation per `sqrt(eps)`.
    sd: f64,
}

/// Precomputed transition coefficients for one `(spec, s, n_steps)` grid.
struct Plan {
    s: f64,
    t_end: f64,
    n: usize,
    stride: usize,
    skeleton: Vec<Affine>,
    /// One entry per refinement level, coarse to fine.
    levels: Vec<Affine>,
}

impl Plan {
    fn new(spec: &BridgeSpec, s: f64, n: usize) -> Self {
        let k = n.trailing_zeros() as usize;
        let stride = 1usize << k;
        let dt = (spec.t_end - s) / n as f64;
        let n_base = n >> k;
        let skeleton = (0..n_base)
            .map(|j| {
                let t = s + (j * stride) as f64 * dt;
                let t_next = if j + 1 == n_base { spec.t_end } else { s + ((j + 1) * stride) as f64 * dt };
                let (alpha, beta, sigma) = spec.step_coefficients(t, t_next);
                Affine { left: alpha, right: 0.0, shift: beta, sd: sigma }
            })
            .collect();
        let levels = (1..=k)
            .map(|l| {
                // Conditional law of the midpoint of an interval of this width,
                // given both ends. The dynamics are time-homogeneous.
                let width = (stride >> (l - 1)) as f64 * dt;
                let mid = 0.5 * width;
                let shift = spec.interpolate(0.0, 0.0, 0.0, width, mid);
                let left = spec.interpolate(1.0, 0.0, 0.0, width, mid) - shift;
                let right = spec.interpolate(0.0, 0.0, 1.0, width, mid) - shift;
                let var = shc(spec.a1, mid) * sinh_ratio(spec.a1, mid, width);
                Affine { left, right, shift, sd: var.max(0.0).sqrt() }
            })
            .collect();
        Self { s, t_end: spec.t_end, n, stride, skeleton, levels }
    }

    fn time(&self, i: usize) -> f64 {
        if i == self.n {
            self.t_end
        } else {
            self.s + (self.t_end - self.s) * i as f64 / self.n as f64
        }
    }

    fn fill(&self, rng: &mut ChaCha8Rng, sqrt_eps: f64, x0: f64, x: &mut [f64]) {
        x[0] = x0;
        for (j, c) in self.skeleton.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let prev = x[j * self.stride];
            x[(j + 1) * self.stride] = if c.sd == 0.0 {
                c.left * prev + c.shift
            } else {
                c.left * prev + c.shift + c.sd * sqrt_eps * z
            };
        }
        for (l, c) in self.levels.iter().enumerate() {
            let half = self.stride >> (l + 1);
            let mut i = half;
            while i < self.n {
                let z: f64 = rng.sample(StandardNormal);
                x[i] = c.left * x[i - half] + c.right * x[i + half] + c.shift + c.sd * sqrt_eps * z;
                i += 2 * half;
            }
        }
    }
}

fn streams(seed: u64, path: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut normals = ChaCha8Rng::seed_from_u64(seed);
    normals.set_stream(2 * path);
    let mut uniforms = ChaCha8Rng::seed_from_u64(seed);
    uniforms.set_stream(2 * path + 1);
    (normals, uniforms)
}

/// One path on the grid `s + i (T - s)/n_steps`; the last point is `(T, x_T)`.
pub fn sample_path(
    spec: &BridgeSpec,
    start: SpaceTimePoint,
    eps: f64,
    n_steps: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<(f64, f64)>> {
    if !(eps > 0.0) || n_steps == 0 || !(start.s >= 0.0 && start.s < spec.t_end) {
        return Err(Error::Config(format!("bad path request: eps={eps}, n_steps={n_steps}, s={}", start.s)));
    }
    let plan = Plan::new(spec, start.s, n_steps);
    let mut x = vec![0.0; n_steps + 1];
    let (mut rng, _) = streams(seed, stream);
    plan.fill(&mut rng, eps.sqrt(), start.x, &mut x);
    Ok(x.into_iter().enumerate().map(|(i, xi)| (plan.time(i), xi)).collect())
}

struct Simulator<'a> {
    plan: Plan,
    domain: &'a Domain,
    cfg: &'a McConfig,
    x0: f64,
}

impl Simulator<'_> {
    fn run(&self, path: u64, buf: &mut [f64]) -> PathRecord {
        let (mut normals, mut uniforms) = streams(self.cfg.seed, path);
        self.plan.fill(&mut normals, self.cfg.eps.sqrt(), self.x0, buf);
        let (d1, d2) = (self.domain.d1, self.domain.d2);
        let n = self.plan.n;
        let dt = (self.plan.t_end - self.plan.s) / n as f64;
        let hit = |t: f64, side: Side| PathRecord { path_id: path, exit_time: Some(t), exit_side: Some(side) };
        for i in 0..n {
            let (a, b) = (buf[i], buf[i + 1]);
            if b <= d1 {
                return hit(self.plan.time(i + 1), Side::Lower);
            }
            if b >= d2 {
                return hit(self.plan.time(i + 1), Side::Upper);
            }
            if self.cfg.crossing_correction {
                let p_lo = crossing_probability(a, b, dt, self.cfg.eps, d1);
                let p_hi = crossing_probability(a, b, dt, self.cfg.eps, d2);
                if p_lo > 0.0 || p_hi > 0.0 {
                    let u: f64 = uniforms.random();
                    let mid = self.plan.time(i) + 0.5 * dt;
                    if u < p_lo {
                        return hit(mid, Side::Lower);
                    }
                    if u < p_lo + (1.0 - p_lo) * p_hi {
                        return hit(mid, Side::Upper);
                    }
                }
            }
        }
        PathRecord { path_id: path, exit_time: None, exit_side: None }
    }
}

fn check_start(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> Result<()> {
    if !(start.s >= 0.0 && start.s < spec.t_end) {
        return Err(Error::Domain(format!("s = {} outside [0, T)", start.s)));
    }
    if !domain.contains(start.x) {
        return Err(Error::Domain(format!("x = {} outside D", start.x)));
    }
    Ok(())
}

/// Runs `f` on a pool capped by `OUBRIDGE_THREADS` when that is set.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var("OUBRIDGE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok());
    match cap.filter(|&n| n > 0) {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

fn simulate(
    spec: &BridgeSpec,
    domain: &Domain,
    start: SpaceTimePoint,
    cfg: &McConfig,
    keep: bool,
) -> Result<(McEstimate, Vec<PathRecord>)> {
    cfg.validate()?;
    check_start(spec, domain, start)?;
    let sim = Simulator { plan: Plan::new(spec, start.s, cfg.n_steps), domain, cfg, x0: start.x };
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let chunks: Vec<(SideCounts, f64, Vec<PathRecord>)> = with_thread_cap(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut buf = vec![0.0; cfg.n_steps + 1];
                let mut counts = SideCounts::default();
                let mut time_sum = 0.0;
                let mut records = Vec::new();
                for path in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_paths) {
                    let rec = sim.run(path, &mut buf);
                    match rec.exit_side {
                        Some(Side::Lower) => counts.lower += 1,
                        Some(Side::Upper) => counts.upper += 1,
                        None => {}
                    }
                    time_sum += rec.exit_time.unwrap_or(0.0);
                    if keep {
                        records.push(rec);
                    }
                }
                (counts, time_sum, records)
            })
            .collect()
    });
    // Reduce in chunk order so the result does not depend on scheduling.
    let mut counts = SideCounts::default();
    let mut time_sum = 0.0;
    let mut records = Vec::new();
    for (c, t, r) in chunks {
        counts.lower += c.lower;
        counts.upper += c.upper;
        time_sum += t;
        records.extend(r);
    }
    let n_exited = counts.lower + counts.upper;
    let (ci_low, ci_high) = wilson_interval(n_exited, cfg.n_paths);
    let estimate = McEstimate {
        q_hat: n_exited as f64 / cfg.n_paths as f64,
        ci_low,
        ci_high,
        n_paths: cfg.n_paths,
        n_exited,
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        eps: cfg.eps,
        crossing_correction: cfg.crossing_correction,
        mean_exit_time: (n_exited > 0).then(|| time_sum / n_exited as f64),
        exit_side_counts: counts,
    };
    Ok((estimate, records))
}

/// Monte Carlo estimate of the exit probability `q^eps(x, s)`.
pub fn estimate_exit_probability(
    spec: &BridgeSpec,
    domain: &Domain,
    start: SpaceTimePoint,
    cfg: &McConfig,
) -> Result<McEstimate> {
    simulate(spec, domain, start, cfg, false).map(|(e, _)| e)
}

/// Estimate plus per-path exit records; refuses runs with fewer than
/// [`MIN_EXITS`] exits.
pub fn exit_statistics(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint, cfg: &McConfig) -> Result<ExitStatistics> {
    let (estimate, records) = simulate(spec, domain, start, cfg, true)?;
    if estimate.n_exited < MIN_EXITS {
        return Err(Error::InsufficientExits { got: estimate.n_exited, needed: MIN_EXITS });
    }
    Ok(ExitStatistics { estimate, records })
}

/// Per-path records without the minimum-exit check (for dumps).
pub fn path_records(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint, cfg: &McConfig) -> Result<Vec<PathRecord>> {
    simulate(spec, domain, start, cfg, true).map(|(_, r)| r)
}
