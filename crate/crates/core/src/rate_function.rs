//! Point-to-boundary action, stationarity function g, exit minimizers and
//! the spatial derivatives of u.
//!
//! `g_func` returns the stationarity function divided by `a1^2`. The
//! division leaves roots and signs alone and gives a finite `a1 -> 0`
//! limit (the linear function `d(2t-T-s) + x(T-t) - x_T(t-s)` of the
//! Brownian bridge).

use serde::Serialize;

use crate::bridge_model::{BridgeSpec, Domain, SpaceTimePoint};
use crate::classification::{
    canonicalize, classify, deterministic_exit, family_of, CaseLabel, Family, Roman, Side,
};
use crate::error::{Error, Result};
use crate::numeric::{bisect, shc};

/// Uniform subintervals used to bracket roots of g.
pub const ROOT_SCAN_CELLS: usize = 4096;
/// `|dg/dt| * (T - s) < DEGENERACY_TOL * max|g|` marks a degenerate root.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Relative tolerance deciding that two candidate minimizers tie.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointToPointAction {
    pub value: f64,
    pub d: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regularity {
    StronglyRegular,
    MultipleMinimizers,
    DegenerateMinimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minimizer {
    pub d: f64,
    pub nu: f64,
    pub side: Side,
    /// Normalized `dg/dt` at `nu`; zero for the `u = 0` deterministic exits.
    pub dg_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSolution {
    pub u: f64,
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    pub minimizers: Vec<Minimizer>,
    pub regularity: Regularity,
    pub du_dx: Option<f64>,
    pub d2u_dx2: Option<f64>,
    /// Disagreements with the root-selection rules; empty in every case seen so far.
    pub diagnostics: Vec<String>,
}

impl ExitSolution {
    pub fn d_star(&self) -> f64 {
        self.minimizers[0].d
    }

    pub fn nu_star(&self) -> f64 {
        self.minimizers[0].nu
    }

    pub fn is_strongly_regular(&self) -> bool {
        self.regularity == Regularity::StronglyRegular
    }

    /// True for the `u = 0` points whose optimal exit is the deterministic flow.
    pub fn is_deterministic(&self) -> bool {
        self.u == 0.0 && self.minimizers.iter().all(|m| m.dg_dt == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GRoot {
    pub t: f64,
    pub multiplicity: u8,
}

fn check_start(spec: &BridgeSpec, start: SpaceTimePoint) -> Result<()> {
    if !(start.s >= 0.0 && start.s < spec.t_end) {
        return Err(Error::Domain(format!("s = {} outside [0, T)", start.s)));
    }
    Ok(())
}

/// Action of the cheapest path from `(x, s)` that sits at `d` at time `t`.
pub fn action(spec: &BridgeSpec, start: SpaceTimePoint, d: f64, t: f64) -> Result<PointToPointAction> {
    if !(t > start.s && t <= spec.t_end) {
        return Err(Error::Domain(format!("need s < t <= T, got s={}, t={t}", start.s)));
    }
    Ok(PointToPointAction { value: action_value(spec, start.x, start.s, d, t), d, t })
}

pub(crate) fn action_value(spec: &BridgeSpec, x: f64, s: f64, d: f64, t: f64) -> f64 {
    if t == spec.t_end {
        return if d == spec.x_end { 0.0 } else { f64::INFINITY };
    }
    let k = spec.bridge_kernel(s, t, t);
    let diff = d - spec.interpolate(x, s, spec.x_end, spec.t_end, t);
    diff * diff / (2.0 * k)
}

pub(crate) fn g_tilde(spec: &BridgeSpec, x: f64, s: f64, d: f64, t: f64) -> f64 {
    let big_t = spec.t_end;
    let (ga, gb, gc) = (2.0 * t - big_t - s, big_t - t, t - s);
    let xt = spec.x_end;
    if spec.is_brownian() {
        return d * ga + x * gb - xt * gc;
    }
    let a = spec.a1;
    d * shc(a, ga) + x * shc(a, gb) - xt * shc(a, gc)
        - 4.0 * spec.a0 * (0.5 * a * ga).sinh() * shc(a, 0.5 * gc) * shc(a, 0.5 * gb)
}

pub(crate) fn g_tilde_t(spec: &BridgeSpec, x: f64, s: f64, d: f64, t: f64) -> f64 {
    let big_t = spec.t_end;
    let (ga, gb, gc) = (2.0 * t - big_t - s, big_t - t, t - s);
    let xt = spec.x_end;
    if spec.is_brownian() {
        return 2.0 * d - x - xt;
    }
    let a = spec.a1;
    let (sa, ca) = ((0.5 * a * ga).sinh(), (0.5 * a * ga).cosh());
    let (hb, hc) = (shc(a, 0.5 * gb), shc(a, 0.5 * gc));
    let p_t = a * ca * hc * hb + 0.5 * sa * ((0.5 * a * gc).cosh() * hb - hc * (0.5 * a * gb).cosh());
    2.0 * d * (a * ga).cosh() - x * (a * gb).cosh() - xt * (a * gc).cosh() - 4.0 * spec.a0 * p_t
}

/// Stationarity function `g(x,s;d,t) / a1^2`; its zeros are the candidate optimal exit times.
pub fn g_func(spec: &BridgeSpec, start: SpaceTimePoint, d: f64, t: f64) -> f64 {
    g_tilde(spec, start.x, start.s, d, t)
}

/// `d/dt` of [`g_func`].
pub fn dg_dt(spec: &BridgeSpec, start: SpaceTimePoint, d: f64, t: f64) -> f64 {
    g_tilde_t(spec, start.x, start.s, d, t)
}

/// Values of [`g_func`] at `t = s` and `t = T`.
pub fn g_endpoints(spec: &BridgeSpec, start: SpaceTimePoint, d: f64) -> (f64, f64) {
    let len = spec.t_end - start.s;
    let h = shc(spec.a1, len);
    (h * (start.x - d), h * (d - spec.x_end))
}

/// All zeros of g in `(s, T)`, ascending. Multiplicity 2 flags a degenerate
/// root (tangency, or a triple root at the pitchfork).
pub fn g_roots(spec: &BridgeSpec, start: SpaceTimePoint, d: f64) -> Vec<GRoot> {
    roots_with_scale(spec, start, d).0
}

fn roots_with_scale(spec: &BridgeSpec, start: SpaceTimePoint, d: f64) -> (Vec<GRoot>, f64) {
    let (x, s) = (start.x, start.s);
    let n = ROOT_SCAN_CELLS;
    let len = spec.t_end - s;
    let ts: Vec<f64> = (0..=n)
        .map(|i| if i == n { spec.t_end } else { s + len * (i as f64 / n as f64) })
        .collect();
    let (g0, gn) = g_endpoints(spec, start, d);
    let g = |t: f64| g_tilde(spec, x, s, d, t);
    let gt = |t: f64| g_tilde_t(spec, x, s, d, t);
    let mut vals: Vec<f64> = ts.iter().map(|&t| g(t)).collect();
    vals[0] = g0;
    vals[n] = gn;
    let scale = vals.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
    let degenerate = |t: f64| gt(t).abs() * len < DEGENERACY_TOL * scale;

    let mut roots = vec![];
    for i in 0..n {
        let (a, b) = (vals[i], vals[i + 1]);
        if i > 0 && a == 0.0 {
            roots.push(ts[i]);
        }
        if a != 0.0 && b != 0.0 && (a < 0.0) != (b < 0.0) {
            roots.push(bisect(g, ts[i], ts[i + 1], 0.0));
        }
    }
    let mut out: Vec<GRoot> = roots
        .into_iter()
        .map(|t| GRoot { t, multiplicity: if degenerate(t) { 2 } else { 1 } })
        .collect();
    // Touching roots: |g| has a local minimum on the grid without a sign change.
    for i in 1..n {
        let (l, m, r) = (vals[i - 1], vals[i], vals[i + 1]);
        if m == 0.0 || (l < 0.0) != (m < 0.0) || (r < 0.0) != (m < 0.0) || l == 0.0 || r == 0.0 {
            continue;
        }
        if !(m.abs() < l.abs() && m.abs() <= r.abs()) {
            continue;
        }
        let (gl, gr) = (gt(ts[i - 1]), gt(ts[i + 1]));
        if (gl < 0.0) == (gr < 0.0) {
            continue;
        }
        let tc = bisect(gt, ts[i - 1], ts[i + 1], 0.0);
        if g(tc).abs() <= DEGENERACY_TOL * scale {
            out.push(GRoot { t: tc, multiplicity: 2 });
        }
    }
    out.sort_by(|p, q| p.t.total_cmp(&q.t));
    (out, scale)
}

/// du/dx given the (locally constant) exit data.
pub(crate) fn du_dx_at(spec: &BridgeSpec, y: f64, v: f64, d: f64, nu: f64) -> f64 {
    let flow_nu = spec.interpolate(y, v, spec.x_end, spec.t_end, nu);
    let h = if spec.is_brownian() { nu - v } else { shc(spec.a1, nu - v) };
    -(d - flow_nu) / h
}

/// Second derivative of u in x given the exit data, in the normalized form
/// `-2 (a1^2 d + a1 a0) shc(T-nu)^2 / (shc(T-v) g_t)`.
pub(crate) fn d2u_dx2_at(spec: &BridgeSpec, y: f64, v: f64, d: f64, nu: f64) -> f64 {
    if spec.is_brownian() {
        return 0.0;
    }
    let a = spec.a1;
    let big_t = spec.t_end;
    let h = shc(a, big_t - nu);
    let gt = g_tilde_t(spec, y, v, d, nu);
    -2.0 * (a * a * d + a * spec.a0) * h * h / (shc(a, big_t - v) * gt)
}

/// Continue the exit time of the smooth branch through `(y, v)` for a fixed
/// boundary `d`, starting from a nearby `guess`. Safeguarded Newton on g.
pub(crate) fn branch_exit_time(spec: &BridgeSpec, y: f64, v: f64, d: f64, guess: f64) -> Option<f64> {
    let g = |t: f64| g_tilde(spec, y, v, d, t);
    let gt = |t: f64| g_tilde_t(spec, y, v, d, t);
    let mut t = guess;
    for _ in 0..60 {
        let slope = gt(t);
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let step = g(t) / slope;
        t -= step;
        if step.abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            // one more step to settle on the rounding floor
            let slope = gt(t);
            if slope != 0.0 {
                t -= g(t) / slope;
            }
            return t.is_finite().then_some(t);
        }
    }
    // Newton failed: bracket outward from the guess and bisect.
    let span = (spec.t_end - v).abs().max(1e-12);
    let mut h = 1e-6 * span;
    while h <= span {
        let (lo, hi) = (guess - h, guess + h);
        let (flo, fhi) = (g(lo), g(hi));
        if (flo < 0.0) != (fhi < 0.0) {
            return Some(bisect(g, lo, hi, 0.0));
        }
        h *= 2.0;
    }
    None
}

/// Optimal exit position, time and action from `(x, s)`.
pub fn exit_solution(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> Result<ExitSolution> {
    check_start(spec, start)?;
    if !domain.contains(start.x) {
        return Err(Error::Domain(format!("x = {} outside D", start.x)));
    }
    let family = family_of(spec, domain)?;
    if spec.is_brownian() && family == Family::B {
        return Ok(brownian_exit(spec, domain, start));
    }
    let det = deterministic_exit(spec, domain, start);
    if det.exits() {
        let side = det.boundary.expect("finite exit has a side");
        let d = match side {
            Side::Lower => domain.d1,
            Side::Upper => domain.d2,
        };
        let (u1, u2) = match side {
            Side::Lower => (Some(0.0), None),
            Side::Upper => (None, Some(0.0)),
        };
        let strongly = !det.tangential;
        return Ok(ExitSolution {
            u: 0.0,
            u1,
            u2,
            minimizers: vec![Minimizer { d, nu: det.tau0, side, dg_dt: 0.0 }],
            regularity: if strongly { Regularity::StronglyRegular } else { Regularity::DegenerateMinimizer },
            du_dx: strongly.then_some(0.0),
            d2u_dx2: strongly.then_some(0.0),
            diagnostics: vec![],
        });
    }
    if family == Family::A {
        return Err(Error::NumericalBlowup("family-A flow failed to leave D".into()));
    }
    ou_exit(spec, domain, start)
}

fn brownian_exit(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> ExitSolution {
    let (x, s) = (start.x, start.s);
    let xt = spec.x_end;
    let len = spec.t_end - s;
    let (d1, d2) = (domain.d1, domain.d2);
    let u1 = 2.0 * (x - d1) * (xt - d1) / len;
    let u2 = 2.0 * (d2 - x) * (d2 - xt) / len;
    let nu = |d: f64| s + len * (x - d) / (x + xt - 2.0 * d);
    let u = u1.min(u2);
    let tie = (u1 - u2).abs() <= TIE_TOL * u.max(1.0);
    let lower = Minimizer { d: d1, nu: nu(d1), side: Side::Lower, dg_dt: 2.0 * d1 - x - xt };
    let upper = Minimizer { d: d2, nu: nu(d2), side: Side::Upper, dg_dt: 2.0 * d2 - x - xt };
    let minimizers = if tie {
        vec![lower, upper]
    } else if u1 < u2 {
        vec![lower]
    } else {
        vec![upper]
    };
    let regularity = if tie { Regularity::MultipleMinimizers } else { Regularity::StronglyRegular };
    let du = (!tie).then(|| if u1 < u2 { 2.0 * (xt - d1) / len } else { -2.0 * (d2 - xt) / len });
    ExitSolution {
        u,
        u1: Some(u1),
        u2: Some(u2),
        minimizers,
        regularity,
        du_dx: du,
        d2u_dx2: du.map(|_| 0.0),
        diagnostics: vec![],
    }
}

struct Candidate {
    d: f64,
    side: Side,
    root: GRoot,
    value: f64,
    dg_dt: f64,
    scale: f64,
}

fn ou_exit(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> Result<ExitSolution> {
    let (x, s) = (start.x, start.s);
    let len = spec.t_end - s;
    let mut per_side: Vec<Vec<Candidate>> = vec![];
    for (d, side) in [(domain.d1, Side::Lower), (domain.d2, Side::Upper)] {
        let (roots, scale) = roots_with_scale(spec, start, d);
        if roots.is_empty() {
            return Err(Error::NumericalBlowup(format!("no stationary exit time found for d = {d}")));
        }
        per_side.push(
            roots
                .into_iter()
                .map(|root| Candidate {
                    d,
                    side,
                    root,
                    value: action_value(spec, x, s, d, root.t),
                    dg_dt: g_tilde_t(spec, x, s, d, root.t),
                    scale,
                })
                .collect(),
        );
    }
    let side_min = |c: &[Candidate]| c.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
    let u1 = side_min(&per_side[0]);
    let u2 = side_min(&per_side[1]);
    let u = u1.min(u2);
    let tol = TIE_TOL * u.max(1.0);
    let best: Vec<&Candidate> = per_side.iter().flatten().filter(|c| c.value - u <= tol).collect();
    let minimizers: Vec<Minimizer> = best
        .iter()
        .map(|c| Minimizer { d: c.d, nu: c.root.t, side: c.side, dg_dt: c.dg_dt })
        .collect();
    let regularity = if best.len() > 1 {
        Regularity::MultipleMinimizers
    } else {
        let c = best[0];
        let degenerate = c.root.multiplicity == 2 || c.dg_dt.abs() * len < DEGENERACY_TOL * c.scale;
        if degenerate {
            Regularity::DegenerateMinimizer
        } else {
            Regularity::StronglyRegular
        }
    };
    let (du_dx, d2u_dx2) = if regularity == Regularity::StronglyRegular {
        let m = minimizers[0];
        (Some(du_dx_at(spec, x, s, m.d, m.nu)), Some(d2u_dx2_at(spec, x, s, m.d, m.nu)))
    } else {
        (None, None)
    };
    let diagnostics = rule_check(spec, domain, start, &per_side)?;
    Ok(ExitSolution { u, u1: Some(u1), u2: Some(u2), minimizers, regularity, du_dx, d2u_dx2, diagnostics })
}

/// Compare the exhaustive choice with the published selection rules:
/// one root on the far side, at most three on the near side, and on the near
/// side the smallest root wins for `x < x_T`, the largest for `x > x_T`
/// (in the analysed orientation).
fn rule_check(
    spec: &BridgeSpec,
    domain: &Domain,
    start: SpaceTimePoint,
    per_side: &[Vec<Candidate>],
) -> Result<Vec<String>> {
    let mut notes = vec![];
    let label = classify(spec, domain)?;
    let (canon, _) = canonicalize(spec, domain)?;
    let near = if canon.mirrored { 1 } else { 0 };
    let far = 1 - near;
    if per_side[far].len() != 1 {
        notes.push(format!("{} roots of g on the single-root side", per_side[far].len()));
    }
    if per_side[near].len() > 3 {
        notes.push(format!("{} roots of g on the pitchfork side", per_side[near].len()));
    }
    let rules_apply = matches!(label, CaseLabel::Ou { family: Family::B, roman, .. } if roman != Roman::IV);
    let xc = canon.x(start.x);
    let xtc = canon.spec.x_end;
    let cands = &per_side[near];
    if rules_apply && xc != xtc && !cands.is_empty() {
        let expected = if xc < xtc { &cands[0] } else { &cands[cands.len() - 1] };
        let best = cands.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
        if expected.value - best > TIE_TOL * best.max(1.0) {
            notes.push(format!(
                "selection rule picks t = {} (action {}) but the minimum is {}",
                expected.root.t, expected.value, best
            ));
        }
    }
    Ok(notes)
}

/// `(du/dx, d2u/dx2)` at a strongly regular point.
pub fn du_derivatives(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> Result<(f64, f64)> {
    let sol = exit_solution(spec, domain, start)?;
    match (sol.regularity, sol.du_dx, sol.d2u_dx2) {
        (Regularity::StronglyRegular, Some(a), Some(b)) => Ok((a, b)),
        (r, _, _) => Err(Error::NotStronglyRegular(format!("{r:?}"))),
    }
}

/// Extremal from `(x, s)` to `(d, t_exit)` with its Hamiltonian momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalPath {
    pub spec: BridgeSpec,
    pub start: SpaceTimePoint,
    pub d: f64,
    pub t_exit: f64,
}

impl OptimalPath {
    pub fn position(&self, v: f64) -> f64 {
        if v == self.t_exit {
            return self.d;
        }
        self.spec.interpolate(self.start.x, self.start.s, self.d, self.t_exit, v)
    }

    pub fn velocity(&self, v: f64) -> f64 {
        self.spec.interpolate_velocity(self.start.x, self.start.s, self.d, self.t_exit, v)
    }

    /// `alpha = gamma' - b(gamma, v)`.
    pub fn momentum(&self, v: f64) -> f64 {
        self.velocity(v) - self.spec.drift_unchecked(self.position(v), v)
    }

    /// `H = b alpha + alpha^2 / 2` along the path.
    pub fn hamiltonian(&self, v: f64) -> f64 {
        let alpha = self.momentum(v);
        self.spec.drift_unchecked(self.position(v), v) * alpha + 0.5 * alpha * alpha
    }
}

pub fn optimal_path(spec: &BridgeSpec, start: SpaceTimePoint, d: f64, t: f64) -> Result<OptimalPath> {
    if !(t > start.s && t < spec.t_end) {
        return Err(Error::Domain(format!("need s < t < T, got s={}, t={t}", start.s)));
    }
    Ok(OptimalPath { spec: *spec, start, d, t_exit: t })
}
