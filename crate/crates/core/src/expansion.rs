//! Prefactor `w` and correction terms `psi_m` of
//! `q^eps ~ exp(-u/eps - w) (1 + eps psi_1 + eps^2 psi_2)`.
//!
//! Both are integrals along the characteristic through the start point,
//! which is the closed-form optimal path. Along it the exit data `(d*, nu*)`
//! stay fixed, so `d2u/dx2` at every node comes from the closed form.
//! Spatial derivatives of `w` and `psi_{k-1}` use a five-point bundle of
//! neighbouring characteristics on the same smooth branch.

use serde::Serialize;

use crate::bridge_model::{BridgeSpec, Domain, SpaceTimePoint};
use crate::classification::{family_of, Family};
use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, stencil_derivs, GaussLegendre};
use crate::rate_function::{
    branch_exit_time, d2u_dx2_at, du_dx_at, exit_solution, optimal_path, ExitSolution, OptimalPath,
    Regularity,
};

/// Highest supported correction order.
pub const MAX_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionConfig {
    /// Bundle spacing for derivatives of `w`, as a fraction of `d2 - d1`.
    pub h_rel: f64,
    /// Bundle spacing for derivatives of `psi_1` (needed by `psi_2`).
    /// Finite differences of `psi_1` are already noisy at the `1e-8` level,
    /// so this spacing has to be much wider than `h_rel`.
    pub outer_h_rel: f64,
    /// Gauss-Legendre nodes per characteristic integral.
    pub nodes: usize,
    /// Absolute tolerance of the adaptive Simpson rule in [`w_term`].
    pub w_tol: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { h_rel: 1e-4, outer_h_rel: 1e-2, nodes: 48, w_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionResult {
    pub u: f64,
    pub w: f64,
    pub psi: Vec<f64>,
    /// `ln` of the unclamped series; `-inf` when the bracket is not positive.
    pub log_q: f64,
    pub q_approx: f64,
    pub clamped: bool,
    pub order: usize,
    pub family_a_shortcut: bool,
}

/// How the expansion treats a start point.
enum Kind {
    /// `q = 1` up to `o(eps^m)`: no exit cost at all.
    Certain,
    /// Brownian bridge: `w` and every `psi_m` vanish.
    Flat(f64),
    Series(ExitSolution),
}

fn kind(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> Result<Kind> {
    let sol = exit_solution(spec, domain, start)?;
    if family_of(spec, domain)? == Family::A {
        return Ok(Kind::Certain);
    }
    match sol.regularity {
        Regularity::StronglyRegular => {}
        r => return Err(Error::NotStronglyRegular(format!("{r:?} at x={}, s={}", start.x, start.s))),
    }
    if sol.is_deterministic() {
        Ok(Kind::Certain)
    } else if spec.is_brownian() {
        Ok(Kind::Flat(sol.u))
    } else {
        Ok(Kind::Series(sol))
    }
}

/// The optimal path from a strongly regular start, which is also the
/// characteristic of the transport equations for `w` and `psi_m`.
pub fn characteristic(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> Result<OptimalPath> {
    let sol = exit_solution(spec, domain, start)?;
    if !sol.is_strongly_regular() {
        return Err(Error::NotStronglyRegular(format!("{:?}", sol.regularity)));
    }
    optimal_path(spec, start, sol.d_star(), sol.nu_star())
}

/// `gamma'(t) - beta(gamma(t), t)` with `beta = b - du/dx`.
pub fn characteristic_residual(path: &OptimalPath, t: f64) -> f64 {
    let y = path.position(t);
    let beta = path.spec.drift_unchecked(y, t) - du_dx_at(&path.spec, y, t, path.d, path.t_exit);
    path.velocity(t) - beta
}

/// `w(x, s)` by adaptive Simpson along the characteristic.
pub fn w_term(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> Result<f64> {
    w_term_with(spec, domain, start, &ExpansionConfig::default())
}

pub fn w_term_with(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint, cfg: &ExpansionConfig) -> Result<f64> {
    let sol = match kind(spec, domain, start)? {
        Kind::Certain | Kind::Flat(_) => return Ok(0.0),
        Kind::Series(sol) => sol,
    };
    let (d, nu) = (sol.d_star(), sol.nu_star());
    let integrand = |t: f64| {
        let y = spec.interpolate(start.x, start.s, d, nu, t);
        0.5 * d2u_dx2_at(spec, y, t, d, nu)
    };
    adaptive_simpson(&integrand, start.s, nu, cfg.w_tol).ok_or_else(|| {
        Error::NumericalBlowup(format!(
            "w quadrature did not converge on [{}, {nu}] (dg/dt at exit {:e})",
            start.s,
            sol.minimizers[0].dg_dt
        ))
    })
}

/// `[psi_1, ..., psi_m]` at a strongly regular start.
pub fn psi_terms(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint, m: usize) -> Result<Vec<f64>> {
    psi_terms_with(spec, domain, start, m, &ExpansionConfig::default())
}

pub fn psi_terms_with(
    spec: &BridgeSpec,
    domain: &Domain,
    start: SpaceTimePoint,
    m: usize,
    cfg: &ExpansionConfig,
) -> Result<Vec<f64>> {
    if m > MAX_ORDER {
        return Err(Error::UnsupportedOrder(m));
    }
    let sol = match kind(spec, domain, start)? {
        Kind::Certain | Kind::Flat(_) => return Ok(vec![0.0; m]),
        Kind::Series(sol) => sol,
    };
    series_terms(spec, domain, start, &sol, m, cfg).map(|(_, psi)| psi)
}

fn series_terms(
    spec: &BridgeSpec,
    domain: &Domain,
    start: SpaceTimePoint,
    sol: &ExitSolution,
    m: usize,
    cfg: &ExpansionConfig,
) -> Result<(f64, Vec<f64>)> {
    let bundle = Bundle::new(spec, domain, sol.d_star(), cfg);
    if m > 0 {
        bundle.check_neighbours(domain, start, sol, m)?;
    }
    let nu = sol.nu_star();
    let w = bundle.w(start.x, start.s, nu);
    let psi = (1..=m).map(|k| bundle.psi(k, start.x, start.s, nu)).collect::<Result<Vec<_>>>()?;
    Ok((w, psi))
}

/// Assembled asymptotic approximation of `q^eps(x, s)` to order `m`.
pub fn q_asymptotic(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint, eps: f64, m: usize) -> Result<ExpansionResult> {
    q_asymptotic_with(spec, domain, start, eps, m, &ExpansionConfig::default())
}

pub fn q_asymptotic_with(
    spec: &BridgeSpec,
    domain: &Domain,
    start: SpaceTimePoint,
    eps: f64,
    m: usize,
    cfg: &ExpansionConfig,
) -> Result<ExpansionResult> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if m > MAX_ORDER {
        return Err(Error::UnsupportedOrder(m));
    }
    let kind = match kind(spec, domain, start) {
        Ok(k) => k,
        Err(Error::NotStronglyRegular(why)) => return Err(Error::SeriesInvalidHere(why)),
        Err(e) => return Err(e),
    };
    let (u, w, psi, shortcut) = match kind {
        Kind::Certain => (0.0, 0.0, vec![0.0; m], true),
        Kind::Flat(u) => (u, 0.0, vec![0.0; m], false),
        Kind::Series(sol) => {
            let (w, psi) = series_terms(spec, domain, start, &sol, m, cfg)?;
            (sol.u, w, psi, false)
        }
    };
    let bracket = 1.0 + psi.iter().enumerate().map(|(k, p)| eps.powi(k as i32 + 1) * p).sum::<f64>();
    let log_q = if bracket > 0.0 { -u / eps - w + bracket.ln() } else { f64::NEG_INFINITY };
    if log_q.is_nan() {
        return Err(Error::NumericalBlowup(format!("log q is NaN (u={u}, w={w}, psi={psi:?})")));
    }
    let raw = log_q.exp();
    let clamped = raw > 1.0 || bracket <= 0.0;
    Ok(ExpansionResult {
        u,
        w,
        psi,
        log_q,
        q_approx: raw.clamp(0.0, 1.0),
        clamped,
        order: m,
        family_a_shortcut: shortcut,
    })
}

/// Characteristics of one smooth branch (fixed exit boundary `d`).
struct Bundle<'a> {
    spec: &'a BridgeSpec,
    d: f64,
    gl: GaussLegendre,
    h: f64,
    outer_h: f64,
}

impl<'a> Bundle<'a> {
    fn new(spec: &'a BridgeSpec, domain: &Domain, d: f64, cfg: &ExpansionConfig) -> Self {
        Self {
            spec,
            d,
            gl: GaussLegendre::new(cfg.nodes),
            h: cfg.h_rel * domain.width(),
            outer_h: cfg.outer_h_rel * domain.width(),
        }
    }

    /// Stencil spacing for derivatives of `psi_k` (`k = 0` is `w`).
    fn spacing(&self, k: usize) -> f64 {
        if k == 0 {
            self.h
        } else {
            self.outer_h
        }
    }

    /// The start stencil must sit on strongly regular points of the same branch.
    fn check_neighbours(&self, domain: &Domain, start: SpaceTimePoint, sol: &ExitSolution, m: usize) -> Result<()> {
        let reach: f64 = (0..m).map(|k| 2.0 * self.spacing(k)).sum();
        for f in [-1.0, -0.5, 0.5, 1.0] {
            let y = start.x + f * reach;
            if !domain.contains(y) {
                return Err(Error::NotStronglyRegular(format!("stencil point x={y} leaves D")));
            }
            let other = exit_solution(self.spec, domain, SpaceTimePoint::new(y, start.s))?;
            if !other.is_strongly_regular() || other.d_star() != sol.d_star() {
                return Err(Error::NotStronglyRegular(format!(
                    "stencil point x={y} has {:?} exiting at {}",
                    other.regularity,
                    other.d_star()
                )));
            }
        }
        Ok(())
    }

    fn exit_time(&self, y: f64, v: f64, guess: f64) -> Result<f64> {
        branch_exit_time(self.spec, y, v, self.d, guess)
            .filter(|t| t.is_finite() && *t < self.spec.t_end)
            .ok_or_else(|| Error::NumericalBlowup(format!("lost the exit branch at x={y}, s={v}")))
    }

    fn path(&self, y: f64, v: f64, nu: f64, t: f64) -> f64 {
        self.spec.interpolate(y, v, self.d, nu, t)
    }

    fn w(&self, y: f64, v: f64, nu: f64) -> f64 {
        self.gl.integrate(v, nu, |t| 0.5 * d2u_dx2_at(self.spec, self.path(y, v, nu, t), t, self.d, nu))
    }

    /// `psi_k` (`k = 0` gives `w`) on the branch characteristic through `(y, v)`.
    fn level(&self, k: usize, y: f64, v: f64, guess: f64) -> Result<f64> {
        let nu = self.exit_time(y, v, guess)?;
        if k == 0 {
            Ok(self.w(y, v, nu))
        } else {
            self.psi(k, y, v, nu)
        }
    }

    fn derivs(&self, k: usize, y: f64, v: f64, guess: f64) -> Result<(f64, f64, f64)> {
        let h = self.spacing(k);
        let mut f = [0.0; 5];
        for (j, slot) in f.iter_mut().enumerate() {
            *slot = self.level(k, y + (j as f64 - 2.0) * h, v, guess)?;
        }
        let (d1, d2) = stencil_derivs(f, h);
        Ok((f[2], d1, d2))
    }

    fn psi(&self, k: usize, y: f64, v: f64, nu: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (t, weight) in self.gl.mapped(v, nu) {
            let z = self.path(y, v, nu, t);
            let (_, wx, wxx) = self.derivs(0, z, t, nu)?;
            let base = 0.5 * (wx * wx - wxx);
            let term = if k == 1 {
                base
            } else {
                let (p, px, pxx) = self.derivs(k - 1, z, t, nu)?;
                base * p - wx * px + 0.5 * pxx
            };
            acc += weight * term;
        }
        if acc.is_finite() {
            Ok(acc)
        } else {
            Err(Error::NumericalBlowup(format!("psi_{k} is not finite at x={y}, s={v}")))
        }
    }
}
