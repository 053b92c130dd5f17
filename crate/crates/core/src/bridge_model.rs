//! OU-bridge parameterization: drift, deterministic flow, Gaussian moments.
//!
//! Everything that would naively involve `a0/a1` is rewritten so the
//! `a1 -> 0` limit is reached without cancellation. `a1 == 0` itself is the
//! Brownian bridge and gets its own exact branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{shc, sinh_ratio};

/// Drift parameters of the bridge `dx = b(x,t) dt + sqrt(eps) dW`, pinned at `x_T` at time `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub a0: f64,
    pub a1: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "xT")]
    pub x_end: f64,
}

/// Open interval `(d1, d2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: f64,
    pub s: f64,
}

impl SpaceTimePoint {
    pub fn new(x: f64, s: f64) -> Self {
        Self { x, s }
    }
}

impl Domain {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        if !(d1.is_finite() && d2.is_finite()) || d1 >= d2 {
            return Err(Error::InvalidSpec(format!("need d1 < d2, got ({d1}, {d2})")));
        }
        Ok(Self { d1, d2 })
    }

    pub fn width(&self) -> f64 {
        self.d2 - self.d1
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.d1 && x < self.d2
    }

    pub fn reflected(&self) -> Self {
        Self { d1: -self.d2, d2: -self.d1 }
    }
}

impl BridgeSpec {
    pub fn new(a0: f64, a1: f64, t_end: f64, x_end: f64) -> Result<Self> {
        let spec = Self { a0, a1, t_end, x_end };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0.is_finite() && self.a1.is_finite() && self.x_end.is_finite()) {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::InvalidSpec(format!("T must be positive, got {}", self.t_end)));
        }
        Ok(())
    }

    pub fn is_brownian(&self) -> bool {
        self.a1 == 0.0
    }

    /// `-a0/a1`, the zero of the unconditioned OU drift.
    pub fn fixed_point(&self) -> Option<f64> {
        if self.is_brownian() {
            None
        } else {
            Some(-self.a0 / self.a1)
        }
    }

    /// Image under `x -> -x`.
    pub fn reflected(&self) -> Self {
        Self { a0: -self.a0, a1: self.a1, t_end: self.t_end, x_end: -self.x_end }
    }

    pub fn drift(&self, x: f64, t: f64) -> Result<f64> {
        if !(t < self.t_end) {
            return Err(Error::Domain(format!("drift is singular at t >= T (t = {t})")));
        }
        Ok(self.drift_unchecked(x, t))
    }

    pub(crate) fn drift_unchecked(&self, x: f64, t: f64) -> f64 {
        let tau = self.t_end - t;
        if self.is_brownian() {
            return (self.x_end - x) / tau;
        }
        let a = self.a1;
        (self.x_end - x * (a * tau).cosh()) / shc(a, tau) - self.a0 * (0.5 * a * tau).tanh()
    }

    /// Deterministic flow `x0_{x,s}(t)`.
    pub fn flow(&self, start: SpaceTimePoint, t: f64) -> Result<f64> {
        if !(t >= start.s && t <= self.t_end) {
            return Err(Error::Domain(format!("t = {t} outside [{}, {}]", start.s, self.t_end)));
        }
        Ok(self.flow_unchecked(start, t))
    }

    pub(crate) fn flow_unchecked(&self, start: SpaceTimePoint, t: f64) -> f64 {
        if t == self.t_end {
            return self.x_end;
        }
        self.interpolate(start.x, start.s, self.x_end, self.t_end, t)
    }

    /// Time derivative of the flow (equals the drift along it).
    pub fn flow_velocity(&self, start: SpaceTimePoint, t: f64) -> f64 {
        self.interpolate_velocity(start.x, start.s, self.x_end, self.t_end, t)
    }

    /// The extremal joining `(x, s)` to `(y, t)`, evaluated at `v`.
    ///
    /// With `y = x_T, t = T` this is the flow; with `y` on the boundary it is
    /// the optimal path. Valid (analytically continued) for `v` outside `[s, t]`.
    pub(crate) fn interpolate(&self, x: f64, s: f64, y: f64, t: f64, v: f64) -> f64 {
        let a = self.a1;
        let len = t - s;
        if self.is_brownian() {
            return x * ((t - v) / len) + y * ((v - s) / len);
        }
        let r1 = sinh_ratio(a, t - v, len);
        let r2 = sinh_ratio(a, v - s, len);
        let corr = -2.0 * self.a0 * shc(a, 0.5 * (t - v)) * (0.5 * a * (v - s)).sinh()
            / (0.5 * a * len).cosh();
        x * r1 + y * r2 + corr
    }

    pub(crate) fn interpolate_velocity(&self, x: f64, s: f64, y: f64, t: f64, v: f64) -> f64 {
        let a = self.a1;
        let len = t - s;
        if self.is_brownian() {
            return (y - x) / len;
        }
        (y * (a * (v - s)).cosh() - x * (a * (t - v)).cosh()) / shc(a, len)
            + self.a0 * (0.5 * a * (2.0 * v - s - t)).sinh() / (0.5 * a * len).cosh()
    }

    /// Mean at `v`, mean at `t`, and covariance between them for the bridge started at `start`.
    pub fn mean_cov(&self, start: SpaceTimePoint, v: f64, t: f64, eps: f64) -> Result<(f64, f64, f64)> {
        if !(start.s <= v && v <= t && t < self.t_end) {
            return Err(Error::Domain(format!(
                "need s <= v <= t < T, got s={}, v={v}, t={t}, T={}",
                start.s, self.t_end
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {eps}")));
        }
        let mv = self.flow_unchecked(start, v);
        let mt = self.flow_unchecked(start, t);
        let cov = eps * self.bridge_kernel(start.s, v, t);
        Ok((mv, mt, cov))
    }

    /// `shc(v - s) * sinh(a(T - t))/sinh(a(T - s))`: covariance per unit eps.
    pub(crate) fn bridge_kernel(&self, s: f64, v: f64, t: f64) -> f64 {
        let big_t = self.t_end;
        if self.is_brownian() {
            return (v - s) * (big_t - t) / (big_t - s);
        }
        shc(self.a1, v - s) * sinh_ratio(self.a1, big_t - t, big_t - s)
    }

    /// Coefficients of one exact transition `t -> t + dt`:
    /// `x' = alpha * x + beta + sigma * sqrt(eps) * Z`.
    pub(crate) fn step_coefficients(&self, t: f64, t_next: f64) -> (f64, f64, f64) {
        let big_t = self.t_end;
        if t_next >= big_t {
            return (0.0, self.x_end, 0.0);
        }
        let alpha = self.interpolate(1.0, t, 0.0, big_t, t_next) - self.interpolate(0.0, t, 0.0, big_t, t_next);
        let beta = self.interpolate(0.0, t, self.x_end, big_t, t_next);
        let var = self.bridge_kernel(t, t_next, t_next);
        (alpha, beta, var.max(0.0).sqrt())
    }
}
