//! Batch input: one bridge, one interval, a list of start points and a
//! noise sweep.

use serde::{Deserialize, Serialize};

use crate::bridge_model::{BridgeSpec, Domain, SpaceTimePoint};
use crate::error::{Error, Result};
use crate::montecarlo::McConfig;

/// Grid for the vector-field export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldGrid {
    pub nx: usize,
    pub nt: usize,
    /// x range; defaults to a margin around `D` and `x_T`.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    /// Samples per exported flow polyline.
    pub polyline_points: usize,
}

impl Default for FieldGrid {
    fn default() -> Self {
        Self { nx: 50, nt: 50, x_min: None, x_max: None, polyline_points: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub a0: f64,
    pub a1: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "xT")]
    pub x_end: f64,
    pub d1: f64,
    pub d2: f64,
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub order: usize,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub field: Option<FieldGrid>,
}

impl Scenario {
    pub fn spec(&self) -> Result<BridgeSpec> {
        BridgeSpec::new(self.a0, self.a1, self.t_end, self.x_end)
    }

    pub fn domain(&self) -> Result<Domain> {
        Domain::new(self.d1, self.d2)
    }

    pub fn start_points(&self) -> Vec<SpaceTimePoint> {
        self.points.iter().map(|&[x, s]| SpaceTimePoint::new(x, s)).collect()
    }

    /// Monte Carlo settings for one sweep entry.
    pub fn mc_for(&self, eps: f64) -> McConfig {
        McConfig { eps, ..self.mc.unwrap_or_default() }
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec()?;
        let domain = self.domain()?;
        if self.x_end == domain.d1 || self.x_end == domain.d2 {
            return Err(Error::UnsupportedBoundaryPin(self.x_end));
        }
        for p in self.start_points() {
            if !(p.s >= 0.0 && p.s < spec.t_end) || !domain.contains(p.x) {
                return Err(Error::Domain(format!("point ({}, {}) is not in D x [0, T)", p.x, p.s)));
            }
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("eps values must be positive, got {e}")));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eps list must be strictly decreasing".into()));
        }
        if let Some(mc) = &self.mc {
            McConfig { eps: 1.0, ..*mc }.validate()?;
        }
        Ok(())
    }
}
