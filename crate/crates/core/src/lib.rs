//! Small-noise exit-time asymptotics for scalar Ornstein-Uhlenbeck bridges.
//!
//! The bridge `dx = b(x,t) dt + sqrt(eps) dW` on `[s, T]`, pinned at `x_T`,
//! leaves the interval `D = (d1, d2)` with probability `q^eps(x, s)`. This
//! crate classifies the parameter regime, computes the action `u` and the
//! prefactor terms of `q^eps ~ exp(-u/eps - w)(1 + eps psi_1 + ...)`, and
//! estimates `q^eps` by exact-transition Monte Carlo for comparison.

// `!(x > 0.0)` style checks are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge_model;
pub mod classification;
pub mod error;
pub mod expansion;
pub mod montecarlo;
pub mod numeric;
pub mod rate_function;
pub mod scenario;

pub use bridge_model::{BridgeSpec, Domain, SpaceTimePoint};
pub use classification::{CaseLabel, DeterministicExit, Monotonicity, MonotonicityKind, RegionTag, Side};
pub use error::{Error, Result};
pub use expansion::{ExpansionConfig, ExpansionResult};
pub use montecarlo::{McConfig, McEstimate};
pub use rate_function::{ExitSolution, Minimizer, OptimalPath, PointToPointAction, Regularity};
pub use scenario::Scenario;
