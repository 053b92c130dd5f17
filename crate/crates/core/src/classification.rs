//! Regime labels, flow monotonicity, critical trajectories, partitions and
//! the deterministic first exit time.
//!
//! Only the orientations `x_T > d2` (family A) and `-a0/a1 >= x_T` (family B)
//! are analysed directly. Everything else is mapped there by `x -> -x` and
//! the label carries `mirrored = true`.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::bridge_model::{BridgeSpec, Domain, SpaceTimePoint};
use crate::error::{Error, Result};
use crate::numeric::{bisect, shc};

/// Absolute tolerance on the defining equation of the measure-zero sets
/// (Sigma2, Lambda2, Theta2) and on tangency of the flow.
pub const PARTITION_TOL: f64 = 1e-10;

/// Bisection tolerance for every time root in this module.
pub const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Roman {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sub {
    I,
    II,
    III,
}

impl fmt::Display for Roman {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Roman::I => "I",
            Roman::II => "II",
            Roman::III => "III",
            Roman::IV => "IV",
            Roman::V => "V",
            Roman::VI => "VI",
            Roman::VII => "VII",
        };
        f.write_str(s)
    }
}

impl fmt::Display for Sub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sub::I => "I",
            Sub::II => "II",
            Sub::III => "III",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    Ou { family: Family, roman: Roman, sub: Option<Sub>, mirrored: bool },
    /// `a1 = 0`; the OU case list does not apply.
    BrownianBridge { family: Family },
}

impl CaseLabel {
    pub fn family(&self) -> Family {
        match *self {
            CaseLabel::Ou { family, .. } | CaseLabel::BrownianBridge { family } => family,
        }
    }

    pub fn is(&self, family: Family, roman: Roman, sub: Option<Sub>) -> bool {
        matches!(*self, CaseLabel::Ou { family: f, roman: r, sub: s, .. } if f == family && r == roman && s == sub)
    }

    pub fn mirrored(&self) -> bool {
        matches!(*self, CaseLabel::Ou { mirrored: true, .. })
    }

    /// Short form without the mirror flag, e.g. `A_VII_III`.
    pub fn short(&self) -> String {
        match *self {
            CaseLabel::BrownianBridge { .. } => "BrownianBridge".to_string(),
            CaseLabel::Ou { family, roman, sub, .. } => {
                let fam = match family {
                    Family::A => "A",
                    Family::B => "B",
                };
                match sub {
                    Some(sub) => format!("{fam}_{roman}_{sub}"),
                    None => format!("{fam}_{roman}"),
                }
            }
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CaseLabel::BrownianBridge { .. } => f.write_str("BrownianBridge"),
            CaseLabel::Ou { mirrored, .. } => write!(f, "{}(mirrored={mirrored})", self.short()),
        }
    }
}

impl Serialize for CaseLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonotonicityKind {
    Increasing,
    Decreasing,
    Constant,
    DownUp,
    UpDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub kind: MonotonicityKind,
    pub turning_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionTag {
    Sigma1,
    Sigma2,
    Sigma3,
    Lambda1,
    Lambda2,
    Lambda3,
    Theta1,
    Theta2,
    Theta3,
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterministicExit {
    /// `f64::INFINITY` when the flow never leaves D.
    pub tau0: f64,
    pub boundary: Option<Side>,
    pub tangential: bool,
}

impl DeterministicExit {
    pub fn exits(&self) -> bool {
        self.tau0.is_finite()
    }

    pub fn never() -> Self {
        Self { tau0: f64::INFINITY, boundary: None, tangential: false }
    }
}

/// Configuration expressed in the analysed orientation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Canonical {
    pub spec: BridgeSpec,
    pub domain: Domain,
    pub mirrored: bool,
}

impl Canonical {
    pub fn x(&self, x: f64) -> f64 {
        if self.mirrored {
            -x
        } else {
            x
        }
    }

    /// `d + a0/a1` in canonical coordinates (requires a1 != 0).
    pub fn shifted(&self, v: f64) -> f64 {
        v + self.spec.a0 / self.spec.a1
    }
}

fn nearly_equal(p: f64, v: f64) -> bool {
    (p - v).abs() <= 1e-12 * (1.0 + v.abs())
}

pub(crate) fn family_of(spec: &BridgeSpec, domain: &Domain) -> Result<Family> {
    let xt = spec.x_end;
    if xt == domain.d1 || xt == domain.d2 {
        return Err(Error::UnsupportedBoundaryPin(xt));
    }
    Ok(if domain.contains(xt) { Family::B } else { Family::A })
}

pub(crate) fn canonicalize(spec: &BridgeSpec, domain: &Domain) -> Result<(Canonical, Family)> {
    let family = family_of(spec, domain)?;
    let mirrored = match (family, spec.fixed_point()) {
        (Family::A, _) => spec.x_end < domain.d1,
        (Family::B, None) => false,
        (Family::B, Some(p)) => p < spec.x_end && !nearly_equal(p, spec.x_end),
    };
    let canon = if mirrored {
        Canonical { spec: spec.reflected(), domain: domain.reflected(), mirrored }
    } else {
        Canonical { spec: *spec, domain: *domain, mirrored }
    };
    Ok((canon, family))
}

pub fn classify(spec: &BridgeSpec, domain: &Domain) -> Result<CaseLabel> {
    let (c, family) = canonicalize(spec, domain)?;
    if spec.is_brownian() {
        return Ok(CaseLabel::BrownianBridge { family });
    }
    let s = &c.spec;
    let (d1, d2, xt) = (c.domain.d1, c.domain.d2, s.x_end);
    let p = -s.a0 / s.a1;
    let ch = (s.a1 * s.t_end).cosh();
    let (big_d1, big_d2, big_xt) = (c.shifted(d1), c.shifted(d2), c.shifted(xt));
    let label = |roman, sub| CaseLabel::Ou { family, roman, sub, mirrored: c.mirrored };
    Ok(match family {
        Family::A => {
            if nearly_equal(p, xt) {
                label(Roman::II, None)
            } else if p > xt {
                label(Roman::I, Some(if big_d2 <= big_xt * ch { Sub::I } else { Sub::II }))
            } else if nearly_equal(p, d2) {
                label(Roman::IV, None)
            } else if p > d2 {
                label(Roman::III, None)
            } else {
                let sub_v = if big_d2 <= big_xt / ch { Sub::I } else { Sub::II };
                if nearly_equal(p, d1) {
                    label(Roman::VI, Some(sub_v))
                } else if p > d1 {
                    label(Roman::V, Some(sub_v))
                } else if big_d2 <= big_xt / ch {
                    label(Roman::VII, Some(Sub::I))
                } else if big_d1 <= big_xt / ch {
                    label(Roman::VII, Some(Sub::II))
                } else {
                    label(Roman::VII, Some(Sub::III))
                }
            }
        }
        Family::B => {
            if nearly_equal(p, xt) {
                label(Roman::IV, None)
            } else if nearly_equal(p, d2) {
                label(Roman::II, None)
            } else if p > d2 {
                label(Roman::I, Some(if big_d2 >= big_xt / ch { Sub::I } else { Sub::II }))
            } else {
                label(Roman::III, None)
            }
        }
    })
}

/// Sign pattern of the flow velocity on `[s, T]`.
pub fn monotonicity(spec: &BridgeSpec, start: SpaceTimePoint) -> Monotonicity {
    let (x, s) = (start.x, start.s);
    let len = spec.t_end - s;
    let xt = spec.x_end;
    let kind_of = |v: f64| {
        if v > 0.0 {
            MonotonicityKind::Increasing
        } else if v < 0.0 {
            MonotonicityKind::Decreasing
        } else {
            MonotonicityKind::Constant
        }
    };
    if spec.is_brownian() {
        return Monotonicity { kind: kind_of(xt - x), turning_time: None };
    }
    let a = spec.a1;
    // The velocity has the sign of h(t) = XT cosh(a(t-s)) - X cosh(a(T-t)),
    // which solves h'' = a^2 h and so has at most one zero.
    let ch = (a * len).cosh();
    let corr = 2.0 * spec.a0 * (0.5 * a * len).sinh() * shc(a, 0.5 * len);
    let h_start = xt - x * ch - corr;
    let h_end = xt * ch - x + corr;
    let tol = 1e-13 * (1.0 + x.abs() + xt.abs() + (spec.a0 / a).abs());
    if h_start.abs() <= tol && h_end.abs() <= tol {
        return Monotonicity { kind: MonotonicityKind::Constant, turning_time: None };
    }
    if h_start < 0.0 && h_end > 0.0 || h_start > 0.0 && h_end < 0.0 {
        let big_x = x + spec.a0 / a;
        let th = (-h_start / (big_x * (a * len).sinh())).clamp(-1.0, 1.0);
        let t1 = (s + th.atanh() / a).clamp(s, spec.t_end);
        let kind = if h_start < 0.0 { MonotonicityKind::DownUp } else { MonotonicityKind::UpDown };
        return Monotonicity { kind, turning_time: Some(t1) };
    }
    let v = if h_start != 0.0 { h_start } else { h_end };
    Monotonicity { kind: kind_of(v), turning_time: None }
}

/// Whether `(x, s)` lies strictly between the separatrices.
pub fn omega_contains(spec: &BridgeSpec, point: SpaceTimePoint) -> bool {
    if spec.is_brownian() {
        return false;
    }
    let c = spec.a0 / spec.a1;
    let big_xt = spec.x_end + c;
    if big_xt == 0.0 {
        return false;
    }
    let ratio = (point.x + c) / big_xt;
    let ch = (spec.a1 * (spec.t_end - point.s)).cosh();
    ratio > 1.0 / ch && ratio < ch
}

/// Tangent critical trajectory of case A_VII,III (`x^{0,*}`) or B_I,II (`x^{0,**}`).
#[derive(Debug, Clone, Copy)]
pub struct CriticalTrajectory {
    /// t2 (A_VII,III) or t4 (B_I,II).
    pub t_crit: f64,
    /// Crossing of the far boundary after the tangency (A_VII,III only).
    pub t3: Option<f64>,
    /// Boundary value touched at `t_crit`, in the caller's orientation.
    pub anchor: f64,
    a1: f64,
    shift: f64,
    mirrored: bool,
}

impl CriticalTrajectory {
    pub fn at(&self, t: f64) -> f64 {
        let v = self.shift_anchor() * (self.a1 * (self.t_crit - t)).cosh() - self.shift;
        if self.mirrored {
            -v
        } else {
            v
        }
    }

    fn shift_anchor(&self) -> f64 {
        let canon_anchor = if self.mirrored { -self.anchor } else { self.anchor };
        canon_anchor + self.shift
    }
}

pub fn critical_trajectory(spec: &BridgeSpec, domain: &Domain) -> Result<CriticalTrajectory> {
    let label = classify(spec, domain)?;
    let (c, _) = canonicalize(spec, domain)?;
    let a = c.spec.a1;
    let big_t = c.spec.t_end;
    let big_xt = c.shifted(c.spec.x_end);
    if a == 0.0 {
        return Err(Error::NotApplicable(format!("{label} has no critical trajectory")));
    }
    let shift = c.spec.a0 / a;
    let solve = |anchor: f64| {
        let big_d = c.shifted(anchor);
        bisect(|t| big_xt - big_d * (a * (big_t - t)).cosh(), 0.0, big_t, ROOT_TOL)
    };
    if label.is(Family::A, Roman::VII, Some(Sub::III)) {
        let d1 = c.domain.d1;
        let t2 = solve(d1);
        let big_d1 = c.shifted(d1);
        let d2 = c.domain.d2;
        let t3 = bisect(|t| big_d1 * (a * (t2 - t)).cosh() - shift - d2, t2, big_t, ROOT_TOL);
        let anchor = if c.mirrored { -d1 } else { d1 };
        Ok(CriticalTrajectory { t_crit: t2, t3: Some(t3), anchor, a1: a, shift, mirrored: c.mirrored })
    } else if label.is(Family::B, Roman::I, Some(Sub::II)) {
        let d2 = c.domain.d2;
        let t4 = solve(d2);
        let anchor = if c.mirrored { -d2 } else { d2 };
        Ok(CriticalTrajectory { t_crit: t4, t3: None, anchor, a1: a, shift, mirrored: c.mirrored })
    } else {
        Err(Error::NotApplicable(format!("{label} has no critical trajectory")))
    }
}

/// Pitchfork time: start time at which, for `x = x_T`, the central root of
/// `g(.; d1)` becomes degenerate. Solved on `(-1000 T, T)`; `None` if no root there.
pub fn tau_star(spec: &BridgeSpec, domain: &Domain) -> Result<Option<f64>> {
    let label = classify(spec, domain)?;
    if label.family() != Family::B {
        return Err(Error::NotApplicable(format!("{label} is not a family-B case")));
    }
    if spec.is_brownian() {
        return Ok(None);
    }
    let (c, _) = canonicalize(spec, domain)?;
    let a = c.spec.a1;
    let big_t = c.spec.t_end;
    let big_d1 = c.shifted(c.domain.d1);
    let big_xt = c.shifted(c.spec.x_end);
    if big_d1 == 0.0 || big_xt == 0.0 {
        return Ok(None);
    }
    let f = |t: f64| big_xt * (0.5 * a * (big_t - t)).cosh() - big_d1;
    let lo = -1000.0 * big_t;
    let (f_lo, f_hi) = (f(lo), f(big_t));
    if f_lo.is_nan() || f_lo.signum() == f_hi.signum() {
        return Ok(None);
    }
    Ok(Some(bisect(f, lo, big_t, ROOT_TOL * (1.0 + big_t))))
}

pub fn region_tag(spec: &BridgeSpec, domain: &Domain, point: SpaceTimePoint) -> Result<RegionTag> {
    let label = classify(spec, domain)?;
    if label.is(Family::A, Roman::VII, Some(Sub::III)) {
        let crit = critical_trajectory(spec, domain)?;
        let (c, _) = canonicalize(spec, domain)?;
        let x = c.x(point.x);
        let xc = c.x(crit.at(point.s));
        return Ok(if point.s < crit.t_crit && (x - xc).abs() <= PARTITION_TOL {
            RegionTag::Sigma2
        } else if omega_contains(spec, point) && x < xc {
            RegionTag::Sigma1
        } else {
            RegionTag::Sigma3
        });
    }
    if label.is(Family::B, Roman::I, Some(Sub::II)) {
        let crit = critical_trajectory(spec, domain)?;
        let (c, _) = canonicalize(spec, domain)?;
        let x = c.x(point.x);
        let xc = c.x(crit.at(point.s));
        return Ok(if point.s < crit.t_crit && (x - xc).abs() <= PARTITION_TOL {
            RegionTag::Lambda2
        } else if omega_contains(spec, point) && x > xc {
            RegionTag::Lambda1
        } else {
            RegionTag::Lambda3
        });
    }
    if label.family() == Family::B
        && !spec.is_brownian()
        && !label.is(Family::B, Roman::IV, None)
    {
        return theta_tag(spec, domain, point);
    }
    Ok(RegionTag::Whole)
}

/// Position relative to the pitchfork sets. Meaningful in B_I..B_III (for
/// B_I,II on Lambda3 points, which `region_tag` reports as Lambda3).
pub fn theta_tag(spec: &BridgeSpec, domain: &Domain, point: SpaceTimePoint) -> Result<RegionTag> {
    let ts = tau_star(spec, domain)?;
    if (point.x - spec.x_end).abs() > PARTITION_TOL {
        return Ok(RegionTag::Theta3);
    }
    Ok(match ts {
        Some(ts) if (point.s - ts).abs() <= PARTITION_TOL => RegionTag::Theta2,
        Some(ts) if point.s < ts => RegionTag::Theta1,
        _ => RegionTag::Theta3,
    })
}

/// First time the deterministic flow leaves D.
pub fn deterministic_exit(spec: &BridgeSpec, domain: &Domain, start: SpaceTimePoint) -> DeterministicExit {
    let mono = monotonicity(spec, start);
    let big_t = spec.t_end;
    let flow = |t: f64| spec.flow_unchecked(start, t);
    let mut segments = vec![];
    match mono.turning_time {
        Some(t1) if t1 > start.s && t1 < big_t => {
            segments.push((start.s, t1, true));
            segments.push((t1, big_t, false));
        }
        _ => segments.push((start.s, big_t, false)),
    }
    for (lo, hi, ends_at_turn) in segments {
        let mut best: Option<(f64, Side, bool)> = None;
        for (d, side) in [(domain.d1, Side::Lower), (domain.d2, Side::Upper)] {
            let f_lo = flow(lo) - d;
            let f_hi = flow(hi) - d;
            let hit = if ends_at_turn && f_hi.abs() <= PARTITION_TOL && f_lo.abs() > PARTITION_TOL {
                Some((hi, true))
            } else if f_lo == 0.0 && lo > start.s {
                None
            } else if (f_lo < 0.0) != (f_hi < 0.0) || f_hi == 0.0 {
                Some((bisect(|t| flow(t) - d, lo, hi, ROOT_TOL), false))
            } else {
                None
            };
            if let Some((t, tangential)) = hit {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, side, tangential));
                }
            }
        }
        if let Some((t, side, tangential)) = best {
            return DeterministicExit { tau0: t, boundary: Some(side), tangential };
        }
    }
    DeterministicExit::never()
}
