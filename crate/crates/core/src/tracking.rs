//! Acceleration-level trajectory tracking and deadlock resolution.
//!
//! The tracking target `dzr` is the point acceleration that makes the error
//! `ℓ = p - p_d` obey `ℓ̈ + (κ₃+κ₄)ℓ̇ + κ₃κ₄ℓ = 0`. The QP then looks for wheel
//! accelerations with `A·u̇ ≈ dzr`.
//!
//! Deadlocks are broken by rotating something with `Q(q)`: the whole target
//! (`SbcDisturbance`), the relative positions inside the constraints
//! (`DistanceMod`), the preferred velocity (`VelocityPerturb`) or an auxiliary
//! term added to the tracking error (`AuxiliaryTerm`).

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoattError};
use crate::kinematics::{RobotParams, RobotState};
use crate::trajectory::ReferencePoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingGains {
    /// Position error gain κ₃, 1/s.
    pub kappa_position: f64,
    /// Composite error gain κ₄, 1/s.
    pub kappa_velocity: f64,
    /// Deviation magnitude ζ applied while a robot is flagged, 1/s.
    pub zeta: f64,
    /// Rotation angle of `Q`, radians.
    pub rotation: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        TrackingGains {
            kappa_position: 1.0,
            kappa_velocity: 4.0,
            zeta: 2.0,
            rotation: 30f64.to_radians(),
        }
    }
}

impl TrackingGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_position.is_finite() && self.kappa_position > 0.0) {
            return Err(SoattError::InvalidParams(
                "kappa_position must be positive".into(),
            ));
        }
        if !(self.kappa_velocity.is_finite() && self.kappa_velocity > 0.0) {
            return Err(SoattError::InvalidParams(
                "kappa_velocity must be positive".into(),
            ));
        }
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return Err(SoattError::InvalidParams("zeta must be nonnegative".into()));
        }
        if self.zeta >= self.kappa_velocity {
            return Err(SoattError::InvalidParams(format!(
                "zeta {} must stay below kappa_velocity {} for convergence",
                self.zeta, self.kappa_velocity
            )));
        }
        if !(self.rotation.is_finite() && self.rotation.abs() <= std::f64::consts::PI) {
            return Err(SoattError::InvalidParams(
                "rotation must lie in [-pi, pi]".into(),
            ));
        }
        Ok(())
    }
}

/// Deadlock-resolution strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlockStrategy {
    None,
    SbcDisturbance,
    DistanceMod,
    VelocityPerturb,
    AuxiliaryTerm,
}

impl DeadlockStrategy {
    pub const ALL: [DeadlockStrategy; 5] = [
        DeadlockStrategy::None,
        DeadlockStrategy::SbcDisturbance,
        DeadlockStrategy::DistanceMod,
        DeadlockStrategy::VelocityPerturb,
        DeadlockStrategy::AuxiliaryTerm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeadlockStrategy::None => "none",
            DeadlockStrategy::SbcDisturbance => "sbc_disturbance",
            DeadlockStrategy::DistanceMod => "distance_mod",
            DeadlockStrategy::VelocityPerturb => "velocity_perturb",
            DeadlockStrategy::AuxiliaryTerm => "auxiliary_term",
        }
    }
}

impl std::str::FromStr for DeadlockStrategy {
    type Err = SoattError;

    fn from_str(s: &str) -> Result<Self> {
        DeadlockStrategy::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                SoattError::config("strategy.deadlock", format!("unknown strategy {s:?}"))
            })
    }
}

/// Deadlock detection mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlockDetector {
    NearZeroVelocity,
    PositionDwell,
    HeadingAngle,
    MultiplierGate,
}

impl DeadlockDetector {
    pub const ALL: [DeadlockDetector; 4] = [
        DeadlockDetector::NearZeroVelocity,
        DeadlockDetector::PositionDwell,
        DeadlockDetector::HeadingAngle,
        DeadlockDetector::MultiplierGate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeadlockDetector::NearZeroVelocity => "near_zero_velocity",
            DeadlockDetector::PositionDwell => "position_dwell",
            DeadlockDetector::HeadingAngle => "heading_angle",
            DeadlockDetector::MultiplierGate => "multiplier_gate",
        }
    }
}

impl std::str::FromStr for DeadlockDetector {
    type Err = SoattError;

    fn from_str(s: &str) -> Result<Self> {
        DeadlockDetector::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                SoattError::config("strategy.detector", format!("unknown detector {s:?}"))
            })
    }
}

/// Rotation matrix `Q(q)`.
pub fn rotation_q(q: f64) -> Matrix2<f64> {
    let (s, c) = q.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Nominal tracking target
/// `a_d - Ȧu - (κ₃+κ₄)(Au - v_d) - κ₃κ₄(p - p_d)`.
pub fn dzr_nominal(
    state: &RobotState,
    reference: &ReferencePoint,
    gains: &TrackingGains,
    params: &RobotParams,
) -> Vector2<f64> {
    let (k3, k4) = (gains.kappa_position, gains.kappa_velocity);
    let velocity_error = state.velocity(params) - reference.velocity;
    let position_error = state.position - reference.position;
    reference.acceleration
        - state.drift(params)
        - velocity_error * (k3 + k4)
        - position_error * (k3 * k4)
}

/// Composite tracking error `Au - v_d + κ₃ℓ`.
pub fn composite_error(
    state: &RobotState,
    reference: &ReferencePoint,
    gains: &TrackingGains,
    params: &RobotParams,
) -> Vector2<f64> {
    state.velocity(params) - reference.velocity
        + (state.position - reference.position) * gains.kappa_position
}

/// Auxiliary term `-ζ·Q·e` for a composite error `e`.
pub fn auxiliary_term(error: &Vector2<f64>, gains: &TrackingGains) -> Vector2<f64> {
    -(rotation_q(gains.rotation) * error) * gains.zeta
}

/// Tracking target with the auxiliary deviation term; identical to
/// [`dzr_nominal`] while the gate is closed.
pub fn dzr_deadlock_auxiliary(
    state: &RobotState,
    reference: &ReferencePoint,
    gains: &TrackingGains,
    params: &RobotParams,
    zeta_active: bool,
) -> Result<Vector2<f64>> {
    let nominal = dzr_nominal(state, reference, gains, params);
    if !zeta_active {
        return Ok(nominal);
    }
    if gains.zeta >= gains.kappa_velocity {
        return Err(SoattError::InvalidParams(format!(
            "zeta {} must stay below kappa_velocity {}",
            gains.zeta, gains.kappa_velocity
        )));
    }
    let error = composite_error(state, reference, gains, params);
    Ok(nominal + auxiliary_term(&error, gains))
}

/// Preferred velocity `(I - ζQ)·v_d` while flagged.
pub fn perturb_preferred_velocity(
    preferred: &Vector2<f64>,
    gains: &TrackingGains,
    zeta_active: bool,
) -> Vector2<f64> {
    if zeta_active {
        preferred - rotation_q(gains.rotation) * preferred * gains.zeta
    } else {
        *preferred
    }
}

/// Disturbed target `(I - Q)·dzr`.
pub fn sbc_disturbance(dzr: &Vector2<f64>, q: f64) -> Vector2<f64> {
    dzr - rotation_q(q) * dzr
}

/// Modified relative position `(I - Q)·p_ij`.
pub fn relative_distance_mod(rel_position: &Vector2<f64>, q: f64) -> Vector2<f64> {
    rel_position - rotation_q(q) * rel_position
}

/// 1-based index of pair `(i, j)`, `1 ≤ i < j ≤ n`, in the stacked multiplier
/// vector: pairs are ordered `(1,2), (1,3), …, (1,n), (2,3), …`.
pub fn pair_alpha(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(
        1 <= i && i < j && j <= n,
        "pair ({i}, {j}) out of range for n = {n}"
    );
    let (i, j, n) = (i as i64, j as i64, n as i64);
    let alpha = (i - 1) * (n - 1) + j - i - (i - 2) * (i - 1) / 2;
    alpha as usize
}

/// 0-based slot of the 0-based pair `(i, j)`.
pub fn pair_slot(i: usize, j: usize, n: usize) -> usize {
    pair_alpha(i + 1, j + 1, n) - 1
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Robots with at least one multiplier above `threshold` among their pairs.
///
/// `multipliers` is indexed by pair slot over all `n` entities.
pub fn zeta_gate(multipliers: &[f64], n: usize, threshold: f64) -> Result<Vec<bool>> {
    if multipliers.len() != pair_count(n) {
        return Err(SoattError::DimensionMismatch(format!(
            "multiplier vector has {} entries, expected {} for {n} entities",
            multipliers.len(),
            pair_count(n)
        )));
    }
    let mut active = vec![false; n];
    for i in 0..n {
        for j in i + 1..n {
            if multipliers[pair_slot(i, j, n)] > threshold {
                active[i] = true;
                active[j] = true;
            }
        }
    }
    Ok(active)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeadlockThresholds {
    /// Speed below which a robot counts as stopped, m/s.
    pub stopped_speed: f64,
    /// Preferred speed above which a stop is suspicious, m/s.
    pub preferred_speed: f64,
    /// Displacement over the dwell window below which a robot counts as stuck, m.
    pub displacement: f64,
    /// Dwell window ξ, seconds.
    pub dwell: f64,
    /// Heading-to-neighbor angle threshold, radians.
    pub heading_angle: f64,
    /// Distance from the final goal under which a robot is considered arrived, m.
    pub goal_tolerance: f64,
    /// Multipliers above this count as an active constraint. Released
    /// multipliers decay geometrically and never reach exactly zero.
    pub active_multiplier: f64,
}

impl Default for DeadlockThresholds {
    fn default() -> Self {
        DeadlockThresholds {
            stopped_speed: 0.02,
            preferred_speed: 0.05,
            displacement: 0.01,
            dwell: 1.0,
            heading_angle: 5f64.to_radians(),
            goal_tolerance: 0.05,
            active_multiplier: 1e-6,
        }
    }
}

/// What the detectors look at for one robot at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlockSample {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub preferred_velocity: Vector2<f64>,
    pub heading: f64,
    /// Distance to the final goal.
    pub goal_distance: f64,
    /// Bearing of the nearest in-range neighbor, world frame.
    pub neighbor_bearing: Option<f64>,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let wrapped = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if wrapped <= -std::f64::consts::PI {
        wrapped + two_pi
    } else {
        wrapped
    }
}

/// Flags robots considered deadlocked.
///
/// `window` is time-major (`window[t][robot]`, newest last) and spaced by
/// `dt`. The dwell mechanism stays silent until the window covers the dwell
/// time. The multiplier gate reads `multipliers` (pair slots over
/// `entity_count` entities, robots first) and ignores the window.
pub fn detect_deadlock(
    window: &[Vec<DeadlockSample>],
    detector: DeadlockDetector,
    thresholds: &DeadlockThresholds,
    dt: f64,
    multipliers: &[f64],
    entity_count: usize,
    robot_count: usize,
) -> Result<Vec<bool>> {
    if detector == DeadlockDetector::MultiplierGate {
        let mut flags = zeta_gate(multipliers, entity_count, thresholds.active_multiplier)?;
        flags.truncate(robot_count);
        return Ok(flags);
    }
    let Some(latest) = window.last() else {
        return Ok(vec![false; robot_count]);
    };
    if latest.len() != robot_count {
        return Err(SoattError::DimensionMismatch(format!(
            "window row has {} robots, expected {robot_count}",
            latest.len()
        )));
    }
    let flags = match detector {
        DeadlockDetector::NearZeroVelocity => latest
            .iter()
            .map(|s| {
                s.velocity.norm() < thresholds.stopped_speed
                    && s.preferred_velocity.norm() > thresholds.preferred_speed
            })
            .collect(),
        DeadlockDetector::PositionDwell => {
            let dwell_steps = (thresholds.dwell / dt).round() as usize;
            if window.len() <= dwell_steps {
                vec![false; robot_count]
            } else {
                let past = &window[window.len() - 1 - dwell_steps];
                latest
                    .iter()
                    .zip(past)
                    .map(|(now, then)| {
                        (now.position - then.position).norm() < thresholds.displacement
                            && now.goal_distance > thresholds.goal_tolerance
                    })
                    .collect()
            }
        }
        DeadlockDetector::HeadingAngle => latest
            .iter()
            .map(|s| {
                s.neighbor_bearing
                    .is_some_and(|b| wrap_angle(b - s.heading).abs() < thresholds.heading_angle)
            })
            .collect(),
        DeadlockDetector::MultiplierGate => unreachable!(),
    };
    Ok(flags)
}
