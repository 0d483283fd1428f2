//! Pairwise collision-avoidance constraints.
//!
//! Every strategy produces one [`ConstraintRow`] per neighboring pair, linear
//! in the stacked wheel accelerations:
//!
//! ```text
//! coeff_i · u̇_i + coeff_j · u̇_j ≤ rhs
//! ```
//!
//! The proposed constraint keeps `h = d‖p‖/dt + κ₁(‖p‖ - d_safe)` nonnegative
//! by enforcing `ḣ + κ₂h ≥ 0`. The baselines are the braking-distance barrier,
//! the conservative velocity-level barrier, its approach-gated variant and an
//! adaptive safety radius. Velocity-level baselines are differentiated once and
//! wrapped with the same `κ₂` so every strategy runs through one solver.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoattError};
use crate::kinematics::{jacobian, RobotParams, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyGains {
    /// Rate at which `‖p_ij‖` may approach `d_safe`, 1/s.
    pub kappa_distance: f64,
    /// Rate at which the barrier `h_ij` may approach zero, 1/s.
    pub kappa_barrier: f64,
    /// Gain of the velocity-level baselines, 1/s.
    pub velocity_gain: f64,
    /// Slope of the adaptive radius in `p_ijᵀ v_ij`, s/m².
    pub adaptive_rate: f64,
    /// Offset of the adaptive radius arctangent.
    pub adaptive_offset: f64,
    /// Minimum allowed center distance for the pair, meters.
    pub d_safe: f64,
    /// Sensing range, meters.
    pub sensing_range: f64,
}

impl Default for SafetyGains {
    fn default() -> Self {
        SafetyGains {
            kappa_distance: 1.0,
            kappa_barrier: 2.0,
            velocity_gain: 1.0,
            adaptive_rate: 1.0,
            adaptive_offset: 0.0,
            d_safe: 0.96,
            sensing_range: 2.88,
        }
    }
}

impl SafetyGains {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("kappa_distance", self.kappa_distance),
            ("kappa_barrier", self.kappa_barrier),
            ("velocity_gain", self.velocity_gain),
            ("adaptive_rate", self.adaptive_rate),
            ("d_safe", self.d_safe),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(SoattError::InvalidParams(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !self.adaptive_offset.is_finite() {
            return Err(SoattError::InvalidParams(
                "adaptive_offset must be finite".into(),
            ));
        }
        if !(self.sensing_range > self.d_safe) {
            return Err(SoattError::InvalidParams(format!(
                "sensing_range {} must exceed d_safe {}",
                self.sensing_range, self.d_safe
            )));
        }
        Ok(())
    }

    pub fn with_d_safe(&self, d_safe: f64) -> Self {
        SafetyGains { d_safe, ..*self }
    }
}

/// Collision-avoidance strategy selected in the scenario config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaStrategy {
    Proposed,
    Braking,
    VelocityConservative,
    VelocityGated,
    AdaptiveRadius,
}

impl CaStrategy {
    pub const ALL: [CaStrategy; 5] = [
        CaStrategy::Proposed,
        CaStrategy::Braking,
        CaStrategy::VelocityConservative,
        CaStrategy::VelocityGated,
        CaStrategy::AdaptiveRadius,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaStrategy::Proposed => "proposed",
            CaStrategy::Braking => "braking",
            CaStrategy::VelocityConservative => "velocity_conservative",
            CaStrategy::VelocityGated => "velocity_gated",
            CaStrategy::AdaptiveRadius => "adaptive_radius",
        }
    }
}

impl std::str::FromStr for CaStrategy {
    type Err = SoattError;

    fn from_str(s: &str) -> Result<Self> {
        CaStrategy::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                SoattError::config("strategy.collision", format!("unknown strategy {s:?}"))
            })
    }
}

/// Relative motion of a pair, `p_ij = p_i - p_j` and `v_ij = v_i - v_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    pub rel_position: Vector2<f64>,
    pub rel_velocity: Vector2<f64>,
    pub i: usize,
    pub j: usize,
}

impl PairState {
    pub fn new(i: usize, j: usize, rel_position: Vector2<f64>, rel_velocity: Vector2<f64>) -> Self {
        PairState {
            rel_position,
            rel_velocity,
            i,
            j,
        }
    }

    /// `‖p_ij‖`, rejecting coincident centers.
    pub fn distance(&self) -> Result<f64> {
        let n = self.rel_position.norm();
        if n > 0.0 && n.is_finite() {
            Ok(n)
        } else {
            Err(SoattError::DegenerateGeometry {
                i: self.i,
                j: self.j,
            })
        }
    }

    /// `p_ijᵀ v_ij`; negative while the pair closes in.
    pub fn closing(&self) -> f64 {
        self.rel_position.dot(&self.rel_velocity)
    }

    /// Normal component of the relative velocity, `d‖p_ij‖/dt`.
    pub fn range_rate(&self) -> Result<f64> {
        Ok(self.closing() / self.distance()?)
    }
}

/// Everything a constraint builder needs about a pair: relative motion plus
/// each side's Jacobian and drift `Ȧu`. A static obstacle has a zero Jacobian
/// and zero drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairContext {
    pub pair: PairState,
    pub jacobian_i: Matrix2<f64>,
    pub jacobian_j: Matrix2<f64>,
    pub drift_i: Vector2<f64>,
    pub drift_j: Vector2<f64>,
}

impl PairContext {
    pub fn between_robots(
        i: usize,
        j: usize,
        state_i: &RobotState,
        params_i: &RobotParams,
        state_j: &RobotState,
        params_j: &RobotParams,
    ) -> Self {
        let jacobian_i = jacobian(state_i.heading, params_i);
        let jacobian_j = jacobian(state_j.heading, params_j);
        let rel_velocity =
            jacobian_i * state_i.wheel_velocities - jacobian_j * state_j.wheel_velocities;
        PairContext {
            pair: PairState::new(i, j, state_i.position - state_j.position, rel_velocity),
            jacobian_i,
            jacobian_j,
            drift_i: state_i.drift(params_i),
            drift_j: state_j.drift(params_j),
        }
    }

    pub fn with_obstacle(
        i: usize,
        j: usize,
        state_i: &RobotState,
        params_i: &RobotParams,
        obstacle_center: Vector2<f64>,
    ) -> Self {
        let jacobian_i = jacobian(state_i.heading, params_i);
        PairContext {
            pair: PairState::new(
                i,
                j,
                state_i.position - obstacle_center,
                jacobian_i * state_i.wheel_velocities,
            ),
            jacobian_i,
            jacobian_j: Matrix2::zeros(),
            drift_i: state_i.drift(params_i),
            drift_j: Vector2::zeros(),
        }
    }

    /// The same pair seen from the other side.
    pub fn swapped(&self) -> Self {
        PairContext {
            pair: PairState::new(
                self.pair.j,
                self.pair.i,
                -self.pair.rel_position,
                -self.pair.rel_velocity,
            ),
            jacobian_i: self.jacobian_j,
            jacobian_j: self.jacobian_i,
            drift_i: self.drift_j,
            drift_j: self.drift_i,
        }
    }

    /// `p_ijᵀ (Ȧ_i u_i - Ȧ_j u_j)`.
    fn drift_projection(&self) -> f64 {
        self.pair.rel_position.dot(&(self.drift_i - self.drift_j))
    }

    /// The common left-hand side `-p_ijᵀ (A_i u̇_i - A_j u̇_j)`.
    fn row(&self, rhs: f64) -> ConstraintRow {
        let p = self.pair.rel_position;
        ConstraintRow {
            coeff_i: -(self.jacobian_i.transpose() * p),
            coeff_j: self.jacobian_j.transpose() * p,
            rhs,
            pair: (self.pair.i, self.pair.j),
        }
    }
}

/// One pairwise inequality `coeff_i·u̇_i + coeff_j·u̇_j ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub coeff_i: Vector2<f64>,
    pub coeff_j: Vector2<f64>,
    pub rhs: f64,
    pub pair: (usize, usize),
}

impl ConstraintRow {
    pub fn scaled(&self, factor: f64) -> Self {
        ConstraintRow {
            coeff_i: self.coeff_i * factor,
            coeff_j: self.coeff_j * factor,
            rhs: self.rhs * factor,
            pair: self.pair,
        }
    }

    /// `rhs - lhs`; nonnegative when the inequality holds.
    pub fn slack(&self, accel_i: &Vector2<f64>, accel_j: &Vector2<f64>) -> f64 {
        self.rhs - self.coeff_i.dot(accel_i) - self.coeff_j.dot(accel_j)
    }

    pub fn is_finite(&self) -> bool {
        self.coeff_i
            .iter()
            .chain(self.coeff_j.iter())
            .all(|v| v.is_finite())
            && self.rhs.is_finite()
    }
}

/// Barrier of the proposed constraint, `h = d‖p‖/dt + κ₁(‖p‖ - d_safe)`.
pub fn h_proposed(pair: &PairState, gains: &SafetyGains) -> Result<f64> {
    let n = pair.distance()?;
    Ok(pair.closing() / n + gains.kappa_distance * (n - gains.d_safe))
}

/// Row enforcing `ḣ + κ₂h ≥ 0` for [`h_proposed`], scaled by `‖p_ij‖`.
pub fn build_constraint_proposed(ctx: &PairContext, gains: &SafetyGains) -> Result<ConstraintRow> {
    let pair = &ctx.pair;
    let n = pair.distance()?;
    let closing = pair.closing();
    let (k1, k2) = (gains.kappa_distance, gains.kappa_barrier);
    let rhs = -closing * closing / (n * n)
        + pair.rel_velocity.norm_squared()
        + (k1 + k2) * closing
        + k1 * k2 * n * (n - gains.d_safe)
        + ctx.drift_projection();
    Ok(ctx.row(rhs))
}

/// Distance needed to cancel the current approach speed at the combined
/// maximum deceleration.
pub fn braking_distance(pair: &PairState, accel_sum: f64) -> Result<f64> {
    let rate = pair.range_rate()?;
    Ok(rate * rate / (2.0 * accel_sum))
}

/// Braking-distance barrier `h = √(2(a_i⁺ + a_j⁺)(‖p‖ - d_safe)) + d‖p‖/dt`.
/// The radicand is clamped at zero once the pair is inside `d_safe`.
pub fn h_braking(pair: &PairState, accel_sum: f64, gains: &SafetyGains) -> Result<f64> {
    let n = pair.distance()?;
    let margin = (n - gains.d_safe).max(0.0);
    Ok((2.0 * accel_sum * margin).sqrt() + pair.closing() / n)
}

/// Row enforcing `ḣ + κ₂h ≥ 0` for [`h_braking`], scaled by `‖p_ij‖`.
///
/// `accel_sum` is `a_i⁺ + a_j⁺`.
pub fn build_constraint_braking(
    ctx: &PairContext,
    accel_sum: f64,
    gains: &SafetyGains,
) -> Result<ConstraintRow> {
    let pair = &ctx.pair;
    let n = pair.distance()?;
    let closing = pair.closing();
    let range_rate = closing / n;
    let margin = n - gains.d_safe;
    // d/dt √(2a·s) = a·ṡ/√(2a·s); dropped when the radicand is clamped.
    let root_rate = if margin > 0.0 {
        accel_sum * range_rate / (2.0 * accel_sum * margin).sqrt()
    } else {
        0.0
    };
    let h = h_braking(pair, accel_sum, gains)?;
    let rhs = pair.rel_velocity.norm_squared() + ctx.drift_projection()
        - closing * closing / (n * n)
        + n * (root_rate + gains.kappa_barrier * h);
    Ok(ctx.row(rhs))
}

/// The velocity-level inequality `-2 p_ijᵀ v_ij ≤ ς(‖p_ij‖² - d_safe²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityInequality {
    pub lhs: f64,
    pub rhs: f64,
}

impl VelocityInequality {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn is_satisfied(&self) -> bool {
        self.lhs <= self.rhs
    }
}

pub fn velocity_inequality(pair: &PairState, gains: &SafetyGains) -> Result<VelocityInequality> {
    let n = pair.distance()?;
    Ok(VelocityInequality {
        lhs: -2.0 * pair.closing(),
        rhs: gains.velocity_gain * (n * n - gains.d_safe * gains.d_safe),
    })
}

/// Conservative velocity-level baseline lifted to acceleration level.
///
/// With `g = ς(‖p‖² - d²) + 2pᵀv`, the row enforces `ġ + κ₂g ≥ 0`, halved so
/// its left-hand side matches the other strategies.
pub fn build_constraint_velocity_conservative(
    ctx: &PairContext,
    gains: &SafetyGains,
) -> Result<ConstraintRow> {
    let pair = &ctx.pair;
    let barrier = velocity_inequality(pair, gains)?.slack();
    let rhs = gains.velocity_gain * pair.closing()
        + pair.rel_velocity.norm_squared()
        + ctx.drift_projection()
        + 0.5 * gains.kappa_barrier * barrier;
    Ok(ctx.row(rhs))
}

/// Approach gate: 1 when the pair closes in while already inside `d_safe`.
pub fn beta_gate(pair: &PairState, gains: &SafetyGains) -> u8 {
    let n = pair.rel_position.norm();
    u8::from(pair.closing() < 0.0 && n < gains.d_safe)
}

/// Gated velocity baseline: the conservative row multiplied by the approach gate.
pub fn build_constraint_velocity_gated(
    ctx: &PairContext,
    gains: &SafetyGains,
) -> Result<ConstraintRow> {
    let row = build_constraint_velocity_conservative(ctx, gains)?;
    Ok(row.scaled(f64::from(beta_gate(&ctx.pair, gains))))
}

/// Adaptive safety radius, strictly between `r = r_i + r_j` and the sensing range.
pub fn adaptive_d_safe(pair: &PairState, radius_sum: f64, gains: &SafetyGains) -> f64 {
    let range = gains.sensing_range;
    let arg = -gains.adaptive_rate * pair.closing() + gains.adaptive_offset;
    (range + radius_sum) / 2.0 + (range - radius_sum) / PI * arg.atan()
}

/// Conservative velocity baseline evaluated with the adaptive radius.
pub fn build_constraint_adaptive(
    ctx: &PairContext,
    radius_sum: f64,
    gains: &SafetyGains,
) -> Result<ConstraintRow> {
    ctx.pair.distance()?;
    let adapted = gains.with_d_safe(adaptive_d_safe(&ctx.pair, radius_sum, gains));
    build_constraint_velocity_conservative(ctx, &adapted)
}

/// Per-pair quantities the dispatcher needs beyond the gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLimits {
    /// `a_i⁺ + a_j⁺`, braking baseline only.
    pub accel_sum: f64,
    /// `r_i + r_j`, adaptive radius only.
    pub radius_sum: f64,
}

pub fn build_constraint(
    strategy: CaStrategy,
    ctx: &PairContext,
    limits: &PairLimits,
    gains: &SafetyGains,
) -> Result<ConstraintRow> {
    let row = match strategy {
        CaStrategy::Proposed => build_constraint_proposed(ctx, gains),
        CaStrategy::Braking => build_constraint_braking(ctx, limits.accel_sum, gains),
        CaStrategy::VelocityConservative => build_constraint_velocity_conservative(ctx, gains),
        CaStrategy::VelocityGated => build_constraint_velocity_gated(ctx, gains),
        CaStrategy::AdaptiveRadius => build_constraint_adaptive(ctx, limits.radius_sum, gains),
    }?;
    if !row.is_finite() {
        return Err(SoattError::NonFinite {
            what: format!("{} constraint for pair {:?}", strategy.name(), row.pair),
        });
    }
    Ok(row)
}
