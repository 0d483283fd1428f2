//! Differential-drive robot model with an offset control point.
//!
//! The control point sits a distance `offset` ahead of the axle center, which
//! makes the map from wheel velocities to control-point velocity invertible:
//! `ṗ = A(θ)·u` with `A(θ) = P(θ)·T`, where
//!
//! ```text
//! P(θ) = [[cos θ, -d sin θ], [sin θ, d cos θ]]
//! T    = (r_w / 2) [[1, 1], [1/b, -1/b]]
//! ```
//!
//! Differentiating once more gives `v̇ = Ȧ(θ, θ̇)·u + A(θ)·u̇`, so the wheel
//! accelerations enter the point acceleration affinely.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoattError};

/// Geometry and actuation limits of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    /// Wheel radius in meters.
    pub wheel_radius: f64,
    /// Half of the distance between the two wheels, meters.
    pub half_axle: f64,
    /// Distance of the control point ahead of the axle center, meters.
    pub offset: f64,
    /// Radius of the smallest disk enclosing the robot, meters.
    pub enclosing_radius: f64,
    /// Upper wheel acceleration bound per wheel, rad/s².
    pub max_wheel_accel: [f64; 2],
    /// Lower wheel acceleration bound per wheel, rad/s².
    pub min_wheel_accel: [f64; 2],
    /// Maximum control-point acceleration, m/s². Only the braking-distance
    /// baseline reads this.
    pub max_point_accel: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            wheel_radius: 0.066,
            half_axle: 0.08,
            offset: 0.1,
            enclosing_radius: 0.48,
            max_wheel_accel: [60.0, 60.0],
            min_wheel_accel: [-60.0, -60.0],
            max_point_accel: 2.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wheel_radius", self.wheel_radius),
            ("half_axle", self.half_axle),
            ("offset", self.offset),
            ("enclosing_radius", self.enclosing_radius),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SoattError::InvalidParams(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        for k in 0..2 {
            let (lo, hi) = (self.min_wheel_accel[k], self.max_wheel_accel[k]);
            if !(lo.is_finite() && hi.is_finite() && lo < 0.0 && 0.0 < hi) {
                return Err(SoattError::InvalidParams(format!(
                    "wheel {k} acceleration bounds must satisfy min < 0 < max, got [{lo}, {hi}]"
                )));
            }
        }
        if !(self.max_point_accel.is_finite() && self.max_point_accel > 0.0) {
            return Err(SoattError::InvalidParams(format!(
                "max_point_accel must be positive, got {}",
                self.max_point_accel
            )));
        }
        Ok(())
    }

    pub fn accel_lower(&self) -> Vector2<f64> {
        Vector2::from(self.min_wheel_accel)
    }

    pub fn accel_upper(&self) -> Vector2<f64> {
        Vector2::from(self.max_wheel_accel)
    }

    /// Wheel-velocity to body-twist map `T`: `(v, ω) = T·u`.
    pub fn twist_map(&self) -> Matrix2<f64> {
        let k = self.wheel_radius / 2.0;
        let inv_b = 1.0 / self.half_axle;
        Matrix2::new(k, k, k * inv_b, -k * inv_b)
    }

    /// Angular rate produced by the given wheel velocities.
    pub fn yaw_rate(&self, wheel_velocities: &Vector2<f64>) -> f64 {
        self.wheel_radius / (2.0 * self.half_axle) * (wheel_velocities.x - wheel_velocities.y)
    }

    /// `|det A(θ)|`, which does not depend on the heading.
    pub fn jacobian_abs_det(&self) -> f64 {
        self.offset * self.wheel_radius * self.wheel_radius / (2.0 * self.half_axle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Control-point position, meters.
    pub position: Vector2<f64>,
    pub heading: f64,
    /// Wheel angular velocities, rad/s.
    pub wheel_velocities: Vector2<f64>,
    /// Wheel angular accelerations applied over the last step, rad/s².
    pub wheel_accelerations: Vector2<f64>,
}

impl RobotState {
    pub fn at_rest(position: Vector2<f64>, heading: f64) -> Self {
        RobotState {
            position,
            heading,
            wheel_velocities: Vector2::zeros(),
            wheel_accelerations: Vector2::zeros(),
        }
    }

    /// Control-point velocity `A(θ)·u`.
    pub fn velocity(&self, params: &RobotParams) -> Vector2<f64> {
        jacobian(self.heading, params) * self.wheel_velocities
    }

    /// The drift term `Ȧ(θ, θ̇)·u` of the point acceleration.
    pub fn drift(&self, params: &RobotParams) -> Vector2<f64> {
        let yaw_rate = params.yaw_rate(&self.wheel_velocities);
        jacobian_dot(self.heading, yaw_rate, params) * self.wheel_velocities
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.heading.is_finite()
            && self.wheel_velocities.iter().all(|v| v.is_finite())
            && self.wheel_accelerations.iter().all(|v| v.is_finite())
    }
}

fn heading_frame(theta: f64, offset: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -offset * s, s, offset * c)
}

fn heading_frame_derivative(theta: f64, offset: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, -offset * c, c, -offset * s)
}

/// Jacobian `A(θ)` mapping wheel velocities to control-point velocity.
pub fn jacobian(theta: f64, params: &RobotParams) -> Matrix2<f64> {
    heading_frame(theta, params.offset) * params.twist_map()
}

/// Time derivative of `A(θ)` along a rotation at rate `theta_dot`.
pub fn jacobian_dot(theta: f64, theta_dot: f64, params: &RobotParams) -> Matrix2<f64> {
    heading_frame_derivative(theta, params.offset) * params.twist_map() * theta_dot
}

/// Advances one robot by `dt` with semi-implicit Euler.
///
/// Wheel velocities are updated first; heading and position then use the
/// new wheel velocities together with the heading at the start of the step.
pub fn step_state(
    state: &RobotState,
    wheel_accel: Vector2<f64>,
    dt: f64,
    params: &RobotParams,
) -> Result<RobotState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SoattError::InvalidParams(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !state.is_finite() {
        return Err(SoattError::NonFinite {
            what: "robot state".to_owned(),
        });
    }
    if !wheel_accel.iter().all(|v| v.is_finite()) {
        return Err(SoattError::NonFinite {
            what: "wheel acceleration command".to_owned(),
        });
    }

    let wheel_velocities = state.wheel_velocities + wheel_accel * dt;
    let yaw_rate = params.yaw_rate(&wheel_velocities);
    let velocity = jacobian(state.heading, params) * wheel_velocities;
    let next = RobotState {
        position: state.position + velocity * dt,
        heading: state.heading + yaw_rate * dt,
        wheel_velocities,
        wheel_accelerations: wheel_accel,
    };
    if !next.is_finite() {
        return Err(SoattError::NonFinite {
            what: "integrated robot state".to_owned(),
        });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    fn example_params() -> RobotParams {
        RobotParams {
            wheel_radius: 0.066,
            half_axle: 0.08,
            offset: 0.1,
            ..RobotParams::default()
        }
    }

    #[test]
    fn jacobian_at_zero_heading() {
        let a = jacobian(0.0, &example_params());
        assert_relative_eq!(
            a,
            Matrix2::new(0.033, 0.033, 0.04125, -0.04125),
            epsilon = 1e-15
        );
    }

    #[test]
    fn jacobian_at_quarter_turn_matches_hand_product() {
        // P(π/4) = (√2/2)[[1, -0.1], [1, 0.1]], T = [[0.033, 0.033], [0.4125, -0.4125]].
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = Matrix2::new(
            h * (0.033 - 0.04125),
            h * (0.033 + 0.04125),
            h * (0.033 + 0.04125),
            h * (0.033 - 0.04125),
        );
        assert_relative_eq!(
            jacobian(FRAC_PI_4, &example_params()),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn determinant_is_heading_independent() {
        let params = example_params();
        let expected = 0.1 * 0.066 * 0.066 / 0.16;
        for k in 0..16 {
            let theta = -3.0 + 0.4 * k as f64;
            assert_relative_eq!(
                jacobian(theta, &params).determinant().abs(),
                expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn jacobian_dot_closed_forms() {
        let params = example_params();
        assert_eq!(jacobian_dot(0.7, 0.0, &params), Matrix2::zeros());
        let expected = Matrix2::new(0.0, -0.1, 1.0, 0.0) * params.twist_map();
        assert_relative_eq!(jacobian_dot(0.0, 1.0, &params), expected, epsilon = 1e-15);
    }

    #[test]
    fn rest_stays_at_rest() {
        let params = example_params();
        let state = RobotState::at_rest(Vector2::new(1.0, -2.0), 0.3);
        let next = step_state(&state, Vector2::zeros(), 0.005, &params).unwrap();
        assert_eq!(next.position, state.position);
        assert_eq!(next.heading, state.heading);
    }

    #[test]
    fn equal_wheels_drive_straight() {
        let params = example_params();
        let mut state = RobotState::at_rest(Vector2::zeros(), 0.5);
        state.wheel_velocities = Vector2::new(2.0, 2.0);
        let next = step_state(&state, Vector2::zeros(), 0.01, &params).unwrap();
        assert_eq!(next.heading, 0.5);
        let step = params.wheel_radius * 2.0 * 0.01;
        assert_relative_eq!(
            next.position,
            Vector2::new(0.5f64.cos(), 0.5f64.sin()) * step,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = example_params();
        let state = RobotState::at_rest(Vector2::zeros(), 0.0);
        assert!(step_state(&state, Vector2::zeros(), 0.0, &params).is_err());
        assert!(step_state(&state, Vector2::new(f64::NAN, 0.0), 0.01, &params).is_err());
        let mut bad = state;
        bad.heading = f64::INFINITY;
        assert!(step_state(&bad, Vector2::zeros(), 0.01, &params).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(example_params().validate().is_ok());
        let mut p = example_params();
        p.offset = 0.0;
        assert!(p.validate().is_err());
        let mut p = example_params();
        p.min_wheel_accel = [1.0, -1.0];
        assert!(p.validate().is_err());
    }
}
