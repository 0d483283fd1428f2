//! Independent continuous-time oracle: RK4 flow of the unicycle-with-offset
//! kinematics and barrier values written out from their definitions.

use nalgebra::Vector2;

use soatt::kinematics::{RobotParams, RobotState};
use soatt::safety::{
    build_constraint, CaStrategy, ConstraintRow, PairContext, PairLimits, SafetyGains,
};

/// Continuous-time robot state integrated independently of the crate.
#[derive(Debug, Clone, Copy)]
pub struct Exact {
    pub p: [f64; 2],
    pub theta: f64,
    pub u: [f64; 2],
}

pub fn point_velocity(params: &RobotParams, theta: f64, u: [f64; 2]) -> [f64; 2] {
    let forward = params.wheel_radius / 2.0 * (u[0] + u[1]);
    let omega = params.wheel_radius / (2.0 * params.half_axle) * (u[0] - u[1]);
    let (s, c) = theta.sin_cos();
    [
        c * forward - params.offset * s * omega,
        s * forward + params.offset * c * omega,
    ]
}

fn derivative(params: &RobotParams, x: &Exact, accel: [f64; 2]) -> Exact {
    let omega = params.wheel_radius / (2.0 * params.half_axle) * (x.u[0] - x.u[1]);
    Exact {
        p: point_velocity(params, x.theta, x.u),
        theta: omega,
        u: accel,
    }
}

fn axpy(x: &Exact, k: &Exact, h: f64) -> Exact {
    Exact {
        p: [x.p[0] + h * k.p[0], x.p[1] + h * k.p[1]],
        theta: x.theta + h * k.theta,
        u: [x.u[0] + h * k.u[0], x.u[1] + h * k.u[1]],
    }
}

/// RK4 flow of the continuous kinematics with constant wheel acceleration.
pub fn flow(params: &RobotParams, x: &Exact, accel: [f64; 2], t: f64) -> Exact {
    let steps = 8;
    let h = t / steps as f64;
    let mut s = *x;
    for _ in 0..steps {
        let k1 = derivative(params, &s, accel);
        let k2 = derivative(params, &axpy(&s, &k1, h / 2.0), accel);
        let k3 = derivative(params, &axpy(&s, &k2, h / 2.0), accel);
        let k4 = derivative(params, &axpy(&s, &k3, h), accel);
        for (idx, slot) in s.p.iter_mut().enumerate() {
            *slot += h / 6.0 * (k1.p[idx] + 2.0 * k2.p[idx] + 2.0 * k3.p[idx] + k4.p[idx]);
        }
        s.theta += h / 6.0 * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta);
        for (idx, slot) in s.u.iter_mut().enumerate() {
            *slot += h / 6.0 * (k1.u[idx] + 2.0 * k2.u[idx] + 2.0 * k3.u[idx] + k4.u[idx]);
        }
    }
    s
}

pub fn relative(params: &RobotParams, a: &Exact, b: &Exact) -> (Vector2<f64>, Vector2<f64>) {
    let va = point_velocity(params, a.theta, a.u);
    let vb = point_velocity(params, b.theta, b.u);
    (
        Vector2::new(a.p[0] - b.p[0], a.p[1] - b.p[1]),
        Vector2::new(va[0] - vb[0], va[1] - vb[1]),
    )
}

/// Barrier values written out directly from their definitions.
pub fn barrier(
    strategy: CaStrategy,
    p: Vector2<f64>,
    v: Vector2<f64>,
    gains: &SafetyGains,
    accel_sum: f64,
) -> f64 {
    let n = p.norm();
    match strategy {
        CaStrategy::Proposed => p.dot(&v) / n + gains.kappa_distance * (n - gains.d_safe),
        CaStrategy::Braking => (2.0 * accel_sum * (n - gains.d_safe)).sqrt() + p.dot(&v) / n,
        CaStrategy::VelocityConservative => {
            gains.velocity_gain * (n * n - gains.d_safe * gains.d_safe) + 2.0 * p.dot(&v)
        }
        _ => unreachable!(),
    }
}

/// What the row's slack must equal: `n(ḣ + κ₂h)` for the position-level
/// barriers and `(ġ + κ₂g)/2` for the velocity-level one.
pub fn expected_slack(strategy: CaStrategy, rate: f64, value: f64, n: f64, k2: f64) -> f64 {
    match strategy {
        CaStrategy::VelocityConservative => 0.5 * (rate + k2 * value),
        _ => n * (rate + k2 * value),
    }
}

pub fn robot_state(x: &Exact) -> RobotState {
    RobotState {
        position: Vector2::new(x.p[0], x.p[1]),
        heading: x.theta,
        wheel_velocities: Vector2::new(x.u[0], x.u[1]),
        wheel_accelerations: Vector2::zeros(),
    }
}

/// Row slack at the given accelerations and the value it must equal, from a
/// central finite difference of the barrier along the exact flow.
#[allow(clippy::too_many_arguments)]
pub fn row_vs_flow(
    strategy: CaStrategy,
    params: &RobotParams,
    a: &Exact,
    b: &Exact,
    accel_a: [f64; 2],
    accel_b: [f64; 2],
    gains: &SafetyGains,
    accel_sum: f64,
) -> (f64, f64) {
    let ctx = PairContext::between_robots(0, 1, &robot_state(a), params, &robot_state(b), params);
    let limits = PairLimits {
        accel_sum,
        radius_sum: gains.d_safe,
    };
    let row: ConstraintRow = build_constraint(strategy, &ctx, &limits, gains).unwrap();
    let slack = row.slack(&Vector2::from(accel_a), &Vector2::from(accel_b));

    let delta = 1e-5;
    let value_at = |t: f64| {
        let (p, v) = relative(
            params,
            &flow(params, a, accel_a, t),
            &flow(params, b, accel_b, t),
        );
        barrier(strategy, p, v, gains, accel_sum)
    };
    let rate = (value_at(delta) - value_at(-delta)) / (2.0 * delta);
    let (p0, v0) = relative(params, a, b);
    let value = barrier(strategy, p0, v0, gains, accel_sum);
    (
        slack,
        expected_slack(strategy, rate, value, p0.norm(), gains.kappa_barrier),
    )
}
