//! Shared generators and oracles for integration tests.
#![allow(dead_code)]

pub mod flow;

use nalgebra::{Matrix2, Vector2};
use rand::rngs::StdRng;
use rand::Rng;

use soatt::solver::{QpProblem, QpRow, SolverConfig};

/// Random strictly feasible QP with `robots` blocks and `rows` inequality rows.
///
/// Blocks are rotations times diagonal scalings in [0.3, 2], so the objective
/// is strictly convex. Every row is satisfied with slack in [0, 0.5] at a
/// point drawn inside the box, which keeps the problem feasible.
pub fn random_qp(rng: &mut StdRng, robots: usize, rows: usize) -> QpProblem {
    let blocks: Vec<Matrix2<f64>> = (0..robots)
        .map(|_| {
            let (s, c) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();
            Matrix2::new(c, -s, s, c)
                * Matrix2::new(rng.gen_range(0.3..2.0), 0.0, 0.0, rng.gen_range(0.3..2.0))
        })
        .collect();
    let n = 2 * robots;
    let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..-1.0)).collect();
    let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..4.0)).collect();
    let anchor: Vec<f64> = (0..n)
        .map(|k| rng.gen_range(0.8 * lower[k]..0.8 * upper[k]))
        .collect();

    let mut qp_rows = Vec::with_capacity(rows);
    for slot in 0..rows {
        let i = rng.gen_range(0..robots);
        let j = if robots > 1 && rng.gen_bool(0.7) {
            let mut j = rng.gen_range(0..robots - 1);
            if j >= i {
                j += 1;
            }
            Some(j)
        } else {
            None
        };
        let mut coeff = || Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let coeff_i = coeff();
        let coeff_j = if j.is_some() {
            coeff()
        } else {
            Vector2::zeros()
        };
        let mut value = coeff_i.x * anchor[2 * i] + coeff_i.y * anchor[2 * i + 1];
        if let Some(j) = j {
            value += coeff_j.x * anchor[2 * j] + coeff_j.y * anchor[2 * j + 1];
        }
        qp_rows.push(QpRow {
            robot_i: i,
            coeff_i,
            robot_j: j,
            coeff_j,
            rhs: value + rng.gen_range(0.0..0.5),
            slot,
        });
    }
    QpProblem::new(blocks, target, qp_rows, lower, upper).unwrap()
}

/// Settings that drive the projection dynamics to a tight fixed point.
pub fn converged_solver(tol: f64) -> SolverConfig {
    SolverConfig {
        epsilon: 0.005,
        inner_dt: Some(0.00125),
        inner_iterations: 2_000_000,
        inner_tol: tol,
        warm_start: false,
        precondition: true,
        divergence_floor: 1e3,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

use soatt::kinematics::RobotState;
use soatt::simulator::{SimTrace, TraceStep};
use soatt::trajectory::ReferencePoint;

/// A trace built directly from positions: `frames[0]` is the initial state
/// and each later frame one recorded step. References sit at the origin.
pub fn synthetic_trace(frames: &[Vec<Vector2<f64>>], dt: f64, d_safe: f64) -> SimTrace {
    let n = frames[0].len();
    let states = |frame: &Vec<Vector2<f64>>| {
        frame
            .iter()
            .map(|p| RobotState::at_rest(*p, 0.0))
            .collect::<Vec<_>>()
    };
    let origin = vec![ReferencePoint::stationary(Vector2::zeros()); n];
    SimTrace {
        dt,
        robot_count: n,
        obstacles: Vec::new(),
        d_safe,
        robot_radii: vec![d_safe / 2.0; n],
        initial: states(&frames[0]),
        initial_references: origin.clone(),
        steps: frames[1..]
            .iter()
            .enumerate()
            .map(|(k, frame)| TraceStep {
                step: k + 1,
                time: (k + 1) as f64 * dt,
                states: states(frame),
                references: origin.clone(),
                multipliers: Vec::new(),
                zeta_active: vec![false; n],
                ca_active: vec![false; n],
            })
            .collect(),
        feasibility_events: Vec::new(),
    }
}
