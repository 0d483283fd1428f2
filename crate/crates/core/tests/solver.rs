mod common;

use common::{converged_solver, max_abs_diff, random_qp};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use soatt::solver::{ode_step, projection_box, reference_qp_solve, solve_with, SolverState};

#[test]
fn converged_dynamics_match_the_oracle() {
    let mut rng = StdRng::seed_from_u64(7);
    for case in 0..40 {
        let robots = 1 + case % 3;
        let rows = case % 4;
        let qp = random_qp(&mut rng, robots, rows);
        let exact = reference_qp_solve(&qp).unwrap();
        let out = solve_with(
            &SolverState::zeros(qp.num_vars(), rows),
            &qp,
            &converged_solver(1e-10),
        )
        .unwrap();
        assert!(out.converged, "case {case}: residual {}", out.residual);
        let gap = max_abs_diff(&out.state.accel, &exact);
        assert!(gap < 1e-4, "case {case}: ‖Δu̇‖∞ = {gap:.3e}");
    }
}

#[test]
fn oracle_beats_feasible_samples() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..10 {
        let qp = random_qp(&mut rng, 2, 2);
        let exact = reference_qp_solve(&qp).unwrap();
        let best = qp.objective(&exact);
        assert!(qp.max_violation(&exact) < 1e-9);
        let mut checked = 0;
        while checked < 1000 {
            let x: Vec<f64> = (0..4)
                .map(|k| rng.gen_range(qp.lower[k]..qp.upper[k]))
                .collect();
            if qp.max_violation(&x) <= 0.0 {
                assert!(best <= qp.objective(&x) + 1e-12);
                checked += 1;
            }
        }
    }
}

#[test]
fn oracle_solution_satisfies_kkt() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..50 {
        let qp = random_qp(&mut rng, 3, 3);
        let x = reference_qp_solve(&qp).unwrap();
        // A projected-gradient step with the optimal multipliers is a fixed
        // point; recover them from the converged dynamics.
        let out = solve_with(&SolverState::zeros(6, 3), &qp, &converged_solver(1e-12)).unwrap();
        let (grad, _) = qp.gradient_map(&x, &out.state.multipliers);
        for k in 0..6 {
            let at_lower = (x[k] - qp.lower[k]).abs() < 1e-7;
            let at_upper = (x[k] - qp.upper[k]).abs() < 1e-7;
            if !at_lower && !at_upper {
                assert!(grad[k].abs() < 1e-5, "stationarity {k}: {}", grad[k]);
            } else if at_lower {
                assert!(grad[k] > -1e-5);
            } else {
                assert!(grad[k] < 1e-5);
            }
        }
        for (r, res) in qp.constraint_residuals(&x).iter().enumerate() {
            assert!(*res < 1e-9);
            assert!(out.state.multipliers[r] >= 0.0);
            assert!(
                (out.state.multipliers[r] * res).abs() < 1e-5,
                "complementarity row {r}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent(x in prop::collection::vec(-10.0f64..10.0, 1..8), half in 0.1f64..5.0) {
        let lo = vec![-half; x.len()];
        let hi = vec![half; x.len()];
        let once = projection_box(&x, &lo, &hi);
        prop_assert_eq!(projection_box(&once, &lo, &hi), once.clone());
        prop_assert!(once.iter().all(|v| (-half..=half).contains(v)));
    }

    #[test]
    fn multipliers_stay_nonnegative(seed in 0u64..10_000, steps in 1usize..50) {
        let mut rng = StdRng::seed_from_u64(seed);
        let qp = random_qp(&mut rng, 2, 3);
        let mut state = SolverState {
            accel: (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            multipliers: (0..3).map(|_| rng.gen_range(0.0..5.0)).collect(),
        };
        for _ in 0..steps {
            state = ode_step(&state, &qp, 0.005, 0.005).unwrap();
            prop_assert!(state.multipliers.iter().all(|&m| m >= 0.0));
        }
    }

    /// (H(χ₁) − H(χ₂))·(χ₁ − χ₂) ≥ 0 for the KKT map.
    #[test]
    fn gradient_map_is_monotone(seed in 0u64..10_000) {
        let mut rng = StdRng::seed_from_u64(seed);
        let qp = random_qp(&mut rng, 3, 3);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect() };
        let (u1, e1, u2, e2) = (draw(6), draw(3), draw(6), draw(3));
        let (p1, d1) = qp.gradient_map(&u1, &e1);
        let (p2, d2) = qp.gradient_map(&u2, &e2);
        let inner: f64 = (0..6).map(|k| (p1[k] - p2[k]) * (u1[k] - u2[k])).sum::<f64>()
            + (0..3).map(|r| (d1[r] - d2[r]) * (e1[r] - e2[r])).sum::<f64>();
        prop_assert!(inner >= -1e-9, "inner product {}", inner);
    }
}
