//! Per-step quadratic program and its projection-dynamics solver.
//!
//! The QP over the stacked wheel accelerations `u̇ ∈ R^{2N}` is
//!
//! ```text
//! minimize    ‖A_blk u̇ - dzr‖²
//! subject to  u̇⁻ ≤ u̇ ≤ u̇⁺,   B u̇ ≤ B_right
//! ```
//!
//! and is solved by integrating the primal-dual projection dynamics
//!
//! ```text
//! ε d(u̇)/dt = -u̇ + φ(u̇ - 2A_blkᵀ(A_blk u̇ - dzr) - Bᵀη)
//! ε dη/dt   = max(0, B u̇ - B_right + η) - η
//! ```
//!
//! with forward Euler, where `φ` clamps to the box. The state `(u̇, η)`
//! persists across control steps so a few iterations per step suffice.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoattError};
use crate::safety::ConstraintRow;

/// One inequality row restricted to its (at most two) nonzero blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpRow {
    pub robot_i: usize,
    pub coeff_i: Vector2<f64>,
    /// `None` when the partner is a static obstacle.
    pub robot_j: Option<usize>,
    pub coeff_j: Vector2<f64>,
    pub rhs: f64,
    /// Slot of the pair in the full multiplier vector.
    pub slot: usize,
}

impl QpRow {
    /// Converts a constraint row; partners with index `>= robot_count` are obstacles.
    pub fn from_constraint(row: &ConstraintRow, robot_count: usize, slot: usize) -> Self {
        let (i, j) = row.pair;
        QpRow {
            robot_i: i,
            coeff_i: row.coeff_i,
            robot_j: (j < robot_count).then_some(j),
            coeff_j: row.coeff_j,
            rhs: row.rhs,
            slot,
        }
    }

    fn dot(&self, x: &[f64]) -> f64 {
        let i = 2 * self.robot_i;
        let mut s = self.coeff_i.x * x[i] + self.coeff_i.y * x[i + 1];
        if let Some(j) = self.robot_j {
            s += self.coeff_j.x * x[2 * j] + self.coeff_j.y * x[2 * j + 1];
        }
        s
    }

    fn add_transpose(&self, eta: f64, out: &mut [f64]) {
        let i = 2 * self.robot_i;
        out[i] += self.coeff_i.x * eta;
        out[i + 1] += self.coeff_i.y * eta;
        if let Some(j) = self.robot_j {
            out[2 * j] += self.coeff_j.x * eta;
            out[2 * j + 1] += self.coeff_j.y * eta;
        }
    }

    fn norm(&self) -> f64 {
        let mut sq = self.coeff_i.norm_squared();
        if self.robot_j.is_some() {
            sq += self.coeff_j.norm_squared();
        }
        sq.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Diagonal blocks of `A_blk`, one per robot.
    pub blocks: Vec<Matrix2<f64>>,
    /// Stacked tracking target `dzr`.
    pub target: Vec<f64>,
    pub rows: Vec<QpRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    pub fn new(
        blocks: Vec<Matrix2<f64>>,
        target: Vec<f64>,
        rows: Vec<QpRow>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let n = 2 * blocks.len();
        if target.len() != n || lower.len() != n || upper.len() != n {
            return Err(SoattError::DimensionMismatch(format!(
                "{} robots need vectors of length {n}; got target {}, lower {}, upper {}",
                blocks.len(),
                target.len(),
                lower.len(),
                upper.len()
            )));
        }
        if let Some(k) = (0..n).find(|&k| !(lower[k] <= upper[k])) {
            return Err(SoattError::InvalidParams(format!(
                "bound {k} is unordered: [{}, {}]",
                lower[k], upper[k]
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            let bad_j = row
                .robot_j
                .is_some_and(|j| j >= blocks.len() || j == row.robot_i);
            if row.robot_i >= blocks.len() || bad_j {
                return Err(SoattError::DimensionMismatch(format!(
                    "row {r} references robots ({}, {:?}) outside 0..{}",
                    row.robot_i,
                    row.robot_j,
                    blocks.len()
                )));
            }
        }
        Ok(QpProblem {
            blocks,
            target,
            rows,
            lower,
            upper,
        })
    }

    pub fn robot_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_vars(&self) -> usize {
        2 * self.blocks.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// `A_blk x - dzr`.
    pub fn tracking_residual(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_vars()];
        for (k, a) in self.blocks.iter().enumerate() {
            let w = a * Vector2::new(x[2 * k], x[2 * k + 1]);
            out[2 * k] = w.x - self.target[2 * k];
            out[2 * k + 1] = w.y - self.target[2 * k + 1];
        }
        out
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.tracking_residual(x).iter().map(|r| r * r).sum()
    }

    /// `B x - B_right`, one entry per row.
    pub fn constraint_residuals(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.dot(x) - row.rhs).collect()
    }

    /// Largest violation of bounds or rows at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..self.num_vars())
            .map(|k| (self.lower[k] - x[k]).max(x[k] - self.upper[k]))
            .fold(0.0f64, f64::max);
        self.constraint_residuals(x)
            .into_iter()
            .fold(bounds, f64::max)
    }

    /// The monotone map `H(χ) = [2A_blkᵀ(A_blk u̇ - dzr) + Bᵀη, -B u̇ + B_right]`
    /// whose projected fixed point is the KKT point.
    pub fn gradient_map(&self, accel: &[f64], multipliers: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let residual = self.tracking_residual(accel);
        let mut primal = vec![0.0; self.num_vars()];
        for (k, a) in self.blocks.iter().enumerate() {
            let g = a.transpose() * Vector2::new(residual[2 * k], residual[2 * k + 1]) * 2.0;
            primal[2 * k] = g.x;
            primal[2 * k + 1] = g.y;
        }
        for (row, &eta) in self.rows.iter().zip(multipliers) {
            row.add_transpose(eta, &mut primal);
        }
        let dual = self
            .rows
            .iter()
            .map(|row| row.rhs - row.dot(accel))
            .collect();
        (primal, dual)
    }

    pub fn dense_constraints(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_vars();
        let mut b = DMatrix::zeros(self.rows.len(), n);
        let mut rhs = DVector::zeros(self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            b[(r, 2 * row.robot_i)] = row.coeff_i.x;
            b[(r, 2 * row.robot_i + 1)] = row.coeff_i.y;
            if let Some(j) = row.robot_j {
                b[(r, 2 * j)] = row.coeff_j.x;
                b[(r, 2 * j + 1)] = row.coeff_j.y;
            }
            rhs[r] = row.rhs;
        }
        (b, rhs)
    }

    pub fn dense_objective(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_vars();
        let mut a = DMatrix::zeros(n, n);
        for (k, block) in self.blocks.iter().enumerate() {
            a.view_mut((2 * k, 2 * k), (2, 2)).copy_from(block);
        }
        (a, DVector::from_column_slice(&self.target))
    }

    /// An equivalent problem with per-variable and per-row diagonal scaling.
    ///
    /// Variables are scaled so each diagonal entry of `2A_blkᵀA_blk` becomes
    /// one and every row is normalized to unit length. Box constraints stay
    /// boxes under diagonal scaling, so the projection is unchanged in form.
    pub fn equilibrated(&self) -> (QpProblem, Scaling) {
        let n = self.num_vars();
        let mut var = vec![1.0; n];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (k, a) in self.blocks.iter().enumerate() {
            let gram = a.transpose() * a;
            let s = Vector2::new(scale_for(2.0 * gram[(0, 0)]), scale_for(2.0 * gram[(1, 1)]));
            var[2 * k] = s.x;
            var[2 * k + 1] = s.y;
            blocks.push(a * Matrix2::from_diagonal(&s));
        }
        let lower = (0..n).map(|k| self.lower[k] / var[k]).collect();
        let upper = (0..n).map(|k| self.upper[k] / var[k]).collect();
        let mut row_scale = Vec::with_capacity(self.rows.len());
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let i = 2 * row.robot_i;
                let mut scaled = *row;
                scaled.coeff_i = row.coeff_i.component_mul(&Vector2::new(var[i], var[i + 1]));
                if let Some(j) = row.robot_j {
                    scaled.coeff_j = row
                        .coeff_j
                        .component_mul(&Vector2::new(var[2 * j], var[2 * j + 1]));
                }
                let norm = scaled.norm();
                let rho = if norm > 0.0 { 1.0 / norm } else { 1.0 };
                scaled.coeff_i *= rho;
                scaled.coeff_j *= rho;
                scaled.rhs *= rho;
                row_scale.push(rho);
                scaled
            })
            .collect();
        let problem = QpProblem {
            blocks,
            target: self.target.clone(),
            rows,
            lower,
            upper,
        };
        (
            problem,
            Scaling {
                var,
                row: row_scale,
            },
        )
    }
}

fn scale_for(diag: f64) -> f64 {
    if diag > 0.0 && diag.is_finite() {
        1.0 / diag.sqrt()
    } else {
        1.0
    }
}

/// Diagonal scaling produced by [`QpProblem::equilibrated`]:
/// `u̇ = var ∘ z` and `η = row ∘ η_scaled`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub var: Vec<f64>,
    pub row: Vec<f64>,
}

impl Scaling {
    pub fn to_scaled(&self, state: &SolverState) -> SolverState {
        SolverState {
            accel: state
                .accel
                .iter()
                .zip(&self.var)
                .map(|(x, s)| x / s)
                .collect(),
            multipliers: state
                .multipliers
                .iter()
                .zip(&self.row)
                .map(|(e, r)| e / r)
                .collect(),
        }
    }

    pub fn to_original(&self, state: &SolverState) -> SolverState {
        SolverState {
            accel: state
                .accel
                .iter()
                .zip(&self.var)
                .map(|(x, s)| x * s)
                .collect(),
            multipliers: state
                .multipliers
                .iter()
                .zip(&self.row)
                .map(|(e, r)| e * r)
                .collect(),
        }
    }
}

/// Decision variables `u̇` and multipliers `η`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverState {
    pub accel: Vec<f64>,
    pub multipliers: Vec<f64>,
}

impl SolverState {
    pub fn zeros(num_vars: usize, num_rows: usize) -> Self {
        SolverState {
            accel: vec![0.0; num_vars],
            multipliers: vec![0.0; num_rows],
        }
    }

    fn check_dims(&self, qp: &QpProblem) -> Result<()> {
        if self.accel.len() != qp.num_vars() || self.multipliers.len() != qp.num_rows() {
            return Err(SoattError::DimensionMismatch(format!(
                "solver state ({}, {}) does not match problem ({}, {})",
                self.accel.len(),
                self.multipliers.len(),
                qp.num_vars(),
                qp.num_rows()
            )));
        }
        Ok(())
    }
}

/// Componentwise clamp of `x` into `[lower, upper]`.
pub fn projection_box(x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect()
}

/// One forward-Euler step of the projection dynamics with time scale
/// `epsilon` and step `dt`. Multipliers are clamped at zero after the
/// update, which only matters when `dt > epsilon`.
pub fn ode_step(state: &SolverState, qp: &QpProblem, epsilon: f64, dt: f64) -> Result<SolverState> {
    let mut next = state.clone();
    let mut work = Workspace::new(qp.num_vars());
    ode_step_into(state, &mut next, qp, epsilon, dt, &mut work)?;
    Ok(next)
}

struct Workspace {
    gradient: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            gradient: vec![0.0; n],
        }
    }
}

/// Writes the step from `state` into `next` and returns `‖χ_next - χ‖∞`.
fn ode_step_into(
    state: &SolverState,
    next: &mut SolverState,
    qp: &QpProblem,
    epsilon: f64,
    dt: f64,
    work: &mut Workspace,
) -> Result<f64> {
    if !(epsilon > 0.0 && dt > 0.0) {
        return Err(SoattError::InvalidParams(format!(
            "epsilon and dt must be positive, got {epsilon} and {dt}"
        )));
    }
    state.check_dims(qp)?;
    let rate = dt / epsilon;
    let x = &state.accel;
    let eta = &state.multipliers;

    let g = &mut work.gradient;
    for (k, a) in qp.blocks.iter().enumerate() {
        let w = a * Vector2::new(x[2 * k], x[2 * k + 1])
            - Vector2::new(qp.target[2 * k], qp.target[2 * k + 1]);
        let grad = a.transpose() * w * 2.0;
        g[2 * k] = grad.x;
        g[2 * k + 1] = grad.y;
    }
    for (row, &e) in qp.rows.iter().zip(eta) {
        if e != 0.0 {
            row.add_transpose(e, g);
        }
    }

    let mut change: f64 = 0.0;
    for k in 0..x.len() {
        let projected = (x[k] - g[k]).clamp(qp.lower[k], qp.upper[k]);
        let value = x[k] + rate * (projected - x[k]);
        if !value.is_finite() {
            return Err(SoattError::SolverNonFinite {
                pair: None,
                variable: Some(k),
            });
        }
        change = change.max((value - x[k]).abs());
        next.accel[k] = value;
    }
    for (r, row) in qp.rows.iter().enumerate() {
        let target = (row.dot(x) - row.rhs + eta[r]).max(0.0);
        let mut value = (eta[r] + rate * (target - eta[r])).max(0.0);
        // A decaying multiplier would otherwise settle on the smallest
        // subnormal, where rounding makes the decay a fixed point.
        if value < f64::MIN_POSITIVE {
            value = 0.0;
        }
        if !value.is_finite() {
            return Err(SoattError::SolverNonFinite {
                pair: Some(r),
                variable: None,
            });
        }
        change = change.max((value - eta[r]).abs());
        next.multipliers[r] = value;
    }
    Ok(change)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Time scaling factor ε of the projection dynamics.
    pub epsilon: f64,
    /// Euler step of the inner iterations; `None` uses `epsilon`.
    pub inner_dt: Option<f64>,
    /// Maximum ODE steps per control step.
    pub inner_iterations: usize,
    /// Early exit once `‖χ_{k+1} - χ_k‖∞` drops below this.
    pub inner_tol: f64,
    /// Keep `(u̇, η)` across control steps.
    pub warm_start: bool,
    /// Solve the diagonally equilibrated problem instead of the raw one.
    pub precondition: bool,
    /// Residuals below this never count as divergence.
    pub divergence_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 0.005,
            inner_dt: None,
            inner_iterations: 1,
            inner_tol: 0.0,
            warm_start: true,
            precondition: false,
            divergence_floor: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn step(&self) -> f64 {
        self.inner_dt.unwrap_or(self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.step() > 0.0) {
            return Err(SoattError::InvalidParams(
                "epsilon and inner_dt must be positive".into(),
            ));
        }
        if self.inner_iterations == 0 {
            return Err(SoattError::InvalidParams(
                "inner_iterations must be at least 1".into(),
            ));
        }
        if !(self.inner_tol >= 0.0) {
            return Err(SoattError::InvalidParams(
                "inner_tol must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub state: SolverState,
    /// `‖χ_{k+1} - χ_k‖∞` of the last iteration.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs up to `max_inner` ODE steps, stopping early once the step change
/// falls below `tol`.
///
/// Fails with [`SoattError::Divergence`] when the change grows past ten times
/// the first one (and past `divergence_floor`).
pub fn solve_step(
    state: &SolverState,
    qp: &QpProblem,
    epsilon: f64,
    dt: f64,
    max_inner: usize,
    tol: f64,
    divergence_floor: f64,
) -> Result<SolveOutcome> {
    if max_inner == 0 {
        return Err(SoattError::InvalidParams(
            "max_inner must be at least 1".into(),
        ));
    }
    state.check_dims(qp)?;
    let mut work = Workspace::new(qp.num_vars());
    let mut current = state.clone();
    let mut next = state.clone();
    let mut initial = None;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_inner {
        residual = ode_step_into(&current, &mut next, qp, epsilon, dt, &mut work)?;
        std::mem::swap(&mut current, &mut next);
        iterations += 1;
        let first = *initial.get_or_insert(residual);
        if residual < tol {
            break;
        }
        if residual > 10.0 * first.max(divergence_floor) {
            return Err(SoattError::Divergence {
                initial: first,
                residual,
            });
        }
    }
    Ok(SolveOutcome {
        state: current,
        residual,
        iterations,
        converged: residual < tol,
    })
}

/// [`solve_step`] driven by a [`SolverConfig`], optionally on the
/// equilibrated problem. The returned state is in original units.
pub fn solve_with(
    state: &SolverState,
    qp: &QpProblem,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    let run = |s: &SolverState, p: &QpProblem| {
        solve_step(
            s,
            p,
            config.epsilon,
            config.step(),
            config.inner_iterations,
            config.inner_tol,
            config.divergence_floor,
        )
    };
    if !config.precondition {
        return run(state, qp);
    }
    let (scaled, scaling) = qp.equilibrated();
    let outcome = run(&scaling.to_scaled(state), &scaled)?;
    Ok(SolveOutcome {
        state: scaling.to_original(&outcome.state),
        ..outcome
    })
}

/// Exact minimizer by exhaustive active-set enumeration; a test oracle for
/// small problems only.
///
/// Every combination of active rows and active bound faces defines an
/// equality-constrained QP whose KKT system is solved directly. The best
/// primal-feasible candidate is the global minimizer because the objective
/// is convex and the true optimum solves the KKT system of its own active
/// set.
pub fn reference_qp_solve(qp: &QpProblem) -> Result<Vec<f64>> {
    let n = qp.num_vars();
    let m = qp.num_rows();
    if n > 8 || m > 12 {
        return Err(SoattError::InvalidParams(format!(
            "oracle limited to 4 robots and 12 rows, got {n} variables and {m} rows"
        )));
    }
    let (a, target) = qp.dense_objective();
    let hessian = a.transpose() * &a * 2.0;
    let linear = a.transpose() * &target * 2.0;
    let (b, b_rhs) = qp.dense_constraints();
    let feas_tol = 1e-9;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let bound_states = 3usize.pow(n as u32);
    for row_mask in 0u32..(1 << m) {
        let active_rows: Vec<usize> = (0..m).filter(|r| row_mask & (1 << r) != 0).collect();
        for code in 0..bound_states {
            // Per variable: 0 free, 1 at lower, 2 at upper.
            let mut fixed = Vec::new();
            let mut c = code;
            for k in 0..n {
                match c % 3 {
                    1 => fixed.push((k, qp.lower[k])),
                    2 => fixed.push((k, qp.upper[k])),
                    _ => {}
                }
                c /= 3;
            }
            let eq = active_rows.len() + fixed.len();
            if eq > n {
                continue;
            }
            let dim = n + eq;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hessian);
            rhs.rows_mut(0, n).copy_from(&linear);
            for (e, &r) in active_rows.iter().enumerate() {
                for k in 0..n {
                    kkt[(n + e, k)] = b[(r, k)];
                    kkt[(k, n + e)] = b[(r, k)];
                }
                rhs[n + e] = b_rhs[r];
            }
            for (e, &(k, value)) in fixed.iter().enumerate() {
                let idx = n + active_rows.len() + e;
                kkt[(idx, k)] = 1.0;
                kkt[(k, idx)] = 1.0;
                rhs[idx] = value;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
            if !x.iter().all(|v| v.is_finite()) {
                continue;
            }
            let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if qp.max_violation(&x) > feas_tol * scale {
                continue;
            }
            let value = qp.objective(&x);
            if best.as_ref().is_none_or(|(v, _)| value < *v) {
                best = Some((value, x));
            }
        }
    }
    best.map(|(_, x)| x).ok_or(SoattError::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_problem(target: [f64; 2], bound: f64) -> QpProblem {
        QpProblem::new(
            vec![Matrix2::identity()],
            target.to_vec(),
            vec![],
            vec![-bound; 2],
            vec![bound; 2],
        )
        .unwrap()
    }

    fn single_row(bound_x: f64) -> QpRow {
        // u̇₀ ≤ bound_x, expressed as a row against an obstacle.
        QpRow {
            robot_i: 0,
            coeff_i: Vector2::new(1.0, 0.0),
            robot_j: None,
            coeff_j: Vector2::zeros(),
            rhs: bound_x,
            slot: 0,
        }
    }

    #[test]
    fn projection_box_examples() {
        assert_eq!(
            projection_box(&[0.5, -0.2], &[-1.0; 2], &[1.0; 2]),
            vec![0.5, -0.2]
        );
        assert_eq!(
            projection_box(&[5.0, -5.0], &[-1.0; 2], &[1.0; 2]),
            vec![1.0, -1.0]
        );
    }

    #[test]
    fn equilibrium_is_stationary() {
        let qp = identity_problem([0.3, -0.4], 10.0);
        let state = SolverState {
            accel: vec![0.3, -0.4],
            multipliers: vec![],
        };
        assert_eq!(ode_step(&state, &qp, 0.005, 0.005).unwrap(), state);
    }

    #[test]
    fn slack_multiplier_decays_geometrically() {
        let mut qp = identity_problem([0.0, 0.0], 10.0);
        qp.rows.push(single_row(100.0));
        let state = SolverState {
            accel: vec![0.0, 0.0],
            multipliers: vec![1.0],
        };
        let next = ode_step(&state, &qp, 0.005, 0.001).unwrap();
        assert_relative_eq!(next.multipliers[0], 1.0 - 0.001 / 0.005, epsilon = 1e-15);
    }

    #[test]
    fn first_step_by_hand() {
        // u̇ - 2(u̇ - dzr) = (2, 0) at the origin; clamped to the box and
        // blended with weight dt/ε = 1.
        let qp = identity_problem([1.0, 0.0], 1.5);
        let next = ode_step(&SolverState::zeros(2, 0), &qp, 0.005, 0.005).unwrap();
        assert_eq!(next.accel, vec![1.5, 0.0]);
        let half = ode_step(&SolverState::zeros(2, 0), &qp, 0.005, 0.0025).unwrap();
        assert_eq!(half.accel, vec![0.75, 0.0]);
    }

    #[test]
    fn single_inner_iteration_matches_ode_step() {
        let mut qp = identity_problem([1.0, 0.5], 2.0);
        qp.rows.push(single_row(0.2));
        let start = SolverState {
            accel: vec![0.1, 0.1],
            multipliers: vec![0.3],
        };
        let one = solve_step(&start, &qp, 0.005, 0.001, 1, 0.0, 1.0).unwrap();
        assert_eq!(one.state, ode_step(&start, &qp, 0.005, 0.001).unwrap());
        assert_eq!(one.iterations, 1);
    }

    #[test]
    fn oracle_unconstrained_and_single_row() {
        let qp = identity_problem([0.4, -0.3], 10.0);
        assert_eq!(reference_qp_solve(&qp).unwrap(), vec![0.4, -0.3]);
        let mut qp = identity_problem([1.0, 0.0], 10.0);
        qp.rows.push(single_row(0.0));
        let x = reference_qp_solve(&qp).unwrap();
        assert_relative_eq!(x[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_reports_infeasibility() {
        let mut qp = identity_problem([0.0, 0.0], 1.0);
        qp.rows.push(single_row(-2.0));
        assert!(matches!(
            reference_qp_solve(&qp),
            Err(SoattError::Infeasible)
        ));
    }

    #[test]
    fn converges_to_oracle_with_active_row() {
        let mut qp = identity_problem([1.0, 0.5], 2.0);
        qp.rows.push(single_row(0.2));
        let out = solve_step(
            &SolverState::zeros(2, 1),
            &qp,
            0.005,
            0.0025,
            100_000,
            1e-12,
            1.0,
        )
        .unwrap();
        assert!(out.converged);
        let x = reference_qp_solve(&qp).unwrap();
        assert_relative_eq!(out.state.accel[0], x[0], epsilon = 1e-8);
        assert_relative_eq!(out.state.accel[1], x[1], epsilon = 1e-8);
        // Stationarity: 2(u̇ - dzr) + η e₀ = 0 on the active coordinate.
        assert_relative_eq!(out.state.multipliers[0], 1.6, epsilon = 1e-7);
    }

    #[test]
    fn equilibrated_problem_has_same_solution() {
        let block = Matrix2::new(0.033, 0.033, 0.04125, -0.04125);
        let row = QpRow {
            robot_i: 0,
            coeff_i: -(block.transpose() * Vector2::new(1.0, 0.0)),
            robot_j: None,
            coeff_j: Vector2::zeros(),
            rhs: -0.5,
            slot: 0,
        };
        let qp = QpProblem::new(
            vec![block],
            vec![-1.0, 0.2],
            vec![row],
            vec![-60.0; 2],
            vec![60.0; 2],
        )
        .unwrap();
        let config = SolverConfig {
            inner_dt: Some(0.0025),
            inner_iterations: 50_000,
            inner_tol: 1e-13,
            precondition: true,
            ..SolverConfig::default()
        };
        let out = solve_with(&SolverState::zeros(2, 1), &qp, &config).unwrap();
        let x = reference_qp_solve(&qp).unwrap();
        assert_relative_eq!(out.state.accel[0], x[0], epsilon = 1e-6);
        assert_relative_eq!(out.state.accel[1], x[1], epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(QpProblem::new(
            vec![Matrix2::identity()],
            vec![0.0; 3],
            vec![],
            vec![0.0; 2],
            vec![1.0; 2]
        )
        .is_err());
        assert!(QpProblem::new(
            vec![Matrix2::identity()],
            vec![0.0; 2],
            vec![],
            vec![1.0; 2],
            vec![0.0; 2]
        )
        .is_err());
        let qp = identity_problem([0.0, 0.0], 1.0);
        assert!(ode_step(&SolverState::zeros(3, 0), &qp, 0.005, 0.005).is_err());
        assert!(solve_step(&SolverState::zeros(2, 0), &qp, 0.005, 0.005, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn non_finite_target_is_reported() {
        let qp = identity_problem([f64::NAN, 0.0], 1.0);
        // NaN clamps to NaN, which the step must flag.
        let err = ode_step(&SolverState::zeros(2, 0), &qp, 0.005, 0.005).unwrap_err();
        assert!(matches!(
            err,
            SoattError::SolverNonFinite {
                variable: Some(0),
                ..
            }
        ));
    }
}
