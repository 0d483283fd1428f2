//! Closed-loop multi-robot simulation.
//!
//! Each control step runs: neighbor detection, deadlock detection and gating,
//! tracking targets, constraint rows, QP assembly, projection-dynamics solve,
//! command clamping, state integration and trace recording.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use log::{debug, warn};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoattError};
use crate::kinematics::{jacobian, step_state, RobotParams, RobotState};
use crate::safety::{build_constraint, CaStrategy, PairContext, PairLimits, SafetyGains};
use crate::solver::{solve_with, QpProblem, QpRow, SolverConfig, SolverState};
use crate::tracking::{
    detect_deadlock, dzr_deadlock_auxiliary, dzr_nominal, pair_count, pair_slot,
    perturb_preferred_velocity, relative_distance_mod, sbc_disturbance, DeadlockDetector,
    DeadlockSample, DeadlockStrategy, DeadlockThresholds, TrackingGains,
};
use crate::trajectory::{ReferencePoint, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotSetup {
    pub params: RobotParams,
    pub trajectory: Trajectory,
    pub initial: RobotState,
}

impl RobotSetup {
    /// Robot at rest on the start of its trajectory, facing along it.
    pub fn on_trajectory(params: RobotParams, trajectory: Trajectory) -> Self {
        let start = trajectory.at(0.0).position;
        let heading = trajectory.initial_heading();
        RobotSetup {
            params,
            trajectory,
            initial: RobotState::at_rest(start, heading),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub collision: CaStrategy,
    pub deadlock: DeadlockStrategy,
    pub detector: DeadlockDetector,
    pub thresholds: DeadlockThresholds,
    /// Minimum time the relative-distance modification stays on once triggered, s.
    pub distance_mod_hysteresis: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            collision: CaStrategy::Proposed,
            deadlock: DeadlockStrategy::AuxiliaryTerm,
            detector: DeadlockDetector::MultiplierGate,
            thresholds: DeadlockThresholds::default(),
            distance_mod_hysteresis: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub dt: f64,
    pub total_time: f64,
    /// Reserved for randomized scenario generators; the loop itself is deterministic.
    pub seed: u64,
    /// Solve one QP per robot with neighbors held at zero acceleration.
    pub decentralized: bool,
    /// Multipliers above this mark the step infeasible and trigger braking.
    pub infeasible_multiplier: f64,
    /// Integration sub-steps per control step; the command is held across them.
    pub plant_substeps: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            dt: 0.005,
            total_time: 12.0,
            seed: 0,
            decentralized: false,
            infeasible_multiplier: 1e6,
            plant_substeps: 1,
        }
    }
}

impl SimSettings {
    pub fn step_count(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub robots: Vec<RobotSetup>,
    pub obstacles: Vec<Obstacle>,
    /// Pair thresholds are `r_i + r_j + safety_margin`; the `d_safe` field
    /// is replaced per pair.
    pub safety: SafetyGains,
    pub safety_margin: f64,
    pub tracking: TrackingGains,
    pub strategy: StrategyConfig,
    pub solver: SolverConfig,
    pub sim: SimSettings,
}

impl ScenarioConfig {
    pub fn new(name: impl Into<String>, robots: Vec<RobotSetup>) -> Self {
        let mut config = ScenarioConfig {
            name: name.into(),
            robots,
            obstacles: Vec::new(),
            safety: SafetyGains::default(),
            safety_margin: 0.0,
            tracking: TrackingGains::default(),
            strategy: StrategyConfig::default(),
            solver: crowd_solver(),
            sim: SimSettings::default(),
        };
        config.set_default_sensing_range();
        config
    }

    /// Threshold between robots `i` and `j` (entity indices; obstacles follow robots).
    pub fn pair_d_safe(&self, i: usize, j: usize) -> f64 {
        self.entity_radius(i) + self.entity_radius(j) + self.safety_margin
    }

    fn entity_radius(&self, k: usize) -> f64 {
        match self.robots.get(k) {
            Some(r) => r.params.enclosing_radius,
            None => self.obstacles[k - self.robots.len()].radius,
        }
    }

    /// Robot-to-robot threshold for equal-size robots (the smallest pair threshold).
    pub fn d_safe(&self) -> f64 {
        let mut radii: Vec<f64> = self
            .robots
            .iter()
            .map(|r| r.params.enclosing_radius)
            .collect();
        radii.sort_by(f64::total_cmp);
        match radii.as_slice() {
            [a, b, ..] => a + b + self.safety_margin,
            [a] => 2.0 * a + self.safety_margin,
            [] => self.safety_margin,
        }
    }

    /// Sensing range of three robot-to-robot thresholds.
    pub fn set_default_sensing_range(&mut self) {
        let largest = self
            .robots
            .iter()
            .map(|r| r.params.enclosing_radius)
            .fold(0.0, f64::max);
        let d = 2.0 * largest + self.safety_margin;
        self.safety.d_safe = d;
        self.safety.sensing_range = 3.0 * d;
    }

    pub fn entity_count(&self) -> usize {
        self.robots.len() + self.obstacles.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots.is_empty() {
            return Err(SoattError::config("robots", "scenario has no robots"));
        }
        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return Err(SoattError::config("sim.dt", "must be positive"));
        }
        if !(self.sim.total_time >= self.sim.dt) {
            return Err(SoattError::config(
                "sim.total_time",
                "must cover at least one step",
            ));
        }
        if !(self.safety_margin >= 0.0) {
            return Err(SoattError::config(
                "gains.safety_margin",
                "must be nonnegative",
            ));
        }
        self.safety
            .validate()
            .map_err(|e| SoattError::config("gains", e.to_string()))?;
        self.tracking
            .validate()
            .map_err(|e| SoattError::config("gains", e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| SoattError::config("solver", e.to_string()))?;
        for (k, robot) in self.robots.iter().enumerate() {
            robot
                .params
                .validate()
                .map_err(|e| SoattError::config(format!("robots[{k}].params"), e.to_string()))?;
            robot.trajectory.validate().map_err(|e| {
                SoattError::config(format!("robots[{k}].trajectory"), e.to_string())
            })?;
            if !robot.initial.is_finite() {
                return Err(SoattError::config(
                    format!("robots[{k}]"),
                    "non-finite initial state",
                ));
            }
        }
        for (k, obstacle) in self.obstacles.iter().enumerate() {
            if !(obstacle.radius > 0.0 && obstacle.center.iter().all(|c| c.is_finite())) {
                return Err(SoattError::config(
                    format!("obstacles[{k}]"),
                    "malformed obstacle",
                ));
            }
        }
        let positions = self.initial_positions();
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if j >= self.robots.len() && i >= self.robots.len() {
                    continue;
                }
                let distance = (positions[i] - positions[j]).norm();
                if distance < self.pair_d_safe(i, j) - 1e-9 {
                    return Err(SoattError::config(
                        "robots",
                        format!(
                            "entities {i} and {j} start {distance:.4} m apart, closer than d_safe {:.4}",
                            self.pair_d_safe(i, j)
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    fn initial_positions(&self) -> Vec<Vector2<f64>> {
        self.robots
            .iter()
            .map(|r| r.initial.position)
            .chain(self.obstacles.iter().map(|o| Vector2::from(o.center)))
            .collect()
    }
}

/// Solver settings used by the scenario presets: equilibrated problem,
/// inner Euler step of `ε/4`, up to 400 inner iterations per control step.
pub fn crowd_solver() -> SolverConfig {
    SolverConfig {
        epsilon: 0.005,
        inner_dt: Some(0.005 / 4.0),
        inner_iterations: 400,
        inner_tol: 1e-9,
        warm_start: true,
        precondition: true,
        divergence_floor: 1e3,
    }
}

/// Pairs `(i, j)`, `i < j`, with `‖p_i - p_j‖ ≤ range`, in multiplier order.
pub fn neighbor_pairs(positions: &[Vector2<f64>], range: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if (positions[i] - positions[j]).norm() <= range {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// `count` robots on a circle of `radius`, each crossing to the antipodal point.
///
/// Logs a warning when the robots do not fit on the circle without overlap.
pub fn circle_scenario(count: usize, radius: f64, speed: f64) -> ScenarioConfig {
    circle_scenario_with(count, radius, speed, RobotParams::default())
}

pub fn circle_scenario_with(
    count: usize,
    radius: f64,
    speed: f64,
    params: RobotParams,
) -> ScenarioConfig {
    let d_safe = 2.0 * params.enclosing_radius;
    if count >= 2 {
        let spacing = 2.0 * radius * (std::f64::consts::PI / count as f64).sin();
        if spacing < d_safe {
            warn!(
                "{count} robots of radius {} do not fit on a circle of radius {radius}",
                params.enclosing_radius
            );
        }
    }
    let robots: Vec<RobotSetup> = (0..count)
        .map(|i| {
            let angle = TAU * i as f64 / count as f64;
            let start = [radius * angle.cos(), radius * angle.sin()];
            let trajectory = Trajectory::Chord {
                start,
                goal: [-start[0], -start[1]],
                speed,
            };
            RobotSetup::on_trajectory(params, trajectory)
        })
        .collect();
    let mut config = ScenarioConfig::new(format!("circle{count}"), robots);
    config.sim.total_time = 12.0;
    config.safety.sensing_range =
        head_on_range(config.d_safe(), speed, config.safety.kappa_distance);
    config
}

/// Range at which a pair closing head-on at twice `speed` still enters with
/// `h ≥ 0`, never below three thresholds.
pub fn head_on_range(d_safe: f64, speed: f64, kappa_distance: f64) -> f64 {
    (d_safe + 2.0 * speed / kappa_distance).max(3.0 * d_safe)
}

/// `count` robots in a row facing a mirrored row `distance` away; each robot
/// drives straight across to its partner's start.
///
/// One robot tracks a straight segment alone; two meet head-on.
pub fn swap_scenario(count: usize, distance: f64, speed: f64) -> ScenarioConfig {
    swap_scenario_with(count, distance, speed, RobotParams::default())
}

pub fn swap_scenario_with(
    count: usize,
    distance: f64,
    speed: f64,
    params: RobotParams,
) -> ScenarioConfig {
    let lane = 2.0 * params.enclosing_radius + 0.5;
    let per_side = count.div_ceil(2);
    let robots = (0..count)
        .map(|k| {
            let side = if k % 2 == 0 { -1.0 } else { 1.0 };
            let lane_index = (k / 2) as f64 - (per_side as f64 - 1.0) / 2.0;
            // Pairs share a lane so they meet head-on.
            let y = lane_index * lane;
            let start = [side * distance / 2.0, y];
            let goal = [-side * distance / 2.0, y];
            RobotSetup::on_trajectory(params, Trajectory::Chord { start, goal, speed })
        })
        .collect();
    ScenarioConfig::new(format!("swap{count}"), robots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub time: f64,
    pub states: Vec<RobotState>,
    pub references: Vec<ReferencePoint>,
    /// `(pair slot, η)` for every row of this step's QP.
    pub multipliers: Vec<(usize, f64)>,
    pub zeta_active: Vec<bool>,
    pub ca_active: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityEvent {
    pub step: usize,
    pub max_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub robot_count: usize,
    pub obstacles: Vec<Obstacle>,
    pub d_safe: f64,
    pub robot_radii: Vec<f64>,
    pub initial: Vec<RobotState>,
    pub initial_references: Vec<ReferencePoint>,
    pub steps: Vec<TraceStep>,
    pub feasibility_events: Vec<FeasibilityEvent>,
}

impl SimTrace {
    pub fn entity_count(&self) -> usize {
        self.robot_count + self.obstacles.len()
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.steps.len() as f64
    }
}

struct Simulation<'a> {
    config: &'a ScenarioConfig,
    states: Vec<RobotState>,
    /// Multipliers by pair slot over all entities.
    multipliers: Vec<f64>,
    /// Per-robot multiplier tables for the decentralized mode.
    local_multipliers: Vec<Vec<f64>>,
    accel: Vec<f64>,
    history: VecDeque<Vec<DeadlockSample>>,
    distance_mod_until: Vec<f64>,
}

struct StepOutput {
    applied: Vec<Vector2<f64>>,
    rows: Vec<(usize, f64)>,
    zeta_active: Vec<bool>,
    infeasible: Option<f64>,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ScenarioConfig) -> Self {
        let n = config.robots.len();
        let slots = pair_count(config.entity_count());
        Simulation {
            config,
            states: config.robots.iter().map(|r| r.initial).collect(),
            multipliers: vec![0.0; slots],
            local_multipliers: if config.sim.decentralized {
                vec![vec![0.0; slots]; n]
            } else {
                Vec::new()
            },
            accel: vec![0.0; 2 * n],
            history: VecDeque::new(),
            distance_mod_until: vec![f64::NEG_INFINITY; n],
        }
    }

    fn positions(&self) -> Vec<Vector2<f64>> {
        self.states
            .iter()
            .map(|s| s.position)
            .chain(
                self.config
                    .obstacles
                    .iter()
                    .map(|o| Vector2::from(o.center)),
            )
            .collect()
    }

    fn deadlock_flags(
        &mut self,
        time: f64,
        references: &[ReferencePoint],
        positions: &[Vector2<f64>],
        pairs: &[(usize, usize)],
    ) -> Result<Vec<bool>> {
        let config = self.config;
        let n = config.robots.len();
        let strategy = &config.strategy;
        if strategy.deadlock == DeadlockStrategy::None {
            return Ok(vec![false; n]);
        }
        if strategy.detector != DeadlockDetector::MultiplierGate {
            let mut nearest: Vec<Option<(f64, f64)>> = vec![None; n];
            for &(i, j) in pairs {
                let d = positions[j] - positions[i];
                let dist = d.norm();
                for (me, delta) in [(i, d), (j, -d)] {
                    if me < n && nearest[me].is_none_or(|(best, _)| dist < best) {
                        nearest[me] = Some((dist, delta.y.atan2(delta.x)));
                    }
                }
            }
            let samples = (0..n)
                .map(|k| {
                    let robot = &config.robots[k];
                    let goal = robot.trajectory.goal().unwrap_or(references[k].position);
                    DeadlockSample {
                        position: self.states[k].position,
                        velocity: self.states[k].velocity(&robot.params),
                        preferred_velocity: references[k].velocity,
                        heading: self.states[k].heading,
                        goal_distance: (self.states[k].position - goal).norm(),
                        neighbor_bearing: nearest[k].map(|(_, b)| b),
                    }
                })
                .collect();
            let keep = (strategy.thresholds.dwell / config.sim.dt).round() as usize + 1;
            self.history.push_back(samples);
            while self.history.len() > keep {
                self.history.pop_front();
            }
        }
        let window = self.history.make_contiguous();
        let mut flags = detect_deadlock(
            window,
            strategy.detector,
            &strategy.thresholds,
            config.sim.dt,
            &self.multipliers,
            config.entity_count(),
            n,
        )?;
        if strategy.deadlock == DeadlockStrategy::DistanceMod {
            for (k, flag) in flags.iter_mut().enumerate() {
                if *flag {
                    self.distance_mod_until[k] = time + strategy.distance_mod_hysteresis;
                }
                *flag = time < self.distance_mod_until[k];
            }
        }
        Ok(flags)
    }

    fn targets(&self, references: &[ReferencePoint], flags: &[bool]) -> Result<Vec<Vector2<f64>>> {
        let config = self.config;
        let gains = &config.tracking;
        config
            .robots
            .iter()
            .enumerate()
            .map(|(k, robot)| {
                let state = &self.states[k];
                let active = flags[k];
                match config.strategy.deadlock {
                    DeadlockStrategy::AuxiliaryTerm => {
                        dzr_deadlock_auxiliary(state, &references[k], gains, &robot.params, active)
                    }
                    DeadlockStrategy::VelocityPerturb => {
                        let mut reference = references[k];
                        reference.velocity =
                            perturb_preferred_velocity(&reference.velocity, gains, active);
                        Ok(dzr_nominal(state, &reference, gains, &robot.params))
                    }
                    DeadlockStrategy::SbcDisturbance => {
                        let dzr = dzr_nominal(state, &references[k], gains, &robot.params);
                        Ok(if active {
                            sbc_disturbance(&dzr, gains.rotation)
                        } else {
                            dzr
                        })
                    }
                    DeadlockStrategy::None | DeadlockStrategy::DistanceMod => {
                        Ok(dzr_nominal(state, &references[k], gains, &robot.params))
                    }
                }
            })
            .collect()
    }

    fn constraint_rows(&self, pairs: &[(usize, usize)], flags: &[bool]) -> Result<Vec<QpRow>> {
        let config = self.config;
        let n = config.robots.len();
        let entities = config.entity_count();
        let mut rows = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            let robot_i = &config.robots[i];
            let mut ctx = if j < n {
                let robot_j = &config.robots[j];
                PairContext::between_robots(
                    i,
                    j,
                    &self.states[i],
                    &robot_i.params,
                    &self.states[j],
                    &robot_j.params,
                )
            } else {
                let center = Vector2::from(config.obstacles[j - n].center);
                PairContext::with_obstacle(i, j, &self.states[i], &robot_i.params, center)
            };
            let modified = config.strategy.deadlock == DeadlockStrategy::DistanceMod
                && (flags[i] || (j < n && flags[j]));
            if modified {
                ctx.pair.rel_position =
                    relative_distance_mod(&ctx.pair.rel_position, config.tracking.rotation);
            }
            let limits = PairLimits {
                accel_sum: robot_i.params.max_point_accel
                    + config
                        .robots
                        .get(j)
                        .map_or(0.0, |r| r.params.max_point_accel),
                radius_sum: config.entity_radius(i) + config.entity_radius(j),
            };
            let gains = config.safety.with_d_safe(config.pair_d_safe(i, j));
            let row = build_constraint(config.strategy.collision, &ctx, &limits, &gains)?;
            rows.push(QpRow::from_constraint(&row, n, pair_slot(i, j, entities)));
        }
        Ok(rows)
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lower = self
            .config
            .robots
            .iter()
            .flat_map(|r| r.params.min_wheel_accel)
            .collect();
        let upper = self
            .config
            .robots
            .iter()
            .flat_map(|r| r.params.max_wheel_accel)
            .collect();
        (lower, upper)
    }

    fn step(&mut self, time: f64) -> Result<StepOutput> {
        let config = self.config;
        let n = config.robots.len();
        let references: Vec<ReferencePoint> = config
            .robots
            .iter()
            .map(|r| r.trajectory.at(time))
            .collect();
        let positions = self.positions();
        let pairs: Vec<(usize, usize)> = neighbor_pairs(&positions, config.safety.sensing_range)
            .into_iter()
            .filter(|&(i, _)| i < n)
            .collect();
        let zeta_active = self.deadlock_flags(time, &references, &positions, &pairs)?;
        let targets = self.targets(&references, &zeta_active)?;
        let rows = self.constraint_rows(&pairs, &zeta_active)?;
        let blocks: Vec<Matrix2<f64>> = config
            .robots
            .iter()
            .zip(&self.states)
            .map(|(r, s)| jacobian(s.heading, &r.params))
            .collect();
        let (lower, upper) = self.bounds();

        let (accel, row_values, max_eta) = if config.sim.decentralized {
            self.solve_decentralized(&blocks, &targets, &rows, &lower, &upper)?
        } else {
            self.solve_centralized(blocks, &targets, rows, lower.clone(), upper.clone())?
        };

        let mut applied: Vec<Vector2<f64>> = (0..n)
            .map(|k| {
                Vector2::new(
                    accel[2 * k].clamp(lower[2 * k], upper[2 * k]),
                    accel[2 * k + 1].clamp(lower[2 * k + 1], upper[2 * k + 1]),
                )
            })
            .collect();
        self.accel = accel;

        let mut infeasible = None;
        if max_eta > config.sim.infeasible_multiplier {
            // Brake every robot and restart the dynamics from rest.
            infeasible = Some(max_eta);
            for (k, cmd) in applied.iter_mut().enumerate() {
                let params = &config.robots[k].params;
                let brake = -self.states[k].wheel_velocities / config.sim.dt;
                *cmd = Vector2::new(
                    brake
                        .x
                        .clamp(params.min_wheel_accel[0], params.max_wheel_accel[0]),
                    brake
                        .y
                        .clamp(params.min_wheel_accel[1], params.max_wheel_accel[1]),
                );
            }
            self.multipliers.iter_mut().for_each(|e| *e = 0.0);
            self.local_multipliers
                .iter_mut()
                .flatten()
                .for_each(|e| *e = 0.0);
            self.accel.iter_mut().for_each(|a| *a = 0.0);
        }
        Ok(StepOutput {
            applied,
            rows: row_values,
            zeta_active,
            infeasible,
        })
    }

    fn solve_centralized(
        &mut self,
        blocks: Vec<Matrix2<f64>>,
        targets: &[Vector2<f64>],
        rows: Vec<QpRow>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<(usize, f64)>, f64)> {
        let target = targets.iter().flat_map(|t| [t.x, t.y]).collect();
        let slots: Vec<usize> = rows.iter().map(|r| r.slot).collect();
        let qp = QpProblem::new(blocks, target, rows, lower, upper)?;
        let warm = self.config.solver.warm_start;
        let start = SolverState {
            accel: if warm {
                self.accel.clone()
            } else {
                vec![0.0; qp.num_vars()]
            },
            multipliers: slots
                .iter()
                .map(|&s| if warm { self.multipliers[s] } else { 0.0 })
                .collect(),
        };
        let outcome = solve_with(&start, &qp, &self.config.solver)?;
        self.multipliers.iter_mut().for_each(|e| *e = 0.0);
        let mut values = Vec::with_capacity(slots.len());
        let mut max_eta: f64 = 0.0;
        for (&slot, &eta) in slots.iter().zip(&outcome.state.multipliers) {
            self.multipliers[slot] = eta;
            values.push((slot, eta));
            max_eta = max_eta.max(eta);
        }
        Ok((outcome.state.accel, values, max_eta))
    }

    /// Each robot solves for its own wheel accelerations only. Robot-robot
    /// rows are split evenly; obstacle rows stay whole.
    fn solve_decentralized(
        &mut self,
        blocks: &[Matrix2<f64>],
        targets: &[Vector2<f64>],
        rows: &[QpRow],
        lower: &[f64],
        upper: &[f64],
    ) -> Result<(Vec<f64>, Vec<(usize, f64)>, f64)> {
        let n = blocks.len();
        let warm = self.config.solver.warm_start;
        let mut accel = vec![0.0; 2 * n];
        let mut combined: Vec<f64> = vec![0.0; self.multipliers.len()];
        let mut max_eta: f64 = 0.0;
        for k in 0..n {
            let local_rows: Vec<QpRow> = rows
                .iter()
                .filter_map(|row| {
                    let (coeff, shared) = if row.robot_i == k {
                        (row.coeff_i, row.robot_j.is_some())
                    } else if row.robot_j == Some(k) {
                        (row.coeff_j, true)
                    } else {
                        return None;
                    };
                    Some(QpRow {
                        robot_i: 0,
                        coeff_i: coeff,
                        robot_j: None,
                        coeff_j: Vector2::zeros(),
                        rhs: if shared { 0.5 * row.rhs } else { row.rhs },
                        slot: row.slot,
                    })
                })
                .collect();
            let slots: Vec<usize> = local_rows.iter().map(|r| r.slot).collect();
            let qp = QpProblem::new(
                vec![blocks[k]],
                vec![targets[k].x, targets[k].y],
                local_rows,
                lower[2 * k..2 * k + 2].to_vec(),
                upper[2 * k..2 * k + 2].to_vec(),
            )?;
            let table = &mut self.local_multipliers[k];
            let start = SolverState {
                accel: if warm {
                    self.accel[2 * k..2 * k + 2].to_vec()
                } else {
                    vec![0.0; 2]
                },
                multipliers: slots
                    .iter()
                    .map(|&s| if warm { table[s] } else { 0.0 })
                    .collect(),
            };
            let outcome = solve_with(&start, &qp, &self.config.solver)?;
            table.iter_mut().for_each(|e| *e = 0.0);
            for (&slot, &eta) in slots.iter().zip(&outcome.state.multipliers) {
                table[slot] = eta;
                combined[slot] = combined[slot].max(eta);
                max_eta = max_eta.max(eta);
            }
            accel[2 * k..2 * k + 2].copy_from_slice(&outcome.state.accel);
        }
        let values = rows.iter().map(|r| (r.slot, combined[r.slot])).collect();
        self.multipliers = combined;
        Ok((accel, values, max_eta))
    }
}

/// Runs the closed loop for `config.sim.total_time`.
pub fn run(config: &ScenarioConfig) -> Result<SimTrace> {
    config.validate()?;
    let n = config.robots.len();
    let entities = config.entity_count();
    let dt = config.sim.dt;
    let steps = config.sim.step_count();
    let mut sim = Simulation::new(config);
    let mut trace = SimTrace {
        dt,
        robot_count: n,
        obstacles: config.obstacles.clone(),
        d_safe: config.d_safe(),
        robot_radii: config
            .robots
            .iter()
            .map(|r| r.params.enclosing_radius)
            .collect(),
        initial: sim.states.clone(),
        initial_references: config.robots.iter().map(|r| r.trajectory.at(0.0)).collect(),
        steps: Vec::with_capacity(steps),
        feasibility_events: Vec::new(),
    };

    for k in 0..steps {
        let time = k as f64 * dt;
        let out = sim.step(time).map_err(|e| SoattError::Step {
            step: k,
            source: Box::new(e),
        })?;
        if let Some(max_multiplier) = out.infeasible {
            warn!("step {k}: multipliers reached {max_multiplier:.3e}; braking");
            trace.feasibility_events.push(FeasibilityEvent {
                step: k,
                max_multiplier,
            });
        }
        let substeps = config.sim.plant_substeps.max(1);
        for (i, cmd) in out.applied.iter().enumerate() {
            for _ in 0..substeps {
                sim.states[i] = step_state(
                    &sim.states[i],
                    *cmd,
                    dt / substeps as f64,
                    &config.robots[i].params,
                )
                .map_err(|e| SoattError::Step {
                    step: k,
                    source: Box::new(e),
                })?;
            }
        }
        let mut ca_active = vec![false; n];
        let threshold = config.strategy.thresholds.active_multiplier;
        for &(slot, eta) in &out.rows {
            if eta > threshold {
                let (i, j) = slot_pair(slot, entities);
                ca_active[i] = true;
                if j < n {
                    ca_active[j] = true;
                }
            }
        }
        let next_time = (k + 1) as f64 * dt;
        trace.steps.push(TraceStep {
            step: k + 1,
            time: next_time,
            states: sim.states.clone(),
            references: config
                .robots
                .iter()
                .map(|r| r.trajectory.at(next_time))
                .collect(),
            multipliers: out.rows,
            zeta_active: out.zeta_active,
            ca_active,
        });
    }
    debug!(
        "{}: {} steps, {} feasibility events",
        config.name,
        steps,
        trace.feasibility_events.len()
    );
    Ok(trace)
}

/// Inverse of [`pair_slot`]: the 0-based pair stored at `slot`.
pub fn slot_pair(slot: usize, entity_count: usize) -> (usize, usize) {
    let mut remaining = slot;
    for i in 0..entity_count {
        let span = entity_count - 1 - i;
        if remaining < span {
            return (i, i + 1 + remaining);
        }
        remaining -= span;
    }
    panic!("slot {slot} out of range for {entity_count} entities");
}
