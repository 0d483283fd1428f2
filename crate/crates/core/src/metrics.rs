//! Tracking, intervention and safety statistics over a simulation trace.

use nalgebra::Vector2;

use crate::error::{Result, SoattError};
use crate::simulator::SimTrace;

/// RMSE, MAE and population standard deviation of a nonnegative error series.
///
/// `std_dev² = rmse² − mae²` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProximityStats {
    pub rmse: f64,
    pub mae: f64,
    pub std_dev: f64,
}

impl ProximityStats {
    pub fn from_series(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(SoattError::InvalidParams("empty error series".into()));
        }
        let n = errors.len() as f64;
        let mae = errors.iter().sum::<f64>() / n;
        let mean_sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let variance = errors.iter().map(|e| (e - mae).powi(2)).sum::<f64>() / n;
        Ok(ProximityStats {
            rmse: mean_sq.sqrt(),
            mae,
            std_dev: variance.sqrt(),
        })
    }
}

/// Per-step tracking error averaged over robots.
pub fn mean_tracking_errors(trace: &SimTrace) -> Vec<f64> {
    trace
        .steps
        .iter()
        .map(|step| {
            let total: f64 = step
                .states
                .iter()
                .zip(&step.references)
                .map(|(s, r)| (s.position - r.position).norm())
                .sum();
            total / trace.robot_count as f64
        })
        .collect()
}

pub fn robot_tracking_errors(trace: &SimTrace, robot: usize) -> Vec<f64> {
    trace
        .steps
        .iter()
        .map(|step| (step.states[robot].position - step.references[robot].position).norm())
        .collect()
}

pub fn proximity_stats(trace: &SimTrace) -> Result<ProximityStats> {
    ProximityStats::from_series(&mean_tracking_errors(trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionTimes {
    /// Seconds each robot spent with an active collision-avoidance constraint.
    pub per_robot: Vec<f64>,
    pub mean: f64,
}

pub fn intervention_time(trace: &SimTrace) -> InterventionTimes {
    let mut per_robot = vec![0.0; trace.robot_count];
    for step in &trace.steps {
        for (total, &active) in per_robot.iter_mut().zip(&step.ca_active) {
            if active {
                *total += trace.dt;
            }
        }
    }
    let mean = if per_robot.is_empty() {
        0.0
    } else {
        per_robot.iter().sum::<f64>() / per_robot.len() as f64
    };
    InterventionTimes { per_robot, mean }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyAudit {
    /// Smallest robot-robot distance over the run; infinite with fewer than two robots.
    pub min_distance: f64,
    /// Number of (step, pair) samples closer than `d_safe`.
    pub violations: usize,
    pub first_violation_step: Option<usize>,
    /// Smallest robot-obstacle surface clearance, `‖p - c‖ - r_o - r_i`.
    pub min_obstacle_clearance: f64,
}

/// Checks every robot pair at every recorded step, the initial state included.
pub fn safety_audit(trace: &SimTrace, d_safe: f64) -> SafetyAudit {
    let mut audit = SafetyAudit {
        min_distance: f64::INFINITY,
        violations: 0,
        first_violation_step: None,
        min_obstacle_clearance: f64::INFINITY,
    };
    let initial: Vec<Vector2<f64>> = trace.initial.iter().map(|s| s.position).collect();
    let frames = std::iter::once((0, initial)).chain(
        trace
            .steps
            .iter()
            .map(|step| (step.step, step.states.iter().map(|s| s.position).collect())),
    );
    for (index, positions) in frames {
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                let distance = (positions[i] - positions[j]).norm();
                audit.min_distance = audit.min_distance.min(distance);
                if distance < d_safe {
                    audit.violations += 1;
                    audit.first_violation_step.get_or_insert(index);
                }
            }
            for obstacle in &trace.obstacles {
                let clearance = (positions[i] - Vector2::from(obstacle.center)).norm()
                    - obstacle.radius
                    - trace.robot_radii[i];
                audit.min_obstacle_clearance = audit.min_obstacle_clearance.min(clearance);
            }
        }
    }
    audit
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlockEvent {
    pub robot: usize,
    pub start: f64,
    pub end: f64,
}

/// Maximal runs of steps during which a robot's resolution term was on.
pub fn deadlock_events(trace: &SimTrace) -> Vec<DeadlockEvent> {
    let mut events = Vec::new();
    for robot in 0..trace.robot_count {
        let mut start: Option<f64> = None;
        for step in &trace.steps {
            let began = step.time - trace.dt;
            match (step.zeta_active[robot], start) {
                (true, None) => start = Some(began),
                (false, Some(s)) => {
                    events.push(DeadlockEvent {
                        robot,
                        start: s,
                        end: began,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            events.push(DeadlockEvent {
                robot,
                start: s,
                end: trace.total_time(),
            });
        }
    }
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.robot.cmp(&b.robot)));
    events
}

/// Distance of each robot from its reference at the final step.
pub fn final_errors(trace: &SimTrace) -> Vec<f64> {
    match trace.steps.last() {
        Some(last) => last
            .states
            .iter()
            .zip(&last.references)
            .map(|(s, r)| (s.position - r.position).norm())
            .collect(),
        None => vec![0.0; trace.robot_count],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotReport {
    pub tracking: ProximityStats,
    pub intervention_time: f64,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub tracking: ProximityStats,
    pub intervention: InterventionTimes,
    pub safety: SafetyAudit,
    pub final_errors: Vec<f64>,
    pub deadlock_events: Vec<DeadlockEvent>,
    pub feasibility_events: usize,
    pub robots: Vec<RobotReport>,
}

impl MetricsReport {
    pub fn from_trace(trace: &SimTrace) -> Result<Self> {
        let tracking = proximity_stats(trace)?;
        let intervention = intervention_time(trace);
        let final_errors = final_errors(trace);
        let robots = (0..trace.robot_count)
            .map(|k| {
                Ok(RobotReport {
                    tracking: ProximityStats::from_series(&robot_tracking_errors(trace, k))?,
                    intervention_time: intervention.per_robot[k],
                    final_error: final_errors[k],
                })
            })
            .collect::<Result<_>>()?;
        Ok(MetricsReport {
            tracking,
            safety: safety_audit(trace, trace.d_safe),
            intervention,
            final_errors,
            deadlock_events: deadlock_events(trace),
            feasibility_events: trace.feasibility_events.len(),
            robots,
        })
    }

    /// Fraction of robots ending within `tolerance` of their reference.
    pub fn goal_fraction(&self, tolerance: f64) -> f64 {
        if self.final_errors.is_empty() {
            return 1.0;
        }
        let reached = self
            .final_errors
            .iter()
            .filter(|&&e| e <= tolerance)
            .count();
        reached as f64 / self.final_errors.len() as f64
    }

    pub fn max_final_error(&self) -> f64 {
        self.final_errors.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_series() {
        let stats = ProximityStats::from_series(&[0.1, 0.1, 0.1, 0.1]).unwrap();
        assert_relative_eq!(stats.rmse, 0.1, epsilon = 1e-15);
        assert_relative_eq!(stats.mae, 0.1, epsilon = 1e-15);
        assert!(stats.std_dev < 1e-12);
    }

    #[test]
    fn two_point_series() {
        let stats = ProximityStats::from_series(&[0.0, 0.2]).unwrap();
        assert_relative_eq!(stats.rmse, 0.02f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(stats.mae, 0.1, epsilon = 1e-15);
        assert_relative_eq!(stats.std_dev, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn empty_series_is_an_error() {
        assert!(ProximityStats::from_series(&[]).is_err());
    }
}
