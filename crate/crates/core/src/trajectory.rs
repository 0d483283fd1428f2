//! Analytic reference trajectories with exact velocity and acceleration.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoattError};

/// Desired position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub acceleration: Vector2<f64>,
}

impl ReferencePoint {
    pub fn stationary(position: Vector2<f64>) -> Self {
        ReferencePoint {
            position,
            velocity: Vector2::zeros(),
            acceleration: Vector2::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// Constant velocity from `start`.
    Straight {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    /// Advances along +x at `speed` while oscillating in y.
    Sine {
        start: [f64; 2],
        speed: f64,
        amplitude: f64,
        /// Angular frequency, rad/s.
        frequency: f64,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
        /// rad/s; the sign picks the direction of travel.
        angular_speed: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Straight segment from `start` to `goal` at constant speed, then holds the goal.
    Chord {
        start: [f64; 2],
        goal: [f64; 2],
        speed: f64,
    },
    Hold {
        position: [f64; 2],
    },
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let finite = |values: &[f64]| values.iter().all(|v| v.is_finite());
        let ok = match self {
            Trajectory::Straight { start, velocity } => finite(start) && finite(velocity),
            Trajectory::Sine {
                start,
                speed,
                amplitude,
                frequency,
            } => finite(start) && finite(&[*speed, *amplitude, *frequency]),
            Trajectory::Circle {
                center,
                radius,
                angular_speed,
                phase,
            } => finite(center) && finite(&[*radius, *angular_speed, *phase]) && *radius > 0.0,
            Trajectory::Chord { start, goal, speed } => {
                finite(start) && finite(goal) && speed.is_finite() && *speed > 0.0
            }
            Trajectory::Hold { position } => finite(position),
        };
        if ok {
            Ok(())
        } else {
            Err(SoattError::config(
                "trajectory",
                format!("malformed trajectory {self:?}"),
            ))
        }
    }

    pub fn at(&self, t: f64) -> ReferencePoint {
        match *self {
            Trajectory::Straight { start, velocity } => {
                let v = Vector2::from(velocity);
                ReferencePoint {
                    position: Vector2::from(start) + v * t,
                    velocity: v,
                    acceleration: Vector2::zeros(),
                }
            }
            Trajectory::Sine {
                start,
                speed,
                amplitude,
                frequency,
            } => {
                let (s, c) = (frequency * t).sin_cos();
                ReferencePoint {
                    position: Vector2::from(start) + Vector2::new(speed * t, amplitude * s),
                    velocity: Vector2::new(speed, amplitude * frequency * c),
                    acceleration: Vector2::new(0.0, -amplitude * frequency * frequency * s),
                }
            }
            Trajectory::Circle {
                center,
                radius,
                angular_speed,
                phase,
            } => {
                let (s, c) = (phase + angular_speed * t).sin_cos();
                ReferencePoint {
                    position: Vector2::from(center) + Vector2::new(c, s) * radius,
                    velocity: Vector2::new(-s, c) * (radius * angular_speed),
                    acceleration: Vector2::new(c, s) * (-radius * angular_speed * angular_speed),
                }
            }
            Trajectory::Chord { start, goal, speed } => {
                let (start, goal) = (Vector2::from(start), Vector2::from(goal));
                let span = goal - start;
                let length = span.norm();
                if length == 0.0 || t * speed >= length {
                    return ReferencePoint::stationary(goal);
                }
                let dir = span / length;
                ReferencePoint {
                    position: start + dir * (speed * t),
                    velocity: dir * speed,
                    acceleration: Vector2::zeros(),
                }
            }
            Trajectory::Hold { position } => ReferencePoint::stationary(Vector2::from(position)),
        }
    }

    /// Where the reference ends up; `None` for unbounded trajectories.
    pub fn goal(&self) -> Option<Vector2<f64>> {
        match *self {
            Trajectory::Chord { goal, .. } => Some(Vector2::from(goal)),
            Trajectory::Hold { position } => Some(Vector2::from(position)),
            _ => None,
        }
    }

    /// Bearing of the first segment, used to initialize the robot heading.
    pub fn initial_heading(&self) -> f64 {
        match *self {
            Trajectory::Chord { start, goal, .. } => {
                let d = Vector2::from(goal) - Vector2::from(start);
                d.y.atan2(d.x)
            }
            Trajectory::Hold { .. } => 0.0,
            _ => {
                let v = self.at(0.0).velocity;
                v.y.atan2(v.x)
            }
        }
    }

    /// Largest finite-difference mismatch of velocity and acceleration over
    /// `samples` instants in `[0, horizon]`, skipping the chord's arrival kink.
    pub fn consistency_error(&self, horizon: f64, samples: usize) -> f64 {
        let h = 1e-5;
        let kink = match *self {
            Trajectory::Chord { start, goal, speed } => {
                Some((Vector2::from(goal) - Vector2::from(start)).norm() / speed)
            }
            _ => None,
        };
        let mut worst: f64 = 0.0;
        for k in 0..samples {
            let t = h + (horizon - 2.0 * h) * k as f64 / samples.max(2).saturating_sub(1) as f64;
            if kink.is_some_and(|tk| (t - tk).abs() < 2.0 * h) {
                continue;
            }
            let (before, now, after) = (self.at(t - h), self.at(t), self.at(t + h));
            let v_fd = (after.position - before.position) / (2.0 * h);
            let a_fd = (after.velocity - before.velocity) / (2.0 * h);
            worst = worst
                .max((v_fd - now.velocity).amax())
                .max((a_fd - now.acceleration).amax());
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn analytic_derivatives_are_consistent() {
        let cases = [
            Trajectory::Straight {
                start: [0.0, 1.0],
                velocity: [0.5, -0.2],
            },
            Trajectory::Sine {
                start: [0.0, 0.0],
                speed: 0.5,
                amplitude: 1.0,
                frequency: 0.5,
            },
            Trajectory::Circle {
                center: [1.0, 1.0],
                radius: 2.0,
                angular_speed: 0.25,
                phase: 0.3,
            },
            Trajectory::Chord {
                start: [6.0, 0.0],
                goal: [-6.0, 0.0],
                speed: 1.5,
            },
        ];
        for traj in cases {
            traj.validate().unwrap();
            assert!(traj.consistency_error(12.0, 97) < 1e-3, "{traj:?}");
        }
    }

    #[test]
    fn chord_holds_goal_after_arrival() {
        let traj = Trajectory::Chord {
            start: [6.0, 0.0],
            goal: [-6.0, 0.0],
            speed: 2.0,
        };
        let mid = traj.at(3.0);
        assert_relative_eq!(mid.position, Vector2::new(0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(mid.velocity, Vector2::new(-2.0, 0.0));
        let end = traj.at(7.0);
        assert_eq!(end, ReferencePoint::stationary(Vector2::new(-6.0, 0.0)));
        assert_relative_eq!(traj.initial_heading().abs(), std::f64::consts::PI);
    }

    #[test]
    fn rejects_malformed() {
        let bad = Trajectory::Chord {
            start: [0.0, 0.0],
            goal: [1.0, 0.0],
            speed: 0.0,
        };
        assert!(bad.validate().is_err());
        let bad = Trajectory::Circle {
            center: [0.0, 0.0],
            radius: -1.0,
            angular_speed: 1.0,
            phase: 0.0,
        };
        assert!(bad.validate().is_err());
    }
}
