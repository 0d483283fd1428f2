//! TOML scenario files.
//!
//! ```toml
//! name = "circle20"
//!
//! [robots]
//! preset = "circle"     # circle | swap | custom
//! count = 20
//! radius = 6.0
//! speed = 1.5
//!
//! [robots.params]
//! enclosing_radius = 0.48
//!
//! [gains]
//! kappa_distance = 1.0
//! kappa_barrier = 2.0
//!
//! [strategy]
//! collision = "proposed"
//! deadlock = "auxiliary_term"
//!
//! [sim]
//! dt = 0.005
//! total_time = 12.0
//! ```
//!
//! Custom robots are listed as `[[robots.custom]]` tables with a
//! `trajectory` (tagged by `kind`) and optional `position`, `heading` and
//! `params`. Static obstacles are `[[obstacles]]` tables.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoattError};
use crate::kinematics::{RobotParams, RobotState};
use crate::safety::{CaStrategy, SafetyGains};
use crate::simulator::{
    circle_scenario_with, crowd_solver, head_on_range, swap_scenario_with, Obstacle, RobotSetup,
    ScenarioConfig, SimSettings, StrategyConfig,
};
use crate::solver::SolverConfig;
use crate::tracking::{DeadlockDetector, DeadlockStrategy, DeadlockThresholds, TrackingGains};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Circle,
    Swap,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomRobot {
    pub trajectory: Trajectory,
    /// Defaults to the trajectory start.
    pub position: Option<[f64; 2]>,
    /// Radians; defaults to the trajectory's initial bearing.
    pub heading: Option<f64>,
    pub params: Option<RobotParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotsSection {
    pub preset: Preset,
    pub count: usize,
    /// Circle radius, meters.
    pub radius: f64,
    /// Row separation of the swap preset, meters.
    pub distance: f64,
    /// Cruise speed of the generated references, m/s.
    pub speed: f64,
    pub params: RobotParams,
    pub custom: Vec<CustomRobot>,
}

impl Default for RobotsSection {
    fn default() -> Self {
        RobotsSection {
            preset: Preset::Circle,
            count: 10,
            radius: 6.0,
            distance: 4.0,
            speed: 1.5,
            params: RobotParams::default(),
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSection {
    pub kappa_distance: f64,
    pub kappa_barrier: f64,
    pub velocity_gain: f64,
    pub adaptive_rate: f64,
    pub adaptive_offset: f64,
    /// Added to `r_i + r_j` to form each pair's threshold, meters.
    pub safety_margin: f64,
    /// Defaults to the preset's rule (three robot-robot thresholds for custom robots).
    pub sensing_range: Option<f64>,
    pub kappa_position: f64,
    pub kappa_velocity: f64,
    /// Defaults to half of `kappa_velocity`.
    pub zeta: Option<f64>,
    pub rotation_deg: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        let safety = SafetyGains::default();
        let tracking = TrackingGains::default();
        GainsSection {
            kappa_distance: safety.kappa_distance,
            kappa_barrier: safety.kappa_barrier,
            velocity_gain: safety.velocity_gain,
            adaptive_rate: safety.adaptive_rate,
            adaptive_offset: safety.adaptive_offset,
            safety_margin: 0.0,
            sensing_range: None,
            kappa_position: tracking.kappa_position,
            kappa_velocity: tracking.kappa_velocity,
            zeta: None,
            // Rounded so the printed default reads 30 rather than 29.999…
            rotation_deg: (tracking.rotation.to_degrees() * 1e9).round() / 1e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub collision: CaStrategy,
    pub deadlock: DeadlockStrategy,
    pub detector: DeadlockDetector,
    pub distance_mod_hysteresis: f64,
    pub thresholds: DeadlockThresholds,
}

impl Default for StrategySection {
    fn default() -> Self {
        let s = StrategyConfig::default();
        StrategySection {
            collision: s.collision,
            deadlock: s.deadlock,
            detector: s.detector,
            distance_mod_hysteresis: s.distance_mod_hysteresis,
            thresholds: s.thresholds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub total_time: f64,
    pub seed: u64,
    pub decentralized: bool,
    pub infeasible_multiplier: f64,
    pub plant_substeps: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimSettings::default();
        SimSection {
            dt: s.dt,
            total_time: s.total_time,
            seed: s.seed,
            decentralized: s.decentralized,
            infeasible_multiplier: s.infeasible_multiplier,
            plant_substeps: s.plant_substeps,
        }
    }
}

/// A scenario file as written, before robots are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub name: Option<String>,
    pub robots: RobotsSection,
    pub obstacles: Vec<Obstacle>,
    pub gains: GainsSection,
    pub strategy: StrategySection,
    pub solver: SolverConfig,
    pub sim: SimSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            name: None,
            robots: RobotsSection::default(),
            obstacles: Vec::new(),
            gains: GainsSection::default(),
            strategy: StrategySection::default(),
            solver: crowd_solver(),
            sim: SimSection::default(),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = match e.span() {
                Some(span) => {
                    let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "document".to_owned(),
            };
            SoattError::config(field, e.message().to_owned())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SoattError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            SoattError::Config { field, message } => {
                SoattError::config(format!("{}:{field}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config sections always serialize")
    }

    /// Generates the robots and assembles a validated scenario.
    pub fn build(&self) -> Result<ScenarioConfig> {
        let robots = &self.robots;
        let mut config = match robots.preset {
            Preset::Circle => {
                positive("robots.radius", robots.radius)?;
                positive("robots.speed", robots.speed)?;
                if robots.count == 0 {
                    return Err(SoattError::config("robots.count", "must be at least 1"));
                }
                circle_scenario_with(robots.count, robots.radius, robots.speed, robots.params)
            }
            Preset::Swap => {
                positive("robots.distance", robots.distance)?;
                positive("robots.speed", robots.speed)?;
                if robots.count == 0 {
                    return Err(SoattError::config("robots.count", "must be at least 1"));
                }
                swap_scenario_with(robots.count, robots.distance, robots.speed, robots.params)
            }
            Preset::Custom => {
                if robots.custom.is_empty() {
                    return Err(SoattError::config(
                        "robots.custom",
                        "preset \"custom\" needs at least one [[robots.custom]] entry",
                    ));
                }
                let setups = robots
                    .custom
                    .iter()
                    .map(|c| {
                        let params = c.params.unwrap_or(robots.params);
                        let mut setup = RobotSetup::on_trajectory(params, c.trajectory.clone());
                        if let Some(p) = c.position {
                            setup.initial.position = Vector2::from(p);
                        }
                        if let Some(h) = c.heading {
                            setup.initial = RobotState::at_rest(setup.initial.position, h);
                        }
                        setup
                    })
                    .collect();
                ScenarioConfig::new("custom", setups)
            }
        };
        if let Some(name) = &self.name {
            config.name = name.clone();
        }
        config.obstacles = self.obstacles.clone();

        let g = &self.gains;
        config.safety_margin = g.safety_margin;
        config.safety = SafetyGains {
            kappa_distance: g.kappa_distance,
            kappa_barrier: g.kappa_barrier,
            velocity_gain: g.velocity_gain,
            adaptive_rate: g.adaptive_rate,
            adaptive_offset: g.adaptive_offset,
            ..config.safety
        };
        config.set_default_sensing_range();
        config.safety.sensing_range = match g.sensing_range {
            Some(range) => range,
            None if robots.preset == Preset::Custom => config.safety.sensing_range,
            None => head_on_range(config.d_safe(), robots.speed, g.kappa_distance),
        };
        config.tracking = TrackingGains {
            kappa_position: g.kappa_position,
            kappa_velocity: g.kappa_velocity,
            zeta: g.zeta.unwrap_or(0.5 * g.kappa_velocity),
            rotation: g.rotation_deg.to_radians(),
        };

        let s = &self.strategy;
        config.strategy = StrategyConfig {
            collision: s.collision,
            deadlock: s.deadlock,
            detector: s.detector,
            thresholds: s.thresholds,
            distance_mod_hysteresis: s.distance_mod_hysteresis,
        };
        config.solver = self.solver;
        config.sim = SimSettings {
            dt: self.sim.dt,
            total_time: self.sim.total_time,
            seed: self.sim.seed,
            decentralized: self.sim.decentralized,
            infeasible_multiplier: self.sim.infeasible_multiplier,
            plant_substeps: self.sim.plant_substeps,
        };
        if config.sim.plant_substeps == 0 {
            return Err(SoattError::config(
                "sim.plant_substeps",
                "must be at least 1",
            ));
        }
        config.validate()?;
        Ok(config)
    }
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(SoattError::config(
            field,
            format!("must be positive, got {value}"),
        ))
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    ConfigFile::load(path)?.build()
}
