//! Multi-robot collision avoidance and trajectory tracking for
//! differential-drive robots, solved with a projection-dynamics QP.

pub mod config;
pub mod error;
pub mod kinematics;
pub mod metrics;
pub mod plot;
pub mod safety;
pub mod simulator;
pub mod solver;
pub mod trace_io;
pub mod tracking;
pub mod trajectory;

pub use error::{Result, SoattError};
