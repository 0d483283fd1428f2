use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SoattError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SoattError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("coincident centers for pair ({i}, {j})")]
    DegenerateGeometry { i: usize, j: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    /// A multiplier or decision variable became non-finite during an ODE step.
    #[error("solver produced a non-finite value at {}", describe_index(*.pair, *.variable))]
    SolverNonFinite {
        pair: Option<usize>,
        variable: Option<usize>,
    },

    #[error("solver diverged: residual {residual:.3e} exceeds 10x the initial {initial:.3e}")]
    Divergence { initial: f64, residual: f64 },

    #[error("simulation step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SoattError>,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("malformed trace at line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn describe_index(pair: Option<usize>, variable: Option<usize>) -> String {
    match (pair, variable) {
        (Some(p), _) => format!("constraint row {p}"),
        (None, Some(v)) => format!("variable {v}"),
        (None, None) => "unknown location".to_owned(),
    }
}

impl SoattError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SoattError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SoattError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by the QP solver (possibly wrapped in a step error).
    pub fn is_solver_failure(&self) -> bool {
        match self {
            SoattError::Divergence { .. }
            | SoattError::SolverNonFinite { .. }
            | SoattError::Infeasible => true,
            SoattError::Step { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
