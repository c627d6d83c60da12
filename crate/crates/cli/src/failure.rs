//! Failure classes and their exit codes.

use arbdetect_core::dataio::DataError;
use arbdetect_core::eval::EvalError;
use arbdetect_core::train::TrainError;
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Bad arguments, configuration or input files.
    Input(String),
    /// The superhedging solver did not converge.
    Solver(String),
    /// Training produced a non-finite loss.
    Divergence(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Divergence(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Input(_) => "input",
            Failure::Solver(_) => "solver",
            Failure::Divergence(_) => "divergence",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Solver(m) | Failure::Divergence(m) => m,
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.message(),
        })
        .to_string()
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => Failure::Divergence(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}
