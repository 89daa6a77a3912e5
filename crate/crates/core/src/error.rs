use std::fmt;

use thiserror::Error;

/// A single cell that failed schema validation, with its coordinates in the
/// input table (`row` is zero-based over data rows, header excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaViolation {
    pub row: Option<usize>,
    pub column: String,
    pub reason: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(row) => write!(f, "row {row}, column `{}`: {}", self.column, self.reason),
            None => write!(f, "column `{}`: {}", self.column, self.reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible Renyi order: gamma = {gamma} must stay below d = {d} (gamma < d)")]
    InfeasibleOrder { gamma: f64, d: usize },

    #[error("no feasible Renyi order: d * sigma^2 = {d_sigma2:e} leaves no alpha > 1 with gamma < d")]
    NoFeasibleOrder { d_sigma2: f64 },

    #[error("{name} = {value} outside {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("epsilon target {target} unreachable: best achievable with sigma <= {sigma_ceiling:e} is {floor}")]
    UnreachableBudget {
        target: f64,
        floor: f64,
        sigma_ceiling: f64,
    },

    #[error("schema violations:\n{}", format_violations(.0))]
    Schema(Vec<SchemaViolation>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate bandwidth: all points coincide")]
    DegenerateBandwidth,

    #[error("kernel system is not positive definite (ridge {ridge:e} too small for near-duplicate points)")]
    Factorization { ridge: f64 },

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: u64, value: f64 },

    #[error("tape does not belong to the current model parameters")]
    StaleTape,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

fn format_violations(v: &[SchemaViolation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            expected,
        }
    }

    /// Broad failure class, used by front ends to pick an exit status.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InfeasibleOrder { .. }
            | Error::NoFeasibleOrder { .. }
            | Error::Domain { .. }
            | Error::UnreachableBudget { .. }
            | Error::InvalidConfig(_)
            | Error::Toml(_) => ErrorClass::Config,
            Error::Schema(_)
            | Error::DimensionMismatch(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::StaleTape => ErrorClass::Data,
            Error::DegenerateBandwidth
            | Error::Factorization { .. }
            | Error::NonFiniteLoss { .. } => ErrorClass::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
