use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ItemCode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing column `{column}` in input header")]
    MissingColumn { column: String },

    #[error("duplicate observation for fsu `{fsu_id}`, household `{household_id}`, item {item}")]
    DuplicateObservation {
        fsu_id: String,
        household_id: String,
        item: ItemCode,
    },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("item {0} is not present in the dataset")]
    UnknownItem(ItemCode),

    #[error("household `{fsu_id}`/`{household_id}` is not present in the dataset")]
    UnknownHousehold {
        fsu_id: String,
        household_id: String,
    },

    #[error("household `{fsu_id}`/`{household_id}` has no observation for item {item}")]
    NotConsumed {
        fsu_id: String,
        household_id: String,
        item: ItemCode,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("N = {n} exceeds the exact-computation cap {cap}; use the normal approximation")]
    ExactCapExceeded { n: usize, cap: usize },

    #[error("degenerate: all p_i \u{2208} {{0,1}}; use prevalence_exact")]
    DegenerateVariance,

    #[error("rank-deficient design; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("numerically singular system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("bias correction unstable: {0}")]
    BiasCorrectionUnstable(String),

    #[error("seed collision between repetitions {first} and {second}")]
    SeedCollision { first: usize, second: usize },

    #[error("assignment does not match dataset: {0}")]
    AssignmentMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorKind::Config,
            Error::ExactCapExceeded { .. }
            | Error::DegenerateVariance
            | Error::RankDeficient { .. }
            | Error::Singular { .. }
            | Error::BiasCorrectionUnstable(_)
            | Error::SeedCollision { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
