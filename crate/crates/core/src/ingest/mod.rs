//! Cohort input files: parsing, writing, and the encounter exclusion screen.

mod exclusions;
mod model;
mod parse;
mod write;

pub use exclusions::*;
pub use model::*;
pub use parse::*;
pub use write::*;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("{file}: missing column {column:?}")]
    Schema { file: String, column: String },
    #[error("{file}:{line}: {message}")]
    Timestamp { file: String, line: u64, message: String },
    #[error("{file}:{line}: {message}")]
    Row { file: String, line: u64, message: String },
    #[error("patient {patient_id} has events but no demographics row")]
    MissingDemographics { patient_id: String },
    #[error("{file}: {message}")]
    Io { file: String, message: String },
}
