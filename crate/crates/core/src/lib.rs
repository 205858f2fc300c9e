//! Rule-based CKD and AKI phenotyping over inpatient encounters.

pub mod aki;
pub mod ckd;
pub mod cli;
pub mod code_tables;
pub mod engine;
pub mod ingest;
pub mod refcr;
pub mod synth;
pub mod validation;

/// Absolute slack used when comparing creatinine values against thresholds,
/// so that values such as 1.5 x 0.8 compare equal to 1.2.
pub const COMPARISON_EPS: f64 = 1e-9;
