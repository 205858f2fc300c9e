//! Synthetic cohorts with planted labels, a random fuzz generator, and an
//! independent brute-force phenotyper used as a differential oracle.

mod diff;
mod fuzz;
mod oracle;
mod planted;

pub use diff::*;
pub use fuzz::*;
pub use oracle::*;
pub use planted::*;

use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aki::{AkiStage, DurationClass};
use crate::ckd::{CkdCategory, RecentAki};
use crate::ingest::{ExclusionReason, IngestError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible plan: {0}")]
    InfeasiblePlan(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Targets for a planted cohort. Fractions are of the eligible (non-ESKD)
/// patients unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortPlan {
    pub patients: usize,
    pub seed: u64,
    pub aki_prevalence: f64,
    /// Shares of maximum stage 1, 2 and 3 among AKI encounters.
    pub stage_mix: [f64; 3],
    /// Share of stage-3 AKI encounters given dialysis.
    pub rrt_fraction: f64,
    /// Shares of rapid, persistent and AKD episodes.
    pub duration_mix: [f64; 3],
    pub recurrent_fraction: f64,
    pub recovery_fraction: f64,
    pub ckd_prevalence: f64,
    /// Shares of CKD by history, by creatinine, and after transplant.
    pub ckd_mix: [f64; 3],
    /// Share of non-CKD patients with no history at all.
    pub insufficient_fraction: f64,
    /// Share of patients with history who had AKI in the 90 days before.
    pub recent_aki_fraction: f64,
    /// Share of recent AKI that had not recovered by admission.
    pub recent_akd_share: f64,
    /// Share of all patients with end-stage disease (excluded).
    pub eskd_fraction: f64,
    /// Share of all patients with an extra outpatient encounter.
    pub other_encounter_fraction: f64,
    /// Chance of a second creatinine on a hospital day.
    pub second_lab_prob: f64,
    /// Chance that a day with no required lab has none.
    pub skip_lab_prob: f64,
    /// Chance an AKI encounter carries an AKI diagnosis code.
    pub aki_code_sensitivity: f64,
    /// Chance a non-AKI encounter carries one.
    pub aki_code_false_positive: f64,
    /// Chance a planted kidney history code is left out.
    pub missing_code_rate: f64,
    /// Chance a patient without CKD gets a CKD code anyway.
    pub wrong_code_rate: f64,
}

impl Default for CohortPlan {
    fn default() -> Self {
        CohortPlan {
            patients: 1000,
            seed: 1,
            aki_prevalence: 0.21,
            stage_mix: [0.628, 0.193, 0.179],
            rrt_fraction: 0.25,
            duration_mix: [0.38, 0.47, 0.15],
            recurrent_fraction: 0.12,
            recovery_fraction: 0.7,
            ckd_prevalence: 0.17,
            ckd_mix: [0.73, 0.20, 0.07],
            insufficient_fraction: 0.01,
            recent_aki_fraction: 0.1,
            recent_akd_share: 0.3,
            eskd_fraction: 0.02,
            other_encounter_fraction: 0.1,
            second_lab_prob: 0.2,
            skip_lab_prob: 0.15,
            aki_code_sensitivity: 0.5,
            aki_code_false_positive: 0.05,
            missing_code_rate: 0.0,
            wrong_code_rate: 0.0,
        }
    }
}

impl CohortPlan {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InfeasiblePlan(m));
        if self.patients == 0 {
            return bad("no patients".into());
        }
        let fractions = [
            ("aki_prevalence", self.aki_prevalence),
            ("rrt_fraction", self.rrt_fraction),
            ("recurrent_fraction", self.recurrent_fraction),
            ("recovery_fraction", self.recovery_fraction),
            ("ckd_prevalence", self.ckd_prevalence),
            ("insufficient_fraction", self.insufficient_fraction),
            ("recent_aki_fraction", self.recent_aki_fraction),
            ("recent_akd_share", self.recent_akd_share),
            ("eskd_fraction", self.eskd_fraction),
            ("other_encounter_fraction", self.other_encounter_fraction),
            ("second_lab_prob", self.second_lab_prob),
            ("skip_lab_prob", self.skip_lab_prob),
            ("aki_code_sensitivity", self.aki_code_sensitivity),
            ("aki_code_false_positive", self.aki_code_false_positive),
            ("missing_code_rate", self.missing_code_rate),
            ("wrong_code_rate", self.wrong_code_rate),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        let mixes = [
            ("stage_mix", self.stage_mix, self.aki_prevalence),
            ("duration_mix", self.duration_mix, self.aki_prevalence),
            ("ckd_mix", self.ckd_mix, self.ckd_prevalence),
        ];
        for (name, mix, parent) in mixes {
            if mix.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("{name} has a share outside [0, 1]"));
            }
            let sum: f64 = mix.iter().sum();
            if parent > 0.0 && (sum - 1.0).abs() > 1e-6 {
                return bad(format!("{name} sums to {sum}, not 1"));
            }
        }
        if self.aki_prevalence == 0.0 && self.stage_mix.iter().any(|v| *v > 0.0) {
            return bad("stage mix is set but AKI prevalence is zero".into());
        }
        if self.ckd_prevalence == 0.0 && self.ckd_mix.iter().any(|v| *v > 0.0) {
            return bad("CKD mix is set but CKD prevalence is zero".into());
        }
        if self.rrt_fraction > 0.0 && self.stage_mix[2] == 0.0 && self.aki_prevalence > 0.0 {
            return bad("RRT requested without stage-3 AKI".into());
        }
        if self.rrt_fraction > 0.0 && self.duration_mix[0] >= 1.0 && self.aki_prevalence > 0.0 {
            return bad("RRT needs episodes longer than two days".into());
        }
        Ok(())
    }

    /// A plan with no AKI and no CKD.
    pub fn healthy(patients: usize, seed: u64) -> CohortPlan {
        CohortPlan {
            patients,
            seed,
            aki_prevalence: 0.0,
            stage_mix: [0.0; 3],
            ckd_prevalence: 0.0,
            ckd_mix: [0.0; 3],
            ..CohortPlan::default()
        }
    }
}

/// Split `n` items by `shares` so the counts sum to `n`, giving leftovers
/// to the largest remainders (earlier shares win ties).
pub fn allocate(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    if shares.is_empty() {
        return Vec::new();
    }
    if total <= 0.0 {
        let mut v = vec![0; shares.len()];
        v[0] = n;
        return v;
    }
    let exact: Vec<f64> = shares.iter().map(|s| n as f64 * s / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// `round(n * fraction)`, with halves rounded up.
pub fn share_of(n: usize, fraction: f64) -> usize {
    allocate(n, &[fraction, 1.0 - fraction])[0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEpisode {
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub start: NaiveDateTime,
    pub max_stage: AkiStage,
    pub duration_class: DurationClass,
    pub recovered: bool,
    pub rrt_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPhenotype {
    pub ckd: CkdCategory,
    pub recent_aki: RecentAki,
    pub aki: bool,
    pub max_stage: AkiStage,
    pub episodes: Vec<PlantedEpisode>,
    pub rrt_days: usize,
    pub recurrent: bool,
}

/// Planted outcome for one generated encounter. `truth` is the clinical
/// state; `expected` is what the rules should report from the emitted
/// records, which differs only where coding noise was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub patient_id: String,
    pub encounter_id: String,
    pub excluded: Option<ExclusionReason>,
    pub truth: Option<PlantedPhenotype>,
    pub expected: Option<PlantedPhenotype>,
    pub coded_aki: bool,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |e| SynthError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Labels as JSON lines.
pub fn write_labels(path: impl AsRef<Path>, labels: &[GroundTruthLabel]) -> Result<(), SynthError> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for l in labels {
        let line = serde_json::to_string(l).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

/// Chart-review style labels (`encounter_deiden_id,gold_ckd,gold_aki`)
/// taken from the clinical truth of included encounters.
pub fn write_gold_labels(path: impl AsRef<Path>, labels: &[GroundTruthLabel]) -> Result<(), SynthError> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    writeln!(f, "encounter_deiden_id,gold_ckd,gold_aki").map_err(io_err(path))?;
    for l in labels {
        if let Some(t) = &l.truth {
            writeln!(f, "{},{},{}", l.encounter_id, u8::from(t.ckd.is_ckd()), u8::from(t.aki)).map_err(io_err(path))?;
        }
    }
    f.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(210, &[0.628, 0.193, 0.179]), vec![132, 40, 38]);
        assert_eq!(allocate(10, &[0.5, 0.5]), vec![5, 5]);
        assert_eq!(share_of(1000, 0.21), 210);
        assert_eq!(allocate(5, &[0.0, 0.0]), vec![5, 0]);
    }

    #[test]
    fn plan_validation() {
        assert!(CohortPlan::default().validate().is_ok());
        assert!(CohortPlan::healthy(100, 7).validate().is_ok());
        let p = CohortPlan {
            aki_prevalence: 0.0,
            ..CohortPlan::default()
        };
        assert!(matches!(p.validate(), Err(SynthError::InfeasiblePlan(_))));
        let p = CohortPlan {
            stage_mix: [0.5, 0.5, 0.5],
            ..CohortPlan::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn allocation_sums(n in 0usize..5000, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let v = allocate(n, &[a, b, c]);
            prop_assert_eq!(v.iter().sum::<usize>(), n);
            let total = a + b + c;
            if total > 0.0 {
                for (k, s) in v.iter().zip([a, b, c]) {
                    prop_assert!((*k as f64 - n as f64 * s / total).abs() < 1.0 + 1e-9);
                }
            }
        }
    }
}
