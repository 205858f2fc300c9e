use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::aki::{AkiEpisode, AkiStage, DurationClass};
use crate::ckd::CkdAssessment;
use crate::ingest::{format_datetime, EncounterType};
use crate::refcr::ReferenceCreatinine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterPhenotype {
    pub patient_id: String,
    pub encounter_id: String,
    pub admit: NaiveDateTime,
    pub discharge: NaiveDateTime,
    pub encounter_type: EncounterType,
    pub ckd: CkdAssessment,
    pub aki_detected: bool,
    pub max_aki_stage: AkiStage,
    pub episodes: Vec<AkiEpisode>,
    pub rrt_days: usize,
    pub recurrent_aki: bool,
    /// An AKI history code is dated within the stay.
    pub coded_aki: bool,
    pub reference_trace: Vec<ReferenceCreatinine>,
    pub engine_version: String,
    pub config_fingerprint: String,
}

/// Two-way trajectory split of an AKI encounter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Trajectory {
    RapidReversal,
    Persistent,
}

impl Trajectory {
    pub fn as_str(self) -> &'static str {
        match self {
            Trajectory::RapidReversal => "RAPID_REVERSAL",
            Trajectory::Persistent => "PERSISTENT",
        }
    }
}

pub const PHENOTYPE_CSV_COLUMNS: [&str; 22] = [
    "patient_id",
    "encounter_id",
    "admit",
    "discharge",
    "encounter_type",
    "ckd_category",
    "recent_aki",
    "g_stage",
    "reference_egfr",
    "admission_reference_creatinine",
    "aki_detected",
    "max_aki_stage",
    "episode_count",
    "first_episode_start",
    "longest_duration_class",
    "trajectory",
    "recovered_all",
    "rrt_days",
    "recurrent_aki",
    "coded_aki",
    "engine_version",
    "config_fingerprint",
];

impl EncounterPhenotype {
    /// Persistent when any episode lasted 48 hours or more.
    pub fn trajectory(&self) -> Option<Trajectory> {
        if self.episodes.is_empty() {
            None
        } else if self
            .episodes
            .iter()
            .any(|e| e.duration_class != DurationClass::RapidReversal)
        {
            Some(Trajectory::Persistent)
        } else {
            Some(Trajectory::RapidReversal)
        }
    }

    /// Reference creatinine at the first in-encounter creatinine.
    pub fn admission_reference(&self) -> Option<f64> {
        self.reference_trace.first().map(|r| r.value)
    }

    pub fn csv_row(&self) -> Vec<String> {
        let b = |v: bool| if v { "1" } else { "0" }.to_string();
        let longest = self
            .episodes
            .iter()
            .max_by(|a, b| a.duration_hours.total_cmp(&b.duration_hours))
            .map(|e| e.duration_class.as_str());
        vec![
            self.patient_id.clone(),
            self.encounter_id.clone(),
            format_datetime(self.admit),
            format_datetime(self.discharge),
            self.encounter_type.as_str().to_string(),
            self.ckd.category.as_str().to_string(),
            self.ckd.recent_aki.as_str().to_string(),
            self.ckd.g_stage.as_str().to_string(),
            self.ckd.reference_egfr.map(|e| format!("{e:.4}")).unwrap_or_default(),
            self.admission_reference().map(|v| v.to_string()).unwrap_or_default(),
            b(self.aki_detected),
            self.max_aki_stage.as_str().to_string(),
            self.episodes.len().to_string(),
            self.episodes.first().map(|e| format_datetime(e.start)).unwrap_or_default(),
            longest.unwrap_or_default().to_string(),
            self.trajectory().map(|t| t.as_str()).unwrap_or_default().to_string(),
            b(self.aki_detected && self.episodes.iter().all(|e| e.recovered)),
            self.rrt_days.to_string(),
            b(self.recurrent_aki),
            b(self.coded_aki),
            self.engine_version.clone(),
            self.config_fingerprint.clone(),
        ]
    }
}
