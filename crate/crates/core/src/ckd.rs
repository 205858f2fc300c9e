//! CKD status on admission: category, recent-AKI substatus and G-stage.

use chrono::{Days, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code_tables::{normalize_code, Category, CodeTable};
use crate::ingest::{age_at, Admission, CodeEvent, CreatinineMeasurement, PatientRecord, Sex, ADULT_AGE};
use crate::refcr::{LabPoint, ReferenceCreatinine};
use crate::COMPARISON_EPS;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum CkdError {
    #[error("creatinine must be positive, got {0}")]
    NonPositiveCreatinine(f64),
    #[error("eGFR needs a known sex")]
    UnknownSex,
}

/// CKD-EPI 2009 creatinine equation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CkdEpiParams {
    pub scale: f64,
    pub kappa_female: f64,
    pub kappa_male: f64,
    pub alpha_female: f64,
    pub alpha_male: f64,
    pub slope_exponent: f64,
    pub age_base: f64,
    pub female_factor: f64,
    pub black_factor: f64,
}

impl Default for CkdEpiParams {
    fn default() -> Self {
        CkdEpiParams {
            scale: 141.0,
            kappa_female: 0.7,
            kappa_male: 0.9,
            alpha_female: -0.329,
            alpha_male: -0.411,
            slope_exponent: -1.209,
            age_base: 0.993,
            female_factor: 1.018,
            black_factor: 1.159,
        }
    }
}

/// eGFR in ml/min/1.73m².
pub fn ckd_epi_egfr(scr: f64, age: f64, sex: Sex, race_black: bool, p: &CkdEpiParams) -> Result<f64, CkdError> {
    if scr.is_nan() || scr <= 0.0 {
        return Err(CkdError::NonPositiveCreatinine(scr));
    }
    let (kappa, alpha, sex_factor) = match sex {
        Sex::Female => (p.kappa_female, p.alpha_female, p.female_factor),
        Sex::Male => (p.kappa_male, p.alpha_male, 1.0),
        Sex::Unknown => return Err(CkdError::UnknownSex),
    };
    let r = scr / kappa;
    let race_factor = if race_black { p.black_factor } else { 1.0 };
    Ok(p.scale
        * r.min(1.0).powf(alpha)
        * r.max(1.0).powf(p.slope_exponent)
        * p.age_base.powf(age)
        * sex_factor
        * race_factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GStage {
    G1,
    G2,
    G3a,
    G3b,
    G4,
    G5,
    Unstageable,
}

impl GStage {
    pub fn as_str(self) -> &'static str {
        match self {
            GStage::G1 => "G1",
            GStage::G2 => "G2",
            GStage::G3a => "G3A",
            GStage::G3b => "G3B",
            GStage::G4 => "G4",
            GStage::G5 => "G5",
            GStage::Unstageable => "UNSTAGEABLE",
        }
    }
}

/// KDIGO G-stage. A boundary value belongs to the better stage.
pub fn g_stage(egfr: f64) -> GStage {
    if egfr.is_nan() || egfr <= 0.0 || !egfr.is_finite() {
        GStage::Unstageable
    } else if egfr >= 90.0 {
        GStage::G1
    } else if egfr >= 60.0 {
        GStage::G2
    } else if egfr >= 45.0 {
        GStage::G3a
    } else if egfr >= 30.0 {
        GStage::G3b
    } else if egfr >= 15.0 {
        GStage::G4
    } else {
        GStage::G5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CkdCategory {
    InsufficientData,
    NoCkd,
    CkdByHistory,
    CkdByCreatinine,
    CkdAfterTransplant,
}

impl CkdCategory {
    pub const ALL: [CkdCategory; 5] = [
        CkdCategory::InsufficientData,
        CkdCategory::NoCkd,
        CkdCategory::CkdByHistory,
        CkdCategory::CkdByCreatinine,
        CkdCategory::CkdAfterTransplant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CkdCategory::InsufficientData => "INSUFFICIENT_DATA",
            CkdCategory::NoCkd => "NO_CKD",
            CkdCategory::CkdByHistory => "CKD_BY_HISTORY",
            CkdCategory::CkdByCreatinine => "CKD_BY_CREATININE",
            CkdCategory::CkdAfterTransplant => "CKD_AFTER_TRANSPLANT",
        }
    }

    pub fn is_ckd(self) -> bool {
        matches!(
            self,
            CkdCategory::CkdByHistory | CkdCategory::CkdByCreatinine | CkdCategory::CkdAfterTransplant
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecentAki {
    None,
    RecoveredAkiOnAdmission,
    AkdNonrecoveredOnAdmission,
}

impl RecentAki {
    pub fn as_str(self) -> &'static str {
        match self {
            RecentAki::None => "NONE",
            RecentAki::RecoveredAkiOnAdmission => "RECOVERED_AKI_ON_ADMISSION",
            RecentAki::AkdNonrecoveredOnAdmission => "AKD_NONRECOVERED_ON_ADMISSION",
        }
    }
}

/// Two pre-admission labs satisfying the creatinine criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreatinineWitness {
    pub first: LabPoint,
    pub second: LabPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkdAssessment {
    pub category: CkdCategory,
    pub recent_aki: RecentAki,
    pub g_stage: GStage,
    /// eGFR of the admission reference creatinine; absent when unstageable.
    pub reference_egfr: Option<f64>,
    pub witness: Option<CreatinineWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CkdConfig {
    pub egfr_params: CkdEpiParams,
    pub egfr_threshold: f64,
    pub min_separation_days: i64,
    /// Also require a diabetes or hypertension code for the creatinine criterion.
    pub require_risk_factor_codes: bool,
    /// Code prefixes (normalized, any system) counting as CKD risk factors.
    pub risk_factor_codes: Vec<String>,
    pub recent_aki_days: i64,
    /// Rise over reference above which a prior AKI is taken as not recovered.
    pub nonrecovery_ratio: f64,
    pub nonrecovery_rise: f64,
    pub ignore_nonspecific_aki_codes: bool,
}

impl Default for CkdConfig {
    fn default() -> Self {
        CkdConfig {
            egfr_params: CkdEpiParams::default(),
            egfr_threshold: 60.0,
            min_separation_days: 90,
            require_risk_factor_codes: false,
            risk_factor_codes: ["250", "401", "402", "403", "404", "405", "E10", "E11", "E13", "I10", "I11", "I12", "I13", "I15"]
                .map(String::from)
                .to_vec(),
            recent_aki_days: 90,
            nonrecovery_ratio: 1.5,
            nonrecovery_rise: 0.3,
            ignore_nonspecific_aki_codes: false,
        }
    }
}

/// Outcome of an AKI episode from an earlier encounter of the same patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorAkiOutcome {
    pub episode_end: NaiveDateTime,
    pub recovered: bool,
}

/// Demographics needed for eGFR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Demographics {
    pub birth_date: NaiveDate,
    pub sex: Sex,
    pub race_black: bool,
}

impl From<&PatientRecord> for Demographics {
    fn from(p: &PatientRecord) -> Self {
        Demographics {
            birth_date: p.birth_date,
            sex: p.sex,
            race_black: p.race_black,
        }
    }
}

impl Demographics {
    pub fn egfr_at(&self, scr: f64, at: NaiveDateTime, params: &CkdEpiParams) -> Result<f64, CkdError> {
        let age = age_at(self.birth_date, at) as f64;
        ckd_epi_egfr(scr, age, self.sex, self.race_black, params)
    }
}

/// Two pre-admission labs at least `min_separation_days` apart, both with
/// eGFR below threshold and taken in adulthood. The witness is the pair
/// with the largest separation.
pub fn ckd_by_creatinine_criteria(
    pre_admission_labs: &[CreatinineMeasurement],
    demo: &Demographics,
    cfg: &CkdConfig,
) -> Option<CreatinineWitness> {
    let qualifies = |l: &CreatinineMeasurement| {
        age_at(demo.birth_date, l.taken_at) >= ADULT_AGE
            && demo
                .egfr_at(l.value, l.taken_at, &cfg.egfr_params)
                .is_ok_and(|e| e < cfg.egfr_threshold)
    };
    let mut first: Option<&CreatinineMeasurement> = None;
    let mut last: Option<&CreatinineMeasurement> = None;
    for l in pre_admission_labs.iter().filter(|l| qualifies(l)) {
        if first.is_none_or(|f| l.taken_at < f.taken_at) {
            first = Some(l);
        }
        if last.is_none_or(|f| l.taken_at >= f.taken_at) {
            last = Some(l);
        }
    }
    let (first, last) = (first?, last?);
    (last.taken_at - first.taken_at >= Duration::days(cfg.min_separation_days)).then(|| CreatinineWitness {
        first: first.into(),
        second: last.into(),
    })
}

fn pre_admission_labs<'a>(patient: &'a PatientRecord, encounter: &Admission) -> &'a [CreatinineMeasurement] {
    &patient.labs[..patient.labs.partition_point(|l| l.taken_at < encounter.admit)]
}

/// Whether a code event is an AKI history code under `cfg`.
pub fn is_aki_history_code(table: &CodeTable, c: &CodeEvent, cfg: &CkdConfig) -> bool {
    let set = if cfg.ignore_nonspecific_aki_codes {
        table.classify_specific(&c.code, c.system)
    } else {
        table.classify(&c.code, c.system)
    };
    set.contains(Category::AkiHistory)
}

/// Whether an AKI history code is dated within `[from, to]`.
pub fn has_aki_code_between(
    patient: &PatientRecord,
    table: &CodeTable,
    from: NaiveDate,
    to: NaiveDate,
    cfg: &CkdConfig,
) -> bool {
    patient
        .code_events()
        .any(|c| c.date >= from && c.date <= to && is_aki_history_code(table, c, cfg))
}

/// Recent-AKI substatus on admission. `reference` is the admission
/// reference creatinine, used to judge recovery when no earlier episode is
/// known.
pub fn recent_aki_status(
    patient: &PatientRecord,
    encounter: &Admission,
    table: &CodeTable,
    prior: &[PriorAkiOutcome],
    reference: Option<f64>,
    cfg: &CkdConfig,
) -> RecentAki {
    let admit_date = encounter.admit.date();
    let Some(day_before) = admit_date.checked_sub_days(Days::new(1)) else {
        return RecentAki::None;
    };
    let from = admit_date - Duration::days(cfg.recent_aki_days);
    if !has_aki_code_between(patient, table, from, day_before, cfg) {
        return RecentAki::None;
    }
    let lookback = encounter.admit - Duration::days(cfg.recent_aki_days);
    let latest = prior.iter().max_by_key(|o| o.episode_end);
    let recovered = match latest {
        Some(o) if o.episode_end >= lookback => o.recovered,
        _ => match (pre_admission_labs(patient, encounter).last(), reference) {
            (Some(last), Some(r)) => {
                !(last.value >= cfg.nonrecovery_ratio * r - COMPARISON_EPS
                    || last.value - r >= cfg.nonrecovery_rise - COMPARISON_EPS)
            }
            _ => true,
        },
    };
    if recovered {
        RecentAki::RecoveredAkiOnAdmission
    } else {
        RecentAki::AkdNonrecoveredOnAdmission
    }
}

fn has_risk_factor(patient: &PatientRecord, before: NaiveDate, cfg: &CkdConfig) -> bool {
    patient.diagnoses.iter().filter(|c| c.date < before).any(|c| {
        normalize_code(&c.code, c.system)
            .is_ok_and(|code| cfg.risk_factor_codes.iter().any(|p| code.starts_with(p.as_str())))
    })
}

/// CKD status on admission. `reference` is the reference creatinine at the
/// first in-encounter creatinine; `prior` lists AKI episodes of the
/// patient's earlier encounters.
pub fn identify_ckd(
    patient: &PatientRecord,
    encounter: &Admission,
    table: &CodeTable,
    reference: Option<&ReferenceCreatinine>,
    prior: &[PriorAkiOutcome],
    cfg: &CkdConfig,
) -> CkdAssessment {
    let admit_date = encounter.admit.date();
    let mut any_prior_code = false;
    let mut transplant = false;
    let mut history = false;
    for c in patient.code_events().filter(|c| c.date < admit_date) {
        any_prior_code = true;
        let set = table.classify(&c.code, c.system);
        transplant |= set.contains(Category::KidneyTransplant);
        history |= set.contains(Category::Ckd);
    }
    let pre_labs = pre_admission_labs(patient, encounter);
    let demo = Demographics::from(patient);
    let witness = ckd_by_creatinine_criteria(pre_labs, &demo, cfg)
        .filter(|_| !cfg.require_risk_factor_codes || has_risk_factor(patient, admit_date, cfg));

    let category = if transplant {
        CkdCategory::CkdAfterTransplant
    } else if history {
        CkdCategory::CkdByHistory
    } else if witness.is_some() {
        CkdCategory::CkdByCreatinine
    } else if !any_prior_code && pre_labs.is_empty() {
        CkdCategory::InsufficientData
    } else {
        CkdCategory::NoCkd
    };

    if category == CkdCategory::InsufficientData {
        return CkdAssessment {
            category,
            recent_aki: RecentAki::None,
            g_stage: GStage::Unstageable,
            reference_egfr: None,
            witness: None,
        };
    }
    let reference_egfr = reference.and_then(|r| demo.egfr_at(r.value, encounter.admit, &cfg.egfr_params).ok());
    CkdAssessment {
        category,
        recent_aki: recent_aki_status(patient, encounter, table, prior, reference.map(|r| r.value), cfg),
        g_stage: reference_egfr.map_or(GStage::Unstageable, g_stage),
        reference_egfr,
        witness: witness.filter(|_| category == CkdCategory::CkdByCreatinine),
    }
}
