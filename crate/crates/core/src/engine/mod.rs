//! Per-encounter orchestration, cohort runs and reports.

mod phenotype;
mod report;
mod session;

pub use phenotype::*;
pub use report::*;
pub use session::*;

use std::sync::Arc;

use chrono::{Duration, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aki::{assess_point, build_episodes, encounter_rollup, AkiPointAssessment, KdigoThresholds, RrtDayLedger};
use crate::ckd::{has_aki_code_between, identify_ckd, CkdConfig, PriorAkiOutcome};
use crate::code_tables::CodeTable;
use crate::ingest::{screen_encounter, Admission, CreatinineMeasurement, ExclusionReason, ExclusionTally, PatientRecord, StudyWindow};
use crate::refcr::{rolling_reference, uses_rolling_rule, FirstWeekCandidates, LabPoint, RefCrConfig, ReferenceCreatinine};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("encounter {encounter_id}: no creatinine during the stay")]
    NoCreatinine { encounter_id: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("event at {at} is older than the last processed event at {last}")]
    OutOfOrderEvent { at: NaiveDateTime, last: NaiveDateTime },
    #[error("could not start thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub reference: RefCrConfig,
    pub kdigo: KdigoThresholds,
    pub ckd: CkdConfig,
    pub study_window: StudyWindow,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !self.kdigo.is_valid() {
            return Err(EngineError::InvalidConfig("KDIGO thresholds must be positive and increasing".into()));
        }
        if self.reference.first_week_hours <= 0 || self.reference.history_days <= 0 {
            return Err(EngineError::InvalidConfig("reference windows must be positive".into()));
        }
        if self.ckd.min_separation_days < 0 || self.ckd.recent_aki_days < 0 {
            return Err(EngineError::InvalidConfig("day counts must be non-negative".into()));
        }
        Ok(())
    }
}

/// Hex SHA-256 over the engine version, the configuration and the code table.
pub fn config_fingerprint(config: &EngineConfig, table: &CodeTable) -> String {
    let mut h = Sha256::new();
    h.update(ENGINE_VERSION.as_bytes());
    h.update(serde_json::to_vec(config).unwrap_or_default());
    h.update(serde_json::to_vec(table.entries()).unwrap_or_default());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct Engine {
    table: Arc<CodeTable>,
    config: EngineConfig,
    fingerprint: String,
}

/// An excluded encounter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub patient_id: String,
    pub encounter_id: String,
    pub reason: ExclusionReason,
}

/// An encounter that failed during phenotyping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub patient_id: String,
    pub encounter_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientOutcome {
    pub tally: ExclusionTally,
    pub phenotypes: Vec<EncounterPhenotype>,
    pub exclusions: Vec<ExclusionRecord>,
    pub errors: Vec<QuarantineRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRun {
    pub phenotypes: Vec<EncounterPhenotype>,
    pub exclusions: Vec<ExclusionRecord>,
    pub errors: Vec<QuarantineRecord>,
    pub tally: ExclusionTally,
    pub report: CohortReport,
}

/// Reference and stage for every in-encounter creatinine, in time order.
pub(crate) struct TriggerWalk {
    pub trace: Vec<ReferenceCreatinine>,
    pub assessments: Vec<AkiPointAssessment>,
}

pub(crate) fn reference_for_trigger(
    encounter: &Admission,
    labs_before: &[CreatinineMeasurement],
    trigger_at: NaiveDateTime,
    first_week: &FirstWeekCandidates,
    prior: Option<&ReferenceCreatinine>,
    cfg: &RefCrConfig,
) -> ReferenceCreatinine {
    match prior {
        Some(prior) if uses_rolling_rule(encounter, trigger_at, true, cfg) => {
            let from = trigger_at - Duration::hours(cfg.first_week_hours);
            let start = labs_before.partition_point(|l| l.taken_at <= from);
            let window = labs_before[start..]
                .iter()
                .filter(|l| l.taken_at < trigger_at)
                .map(LabPoint::from)
                .collect();
            rolling_reference(trigger_at, prior, window, cfg.rolling_mode)
        }
        _ => first_week.reference(trigger_at),
    }
}

impl Engine {
    pub fn new(table: CodeTable, config: EngineConfig) -> Result<Engine, EngineError> {
        Engine::with_shared_table(Arc::new(table), config)
    }

    pub fn with_shared_table(table: Arc<CodeTable>, config: EngineConfig) -> Result<Engine, EngineError> {
        config.validate()?;
        let fingerprint = config_fingerprint(&config, &table);
        Ok(Engine {
            table,
            config,
            fingerprint,
        })
    }

    pub fn table(&self) -> &CodeTable {
        &self.table
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn walk_triggers(&self, patient: &PatientRecord, encounter: &Admission, ledger: &RrtDayLedger) -> Result<TriggerWalk, EngineError> {
        let labs = &patient.labs;
        let start = labs.partition_point(|l| l.taken_at < encounter.admit);
        let end = labs.partition_point(|l| l.taken_at <= encounter.discharge);
        let first_week = FirstWeekCandidates::collect(encounter, &labs[..end], &self.config.reference).map_err(|_| {
            EngineError::NoCreatinine {
                encounter_id: encounter.encounter_id.clone(),
            }
        })?;
        let mut trace: Vec<ReferenceCreatinine> = Vec::with_capacity(end - start);
        let mut assessments = Vec::with_capacity(end - start);
        for i in start..end {
            let trigger = &labs[i];
            let r = reference_for_trigger(encounter, &labs[..i], trigger.taken_at, &first_week, trace.last(), &self.config.reference);
            let rrt = ledger.is_rrt(trigger.taken_at.date());
            assessments.push(assess_point(trigger, r.value, &labs[..=i], rrt, &self.config.kdigo));
            trace.push(r);
        }
        Ok(TriggerWalk { trace, assessments })
    }

    /// Phenotype one encounter. `patient.labs` must be in time order and the
    /// encounter must have passed the exclusion screen. `prior` lists AKI
    /// episodes from the patient's earlier encounters.
    pub fn phenotype_encounter(
        &self,
        patient: &PatientRecord,
        encounter: &Admission,
        prior: &[PriorAkiOutcome],
    ) -> Result<EncounterPhenotype, EngineError> {
        let ledger = RrtDayLedger::build(encounter, &patient.procedures, &patient.flowsheet, &self.table);
        let walk = self.walk_triggers(patient, encounter, &ledger)?;
        let ckd = identify_ckd(patient, encounter, &self.table, walk.trace.first(), prior, &self.config.ckd);
        let coded_aki = has_aki_code_between(
            patient,
            &self.table,
            encounter.admit.date(),
            encounter.discharge.date(),
            &self.config.ckd,
        );
        Ok(self.assemble(patient, encounter, ckd, walk, &ledger, coded_aki))
    }

    pub(crate) fn assemble(
        &self,
        patient: &PatientRecord,
        encounter: &Admission,
        ckd: crate::ckd::CkdAssessment,
        walk: TriggerWalk,
        ledger: &RrtDayLedger,
        coded_aki: bool,
    ) -> EncounterPhenotype {
        let episodes = build_episodes(encounter, &walk.assessments, ledger);
        let rollup = encounter_rollup(&episodes, ledger);
        EncounterPhenotype {
            patient_id: patient.patient_id.clone(),
            encounter_id: encounter.encounter_id.clone(),
            admit: encounter.admit,
            discharge: encounter.discharge,
            encounter_type: encounter.encounter_type,
            ckd,
            aki_detected: rollup.aki_detected,
            max_aki_stage: rollup.max_stage,
            episodes,
            rrt_days: rollup.rrt_days,
            recurrent_aki: rollup.recurrent,
            coded_aki,
            reference_trace: walk.trace,
            engine_version: ENGINE_VERSION.to_string(),
            config_fingerprint: self.fingerprint.clone(),
        }
    }

    /// Screen and phenotype every encounter of one patient, in admission
    /// order, feeding each encounter's episodes to the later ones.
    pub fn phenotype_patient(&self, patient: &PatientRecord) -> PatientOutcome {
        let mut out = PatientOutcome {
            tally: ExclusionTally::new(),
            ..Default::default()
        };
        let mut order: Vec<usize> = (0..patient.encounters.len()).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (&patient.encounters[a], &patient.encounters[b]);
            (ea.admit, &ea.encounter_id).cmp(&(eb.admit, &eb.encounter_id))
        });
        let mut prior: Vec<PriorAkiOutcome> = Vec::new();
        for i in order {
            let e = &patient.encounters[i];
            let screened = screen_encounter(patient, e, &self.table, &self.config.study_window);
            out.tally.record(screened.as_ref().map(|_| ()).map_err(|r| *r));
            match screened {
                Err(reason) => out.exclusions.push(ExclusionRecord {
                    patient_id: patient.patient_id.clone(),
                    encounter_id: e.encounter_id.clone(),
                    reason,
                }),
                Ok(adm) => match self.phenotype_encounter(patient, &adm, &prior) {
                    Ok(p) => {
                        prior.extend(p.episodes.iter().map(|ep| PriorAkiOutcome {
                            episode_end: ep.end,
                            recovered: ep.recovered,
                        }));
                        out.phenotypes.push(p);
                    }
                    Err(err) => out.errors.push(QuarantineRecord {
                        patient_id: patient.patient_id.clone(),
                        encounter_id: e.encounter_id.clone(),
                        reason: err.to_string(),
                    }),
                },
            }
        }
        out
    }

    /// Phenotype a cohort on `parallelism` threads (0 = all cores). Output
    /// is sorted by patient id and then admission time, whatever the thread
    /// count.
    pub fn phenotype_cohort(&self, patients: &[PatientRecord], parallelism: usize) -> Result<CohortRun, EngineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| EngineError::ThreadPool(e.to_string()))?;
        let mut outcomes: Vec<(&str, PatientOutcome)> = pool.install(|| {
            patients
                .par_iter()
                .map(|p| (p.patient_id.as_str(), self.phenotype_patient(p)))
                .collect()
        });
        outcomes.sort_by(|a, b| a.0.cmp(b.0));

        let mut run = CohortRun {
            phenotypes: Vec::new(),
            exclusions: Vec::new(),
            errors: Vec::new(),
            tally: ExclusionTally::new(),
            report: CohortReport::default(),
        };
        let mut acc = ReportAccumulator::default();
        for (_, o) in outcomes {
            for p in &o.phenotypes {
                acc.add(p);
            }
            run.tally.merge(&o.tally);
            run.phenotypes.extend(o.phenotypes);
            run.exclusions.extend(o.exclusions);
            run.errors.extend(o.errors);
        }
        run.report = acc.finish(run.tally.clone());
        Ok(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aki::AkiStage;
    use crate::ckd::{CkdCategory, GStage};
    use crate::code_tables::CodeSystem;
    use crate::ingest::{CodeEvent, Encounter, EncounterType, Sex};
    use chrono::NaiveDate;

    fn t(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
    }

    fn patient(id: &str, labs: &[(&str, f64)]) -> PatientRecord {
        let mut p = PatientRecord::new(id, NaiveDate::from_ymd_opt(1956, 2, 1).unwrap(), Sex::Male, "WHITE");
        p.encounters.push(Encounter {
            encounter_id: format!("{id}-E1"),
            admit: Some(t("2016-05-01 09:00")),
            discharge: Some(t("2016-05-06 18:00")),
            encounter_type: EncounterType::Inpatient,
        });
        p.labs = labs.iter().map(|(s, v)| CreatinineMeasurement::mg_dl(*v, t(s))).collect();
        p
    }

    fn engine() -> Engine {
        Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap()
    }

    #[test]
    fn stable_creatinine_no_ckd_no_aki() {
        let p = patient(
            "P1",
            &[("2016-01-10 08:00", 1.0), ("2016-05-01 10:00", 1.0), ("2016-05-02 06:00", 1.0), ("2016-05-03 06:00", 1.0)],
        );
        let out = engine().phenotype_patient(&p);
        let ph = &out.phenotypes[0];
        assert_eq!(ph.ckd.category, CkdCategory::NoCkd);
        assert!(!ph.aki_detected);
        assert_eq!(ph.max_aki_stage, AkiStage::None);
        assert_eq!(ph.reference_trace.len(), 3);
    }

    #[test]
    fn doubling_within_a_day_is_stage_two() {
        let p = patient("P1", &[("2016-05-01 10:00", 1.0), ("2016-05-02 06:00", 2.1)]);
        let ph = &engine().phenotype_patient(&p).phenotypes[0];
        assert!(ph.aki_detected);
        assert_eq!(ph.max_aki_stage, AkiStage::S2);
        assert_eq!(ph.episodes[0].start, t("2016-05-02 06:00"));
    }

    #[test]
    fn coded_ckd_with_flat_creatinine() {
        let mut p = patient("P1", &[("2016-05-01 10:00", 1.6), ("2016-05-02 06:00", 1.6), ("2016-05-03 06:00", 1.6)]);
        p.diagnoses.push(CodeEvent::new(NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(), "585.3", CodeSystem::Icd9Diag));
        let ph = &engine().phenotype_patient(&p).phenotypes[0];
        assert_eq!(ph.ckd.category, CkdCategory::CkdByHistory);
        assert_eq!(ph.ckd.g_stage, GStage::G3a);
        assert!(!ph.aki_detected);
    }

    #[test]
    fn cohort_order_and_parallelism() {
        let cohort = vec![
            patient("P2", &[("2016-05-01 10:00", 1.0), ("2016-05-02 06:00", 1.6)]),
            patient("P1", &[("2016-05-01 10:00", 1.0)]),
        ];
        let e = engine();
        let a = e.phenotype_cohort(&cohort, 1).unwrap();
        let b = e.phenotype_cohort(&cohort, 8).unwrap();
        assert_eq!(a.phenotypes, b.phenotypes);
        assert_eq!(a.phenotypes.len(), 2);
        assert_eq!(a.phenotypes[0].patient_id, "P1");
        assert_eq!(a.report.encounters, 2);
        assert_eq!(a.report.aki.aki, 1);
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = EngineConfig::default();
        cfg.kdigo.ratio_stage2 = 1.2;
        assert!(matches!(Engine::new(CodeTable::builtin(), cfg), Err(EngineError::InvalidConfig(_))));
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = engine();
        let mut cfg = EngineConfig::default();
        cfg.kdigo.abs_rise = 0.5;
        let b = Engine::new(CodeTable::builtin(), cfg).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), engine().fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
