use std::slice;

use chrono::NaiveDateTime;

use super::{reference_for_trigger, Engine, EncounterPhenotype, EngineError, TriggerWalk};
use crate::aki::{assess_point, rrt_on_day, AkiPointAssessment, RrtDayLedger};
use crate::ckd::{identify_ckd, is_aki_history_code, CkdAssessment, PriorAkiOutcome};
use crate::ingest::{Admission, CodeEvent, CreatinineMeasurement, FlowsheetEntry, PatientRecord};
use crate::refcr::{FirstWeekCandidates, ReferenceCreatinine};

/// One clinical event for a streaming session.
#[derive(Debug, Clone, PartialEq)]
pub enum EncounterEvent {
    Creatinine(CreatinineMeasurement),
    Procedure(CodeEvent),
    Flowsheet(FlowsheetEntry),
    Diagnosis(CodeEvent),
}

impl EncounterEvent {
    /// Event time; dated codes count from midnight.
    pub fn timestamp(&self) -> NaiveDateTime {
        match self {
            EncounterEvent::Creatinine(l) => l.taken_at,
            EncounterEvent::Procedure(c) | EncounterEvent::Diagnosis(c) => c.date.and_hms_opt(0, 0, 0).unwrap_or_default(),
            EncounterEvent::Flowsheet(f) => f.recorded_at,
        }
    }
}

/// All events of a patient record as one time-ordered stream. Ties keep
/// the order labs, procedures, flowsheet, diagnoses.
pub fn patient_events(patient: &PatientRecord) -> Vec<EncounterEvent> {
    let mut events: Vec<EncounterEvent> = patient
        .labs
        .iter()
        .cloned()
        .map(EncounterEvent::Creatinine)
        .chain(patient.procedures.iter().cloned().map(EncounterEvent::Procedure))
        .chain(patient.flowsheet.iter().cloned().map(EncounterEvent::Flowsheet))
        .chain(patient.diagnoses.iter().cloned().map(EncounterEvent::Diagnosis))
        .collect();
    events.sort_by_key(EncounterEvent::timestamp);
    events
}

/// Incremental phenotyping of one encounter as events arrive.
#[derive(Debug, Clone)]
pub struct EncounterSession<'e> {
    engine: &'e Engine,
    patient: PatientRecord,
    encounter: Admission,
    prior: Vec<PriorAkiOutcome>,
    ledger: RrtDayLedger,
    first_week: Option<FirstWeekCandidates>,
    trace: Vec<ReferenceCreatinine>,
    assessments: Vec<AkiPointAssessment>,
    lab_index: Vec<usize>,
    ckd: Option<CkdAssessment>,
    coded_aki: bool,
    last: Option<NaiveDateTime>,
    current: Option<EncounterPhenotype>,
}

impl<'e> EncounterSession<'e> {
    /// Start a session. `patient` holds the history known so far and is
    /// processed as if its events had already been fed.
    pub fn new(engine: &'e Engine, mut patient: PatientRecord, encounter: Admission, prior: Vec<PriorAkiOutcome>) -> Self {
        patient.normalize_order();
        let history = patient_events(&patient);
        let mut empty = patient;
        empty.labs.clear();
        empty.procedures.clear();
        empty.flowsheet.clear();
        empty.diagnoses.clear();
        let mut s = EncounterSession {
            engine,
            ledger: RrtDayLedger::build(&encounter, &[], &[], engine.table()),
            patient: empty,
            encounter,
            prior,
            first_week: None,
            trace: Vec::new(),
            assessments: Vec::new(),
            lab_index: Vec::new(),
            ckd: None,
            coded_aki: false,
            last: None,
            current: None,
        };
        for e in history {
            // the history is sorted, so this cannot fail
            let _ = s.feed(e);
        }
        s
    }

    pub fn patient(&self) -> &PatientRecord {
        &self.patient
    }

    pub fn encounter(&self) -> &Admission {
        &self.encounter
    }

    /// Phenotype as of the last event, once a creatinine has been seen.
    pub fn current(&self) -> Option<&EncounterPhenotype> {
        self.current.as_ref()
    }

    /// Apply one event. Returns the updated phenotype when the event changed
    /// it.
    pub fn feed(&mut self, event: EncounterEvent) -> Result<Option<EncounterPhenotype>, EngineError> {
        let at = event.timestamp();
        if let Some(last) = self.last {
            if at < last {
                return Err(EngineError::OutOfOrderEvent { at, last });
            }
        }
        self.last = Some(at);
        let table = self.engine.table();
        let changed = match event {
            EncounterEvent::Creatinine(l) => {
                self.patient.labs.push(l);
                self.add_trigger()
            }
            EncounterEvent::Procedure(c) => {
                let rrt = rrt_on_day(c.date, slice::from_ref(&c), &[], table);
                self.patient.procedures.push(c);
                rrt && self.mark_rrt(at)
            }
            EncounterEvent::Flowsheet(f) => {
                let rrt = rrt_on_day(f.recorded_at.date(), &[], slice::from_ref(&f), table);
                self.patient.flowsheet.push(f);
                rrt && self.mark_rrt(at)
            }
            EncounterEvent::Diagnosis(c) => {
                let in_stay = c.date >= self.encounter.admit.date() && c.date <= self.encounter.discharge.date();
                let aki = in_stay && !self.coded_aki && is_aki_history_code(table, &c, &self.engine.config().ckd);
                self.patient.diagnoses.push(c);
                self.coded_aki |= aki;
                aki
            }
        };
        if changed && self.ckd.is_some() {
            self.refresh();
            return Ok(self.current.clone());
        }
        Ok(None)
    }

    fn add_trigger(&mut self) -> bool {
        let labs = &self.patient.labs;
        let i = labs.len() - 1;
        let trigger = &labs[i];
        if !self.encounter.contains(trigger.taken_at) {
            return false;
        }
        let cfg = self.engine.config();
        if self.first_week.is_none() {
            self.first_week = FirstWeekCandidates::collect(&self.encounter, labs, &cfg.reference).ok();
        }
        let Some(first_week) = &self.first_week else {
            return false;
        };
        let r = reference_for_trigger(&self.encounter, &labs[..i], trigger.taken_at, first_week, self.trace.last(), &cfg.reference);
        let rrt = self.ledger.is_rrt(trigger.taken_at.date());
        self.assessments
            .push(assess_point(trigger, r.value, labs, rrt, &cfg.kdigo));
        self.lab_index.push(i);
        self.trace.push(r);
        if self.ckd.is_none() {
            self.ckd = Some(identify_ckd(
                &self.patient,
                &self.encounter,
                self.engine.table(),
                self.trace.first(),
                &self.prior,
                &cfg.ckd,
            ));
        }
        true
    }

    /// Mark an RRT day and re-stage that day's triggers.
    fn mark_rrt(&mut self, at: NaiveDateTime) -> bool {
        let date = at.date();
        if !self.ledger.mark(date) {
            return false;
        }
        let kdigo = &self.engine.config().kdigo;
        for (a, &i) in self.assessments.iter_mut().zip(&self.lab_index) {
            if a.at.date() == date {
                *a = assess_point(&self.patient.labs[i], a.reference, &self.patient.labs[..=i], true, kdigo);
            }
        }
        true
    }

    fn refresh(&mut self) {
        let Some(ckd) = self.ckd.clone() else {
            return;
        };
        let walk = TriggerWalk {
            trace: self.trace.clone(),
            assessments: self.assessments.clone(),
        };
        self.current = Some(
            self.engine
                .assemble(&self.patient, &self.encounter, ckd, walk, &self.ledger, self.coded_aki),
        );
    }
}

/// Feed one event to a session; see [`EncounterSession::feed`].
pub fn incremental_feed(session: &mut EncounterSession<'_>, event: EncounterEvent) -> Result<Option<EncounterPhenotype>, EngineError> {
    session.feed(event)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aki::AkiStage;
    use crate::code_tables::{CodeSystem, CodeTable};
    use crate::engine::EngineConfig;
    use crate::ingest::{EncounterType, Sex};
    use chrono::{Duration, NaiveDate};

    fn t(day: i64, hour: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2018, 2, 10).unwrap().and_hms_opt(hour, 0, 0).unwrap() + Duration::days(day)
    }

    fn setup() -> (Engine, PatientRecord, Admission) {
        let engine = Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap();
        let mut p = PatientRecord::new("P", NaiveDate::from_ymd_opt(1950, 1, 1).unwrap(), Sex::Female, "WHITE");
        p.labs.push(CreatinineMeasurement::mg_dl(0.8, t(-30, 9)));
        let adm = Admission {
            encounter_id: "E".into(),
            admit: t(0, 8),
            discharge: t(6, 18),
            encounter_type: EncounterType::Inpatient,
        };
        (engine, p, adm)
    }

    fn batch(engine: &Engine, s: &EncounterSession<'_>) -> EncounterPhenotype {
        engine.phenotype_encounter(s.patient(), s.encounter(), &[]).unwrap()
    }

    #[test]
    fn feeding_matches_batch() {
        let (engine, p, adm) = setup();
        let mut s = EncounterSession::new(&engine, p, adm, vec![]);
        assert!(s.current().is_none());
        for (d, v) in [(0, 0.8), (1, 1.0), (2, 1.3)] {
            let out = incremental_feed(&mut s, EncounterEvent::Creatinine(CreatinineMeasurement::mg_dl(v, t(d, 10))))
                .unwrap()
                .unwrap();
            assert_eq!(out, batch(&engine, &s));
        }
        let ph = s.current().unwrap();
        assert!(ph.aki_detected);
        assert_eq!(ph.episodes[0].start, t(2, 10));
        assert_eq!(ph.max_aki_stage, AkiStage::S1);
    }

    #[test]
    fn rrt_after_creatinine_restages() {
        let (engine, p, adm) = setup();
        let mut s = EncounterSession::new(&engine, p, adm, vec![]);
        s.feed(EncounterEvent::Creatinine(CreatinineMeasurement::mg_dl(0.8, t(1, 6)))).unwrap();
        let day = t(1, 6).date();
        let out = s
            .feed(EncounterEvent::Procedure(CodeEvent::new(day + Duration::days(1), "90935", CodeSystem::Cpt)))
            .unwrap()
            .unwrap();
        assert_eq!(out.max_aki_stage, AkiStage::S3Rrt);
        assert_eq!(out, batch(&engine, &s));
    }

    #[test]
    fn out_of_order_rejected() {
        let (engine, p, adm) = setup();
        let mut s = EncounterSession::new(&engine, p, adm, vec![]);
        s.feed(EncounterEvent::Creatinine(CreatinineMeasurement::mg_dl(0.8, t(2, 6)))).unwrap();
        let err = s
            .feed(EncounterEvent::Creatinine(CreatinineMeasurement::mg_dl(0.8, t(1, 6))))
            .unwrap_err();
        assert!(matches!(err, EngineError::OutOfOrderEvent { .. }));
    }
}
