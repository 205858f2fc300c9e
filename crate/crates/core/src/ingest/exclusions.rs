use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::model::*;
use crate::code_tables::{Category, CodeTable};

/// Minimum age at admission, in completed years.
pub const ADULT_AGE: u32 = 18;

/// Exclusion reasons, in the order they are tested. An encounter is tallied
/// under the first reason that applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    NotInpatientOrObservation,
    MissingTimestamps,
    EskdOnAdmission,
    NoCreatinine,
    OutsideStudyWindow,
    Under18,
}

impl ExclusionReason {
    pub const ORDER: [ExclusionReason; 6] = [
        ExclusionReason::NotInpatientOrObservation,
        ExclusionReason::MissingTimestamps,
        ExclusionReason::EskdOnAdmission,
        ExclusionReason::NoCreatinine,
        ExclusionReason::OutsideStudyWindow,
        ExclusionReason::Under18,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::NotInpatientOrObservation => "NOT_INPATIENT_OR_OBSERVATION",
            ExclusionReason::MissingTimestamps => "MISSING_TIMESTAMPS",
            ExclusionReason::EskdOnAdmission => "ESKD_ON_ADMISSION",
            ExclusionReason::NoCreatinine => "NO_CREATININE",
            ExclusionReason::OutsideStudyWindow => "OUTSIDE_STUDY_WINDOW",
            ExclusionReason::Under18 => "UNDER_18",
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Admission-date window; either bound may be open. Both bounds inclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl StudyWindow {
    pub fn unbounded() -> Self {
        StudyWindow::default()
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start.is_none_or(|s| d >= s) && self.end.is_none_or(|e| d <= e)
    }
}

/// Counts per exclusion reason, kept in test order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionTally {
    pub total: usize,
    pub included: usize,
    pub excluded: Vec<(ExclusionReason, usize)>,
}

impl ExclusionTally {
    pub fn new() -> Self {
        ExclusionTally {
            total: 0,
            included: 0,
            excluded: ExclusionReason::ORDER.iter().map(|r| (*r, 0)).collect(),
        }
    }

    pub fn record(&mut self, outcome: Result<(), ExclusionReason>) {
        self.total += 1;
        match outcome {
            Ok(()) => self.included += 1,
            Err(reason) => {
                if let Some(slot) = self.excluded.iter_mut().find(|(r, _)| *r == reason) {
                    slot.1 += 1;
                }
            }
        }
    }

    pub fn count(&self, reason: ExclusionReason) -> usize {
        self.excluded
            .iter()
            .find(|(r, _)| *r == reason)
            .map_or(0, |(_, n)| *n)
    }

    pub fn excluded_total(&self) -> usize {
        self.excluded.iter().map(|(_, n)| n).sum()
    }

    pub fn merge(&mut self, other: &ExclusionTally) {
        self.total += other.total;
        self.included += other.included;
        for (reason, n) in &other.excluded {
            if let Some(slot) = self.excluded.iter_mut().find(|(r, _)| r == reason) {
                slot.1 += n;
            }
        }
    }
}

/// Apply the cohort rules to one encounter.
pub fn screen_encounter(
    patient: &PatientRecord,
    encounter: &Encounter,
    table: &CodeTable,
    window: &StudyWindow,
) -> Result<Admission, ExclusionReason> {
    if !matches!(
        encounter.encounter_type,
        EncounterType::Inpatient | EncounterType::Observation
    ) {
        return Err(ExclusionReason::NotInpatientOrObservation);
    }
    let adm = encounter
        .admission()
        .ok_or(ExclusionReason::MissingTimestamps)?;
    let admit_date = adm.admit.date();
    let eskd = patient
        .code_events()
        .filter(|c| c.date <= admit_date)
        .any(|c| table.classify(&c.code, c.system).contains(Category::Eskd));
    if eskd {
        return Err(ExclusionReason::EskdOnAdmission);
    }
    if !patient.labs.iter().any(|l| adm.contains(l.taken_at)) {
        return Err(ExclusionReason::NoCreatinine);
    }
    if !window.contains(admit_date) {
        return Err(ExclusionReason::OutsideStudyWindow);
    }
    if age_at(patient.birth_date, adm.admit) < ADULT_AGE {
        return Err(ExclusionReason::Under18);
    }
    Ok(adm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncludedEncounter {
    pub patient_index: usize,
    pub admission: Admission,
}

/// Screen every encounter of every patient.
pub fn apply_exclusions(
    patients: &[PatientRecord],
    table: &CodeTable,
    window: &StudyWindow,
) -> (Vec<IncludedEncounter>, ExclusionTally) {
    let mut tally = ExclusionTally::new();
    let mut included = Vec::new();
    for (i, p) in patients.iter().enumerate() {
        for e in &p.encounters {
            let outcome = screen_encounter(p, e, table, window);
            tally.record(outcome.as_ref().map(|_| ()).map_err(|r| *r));
            if let Ok(admission) = outcome {
                included.push(IncludedEncounter {
                    patient_index: i,
                    admission,
                });
            }
        }
    }
    (included, tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_tables::CodeSystem;
    use chrono::NaiveDateTime;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
    }

    fn patient() -> PatientRecord {
        let mut p = PatientRecord::new("P1", NaiveDate::from_ymd_opt(1960, 1, 1).unwrap(), Sex::Male, "WHITE");
        p.encounters.push(Encounter {
            encounter_id: "E1".into(),
            admit: Some(ts("2014-05-01 08:00")),
            discharge: Some(ts("2014-05-04 12:00")),
            encounter_type: EncounterType::Inpatient,
        });
        for (t, v) in [("2014-05-01 09:00", 1.0), ("2014-05-02 06:00", 1.1), ("2014-05-03 06:00", 1.0)] {
            p.labs.push(CreatinineMeasurement::mg_dl(v, ts(t)));
        }
        p
    }

    #[test]
    fn inpatient_with_labs_is_included() {
        let p = patient();
        let t = CodeTable::builtin();
        let (inc, tally) = apply_exclusions(std::slice::from_ref(&p), &t, &StudyWindow::unbounded());
        assert_eq!(inc.len(), 1);
        assert_eq!(tally.included, 1);
        assert_eq!(tally.excluded_total(), 0);
    }

    #[test]
    fn prior_eskd_code_excludes() {
        let mut p = patient();
        p.diagnoses.push(CodeEvent::new(
            NaiveDate::from_ymd_opt(2013, 2, 1).unwrap(),
            "585.6",
            CodeSystem::Icd9Diag,
        ));
        let t = CodeTable::builtin();
        let r = screen_encounter(&p, &p.encounters[0], &t, &StudyWindow::unbounded());
        assert_eq!(r, Err(ExclusionReason::EskdOnAdmission));
    }

    #[test]
    fn eskd_code_after_admission_date_does_not_exclude() {
        let mut p = patient();
        p.diagnoses.push(CodeEvent::new(
            NaiveDate::from_ymd_opt(2014, 5, 3).unwrap(),
            "N18.6",
            CodeSystem::Icd10Diag,
        ));
        let t = CodeTable::builtin();
        assert!(screen_encounter(&p, &p.encounters[0], &t, &StudyWindow::unbounded()).is_ok());
    }

    #[test]
    fn observation_without_creatinine() {
        let mut p = patient();
        p.labs.clear();
        p.encounters[0].encounter_type = EncounterType::Observation;
        let t = CodeTable::builtin();
        let r = screen_encounter(&p, &p.encounters[0], &t, &StudyWindow::unbounded());
        assert_eq!(r, Err(ExclusionReason::NoCreatinine));
    }

    #[test]
    fn first_matching_reason_wins() {
        // outpatient and missing timestamps: tallied as outpatient only
        let mut p = patient();
        p.encounters[0].encounter_type = EncounterType::Other;
        p.encounters[0].admit = None;
        let t = CodeTable::builtin();
        let (_, tally) = apply_exclusions(std::slice::from_ref(&p), &t, &StudyWindow::unbounded());
        assert_eq!(tally.count(ExclusionReason::NotInpatientOrObservation), 1);
        assert_eq!(tally.count(ExclusionReason::MissingTimestamps), 0);
        assert_eq!(tally.excluded_total(), tally.total - tally.included);
    }

    #[test]
    fn study_window_and_age() {
        let p = patient();
        let t = CodeTable::builtin();
        let w = StudyWindow {
            start: NaiveDate::from_ymd_opt(2015, 1, 1),
            end: None,
        };
        assert_eq!(
            screen_encounter(&p, &p.encounters[0], &t, &w),
            Err(ExclusionReason::OutsideStudyWindow)
        );
        let mut young = patient();
        young.birth_date = NaiveDate::from_ymd_opt(1998, 1, 1).unwrap();
        assert_eq!(
            screen_encounter(&young, &young.encounters[0], &t, &StudyWindow::unbounded()),
            Err(ExclusionReason::Under18)
        );
    }
}
