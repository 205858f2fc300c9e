use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::code_tables::CodeSystem;

/// Conversion factor between µmol/L and mg/dL for serum creatinine.
pub const UMOL_PER_MG_DL: f64 = 88.42;

/// Upper bound of the plausibility gate, mg/dL (exclusive).
pub const MAX_PLAUSIBLE_SCR: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sex {
    Female,
    Male,
    Unknown,
}

impl Sex {
    pub fn parse(raw: &str) -> Sex {
        match raw.trim().to_ascii_uppercase().as_str() {
            "F" | "FEMALE" => Sex::Female,
            "M" | "MALE" => Sex::Male,
            _ => Sex::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "FEMALE",
            Sex::Male => "MALE",
            Sex::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EncounterType {
    Inpatient,
    Observation,
    Other,
}

impl EncounterType {
    pub fn parse(raw: &str) -> EncounterType {
        match raw.trim().to_ascii_uppercase().as_str() {
            "INPATIENT" => EncounterType::Inpatient,
            "OBSERVATION" => EncounterType::Observation,
            _ => EncounterType::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncounterType::Inpatient => "INPATIENT",
            EncounterType::Observation => "OBSERVATION",
            EncounterType::Other => "OTHER",
        }
    }
}

/// A hospital encounter as read from the encounters file. Timestamps may be
/// missing; such encounters are dropped by the exclusion screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub encounter_id: String,
    pub admit: Option<NaiveDateTime>,
    pub discharge: Option<NaiveDateTime>,
    pub encounter_type: EncounterType,
}

impl Encounter {
    pub fn admission(&self) -> Option<Admission> {
        match (self.admit, self.discharge) {
            (Some(admit), Some(discharge)) => Some(Admission {
                encounter_id: self.encounter_id.clone(),
                admit,
                discharge,
                encounter_type: self.encounter_type,
            }),
            _ => None,
        }
    }
}

/// An encounter with both timestamps present. `admit < discharge` is checked
/// at ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    pub encounter_id: String,
    pub admit: NaiveDateTime,
    pub discharge: NaiveDateTime,
    pub encounter_type: EncounterType,
}

impl Admission {
    pub fn contains(&self, t: NaiveDateTime) -> bool {
        self.admit <= t && t <= self.discharge
    }

    /// Calendar dates from admission to discharge, inclusive.
    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> {
        let first = self.admit.date();
        let last = self.discharge.date();
        first.iter_days().take_while(move |d| *d <= last)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatinineMeasurement {
    /// Serum creatinine, mg/dL.
    pub value: f64,
    pub taken_at: NaiveDateTime,
    pub source_unit: String,
}

impl CreatinineMeasurement {
    pub fn mg_dl(value: f64, taken_at: NaiveDateTime) -> Self {
        CreatinineMeasurement {
            value,
            taken_at,
            source_unit: "mg/dL".to_string(),
        }
    }
}

/// Dated diagnosis or procedure code as it appears in the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEvent {
    pub date: NaiveDate,
    pub code: String,
    pub system: CodeSystem,
}

impl CodeEvent {
    pub fn new(date: NaiveDate, code: &str, system: CodeSystem) -> Self {
        CodeEvent {
            date,
            code: code.to_string(),
            system,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DialysisVolumes {
    pub hemodialysis_intake: Option<f64>,
    pub hemodialysis_output: Option<f64>,
    pub peritoneal_dialysis_intake: Option<f64>,
    pub peritoneal_dialysis_output: Option<f64>,
}

impl DialysisVolumes {
    pub fn iter(&self) -> impl Iterator<Item = f64> {
        [
            self.hemodialysis_intake,
            self.hemodialysis_output,
            self.peritoneal_dialysis_intake,
            self.peritoneal_dialysis_output,
        ]
        .into_iter()
        .flatten()
    }

    pub fn any_nonzero(&self) -> bool {
        self.iter().any(|v| v != 0.0 && !v.is_nan())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowsheetEntry {
    pub measure_name: String,
    pub value: String,
    pub recorded_at: NaiveDateTime,
    pub volumes: DialysisVolumes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub birth_date: NaiveDate,
    pub sex: Sex,
    pub race: String,
    pub ethnicity: String,
    pub race_black: bool,
    /// Sorted by admission time; encounters without an admit timestamp last.
    pub encounters: Vec<Encounter>,
    /// Sorted ascending by specimen time, ties in input order.
    pub labs: Vec<CreatinineMeasurement>,
    pub diagnoses: Vec<CodeEvent>,
    pub procedures: Vec<CodeEvent>,
    pub flowsheet: Vec<FlowsheetEntry>,
}

impl PatientRecord {
    pub fn new(patient_id: &str, birth_date: NaiveDate, sex: Sex, race: &str) -> Self {
        PatientRecord {
            patient_id: patient_id.to_string(),
            birth_date,
            sex,
            race: race.to_string(),
            ethnicity: String::new(),
            race_black: race_is_black(race),
            encounters: Vec::new(),
            labs: Vec::new(),
            diagnoses: Vec::new(),
            procedures: Vec::new(),
            flowsheet: Vec::new(),
        }
    }

    /// Restore the ordering invariants after events were pushed by hand.
    pub fn normalize_order(&mut self) {
        self.labs.sort_by_key(|l| l.taken_at);
        self.encounters
            .sort_by_key(|e| (e.admit.is_none(), e.admit, e.encounter_id.clone()));
        self.diagnoses.sort_by_key(|c| c.date);
        self.procedures.sort_by_key(|c| c.date);
        self.flowsheet.sort_by_key(|f| f.recorded_at);
    }

    /// Code events from both diagnoses and procedures.
    pub fn code_events(&self) -> impl Iterator<Item = &CodeEvent> {
        self.diagnoses.iter().chain(self.procedures.iter())
    }
}

pub fn race_is_black(race: &str) -> bool {
    let r = race.to_ascii_lowercase();
    r.contains("black") || r.contains("african")
}

/// Age in completed years at `when`.
pub fn age_at(birth_date: NaiveDate, when: NaiveDateTime) -> u32 {
    let day = when.date();
    let mut years = day.year() - birth_date.year();
    if (day.month(), day.day()) < (birth_date.month(), birth_date.day()) {
        years -= 1;
    }
    years.max(0) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(d: &str) -> NaiveDateTime {
        NaiveDate::parse_from_str(d, "%Y-%m-%d")
            .unwrap()
            .and_hms_opt(12, 0, 0)
            .unwrap()
    }

    #[test]
    fn age_counts_completed_years() {
        let birth = NaiveDate::from_ymd_opt(1960, 3, 1).unwrap();
        assert_eq!(age_at(birth, at("2016-02-29")), 55);
        assert_eq!(age_at(birth, at("2016-03-01")), 56);
        let birth = NaiveDate::from_ymd_opt(1998, 1, 1).unwrap();
        assert_eq!(age_at(birth, at("2015-12-31")), 17);
    }

    #[test]
    fn leap_day_birthday() {
        let birth = NaiveDate::from_ymd_opt(2000, 2, 29).unwrap();
        assert_eq!(age_at(birth, at("2018-02-28")), 17);
        assert_eq!(age_at(birth, at("2018-03-01")), 18);
    }

    #[test]
    fn zero_volumes_are_not_dialysis() {
        let v = DialysisVolumes {
            hemodialysis_output: Some(0.0),
            ..Default::default()
        };
        assert!(!v.any_nonzero());
        let v = DialysisVolumes {
            peritoneal_dialysis_intake: Some(1500.0),
            ..Default::default()
        };
        assert!(v.any_nonzero());
    }
}
