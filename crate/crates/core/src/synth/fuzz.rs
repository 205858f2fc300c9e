use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::code_tables::CodeSystem;
use crate::ingest::{CodeEvent, CreatinineMeasurement, DialysisVolumes, Encounter, EncounterType, FlowsheetEntry, PatientRecord, Sex};

/// Codes drawn by the fuzzer: every category, nonspecific AKI codes, risk
/// factors, near misses and unknown codes.
const FUZZ_DIAGNOSES: [(&str, CodeSystem); 16] = [
    ("585.3", CodeSystem::Icd9Diag),
    ("N18.4", CodeSystem::Icd10Diag),
    ("586", CodeSystem::Icd9Diag),
    ("N18.6", CodeSystem::Icd10Diag),
    ("Z94.0", CodeSystem::Icd10Diag),
    ("V42.0", CodeSystem::Icd9Diag),
    ("584.9", CodeSystem::Icd9Diag),
    ("n17.9", CodeSystem::Icd10Diag),
    ("593.9", CodeSystem::Icd9Diag),
    ("N28.9", CodeSystem::Icd10Diag),
    ("401.9", CodeSystem::Icd9Diag),
    ("E11.9", CodeSystem::Icd10Diag),
    ("N17.99", CodeSystem::Icd10Diag),
    ("58.49", CodeSystem::Icd9Diag),
    ("J18.9", CodeSystem::Icd10Diag),
    ("N179", CodeSystem::Icd9Diag),
];
const FUZZ_PROCEDURES: [(&str, CodeSystem); 4] = [
    ("90935", CodeSystem::Cpt),
    ("99213", CodeSystem::Cpt),
    ("90937", CodeSystem::Cpt),
    ("90999", CodeSystem::Icd9Proc),
];
const TREATMENT_VALUES: [&str; 6] = ["CVVH", "cvvhdf", " CVVHD ", "SLED", "None", ""];

fn at(base: NaiveDate, minutes: i64) -> NaiveDateTime {
    base.and_hms_opt(0, 0, 0).unwrap_or_default() + Duration::minutes(minutes)
}

/// A random patient that stresses the rules rather than following them:
/// noisy creatinine with spikes and ties, overlapping stays, missing
/// timestamps, minors, unknown sex, stray RRT sources and codes.
pub fn fuzz_patient(index: usize, rng: &mut ChaCha8Rng) -> PatientRecord {
    let base = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap_or_default() + Duration::days(rng.random_range(0..2000));
    let birth = base - Duration::days(rng.random_range(15 * 365..95 * 365));
    let sex = match rng.random_range(0..10) {
        0 => Sex::Unknown,
        1..=5 => Sex::Female,
        _ => Sex::Male,
    };
    let race = *["White", "Black", "African American", "Asian", ""].choose(rng).unwrap_or(&"");
    let mut p = PatientRecord::new(&format!("FZ{index:06}"), birth, sex, race);

    let mut cursor = 0i64;
    let mut stays: Vec<(i64, i64)> = Vec::new();
    for k in 0..rng.random_range(1..=3) {
        let admit = cursor + rng.random_range(0..24 * 60);
        let len = rng.random_range(60..25 * 24 * 60);
        let discharge = admit + len;
        let kind = match rng.random_range(0..20) {
            0..=13 => EncounterType::Inpatient,
            14..=16 => EncounterType::Observation,
            _ => EncounterType::Other,
        };
        let missing = rng.random_bool(0.05);
        p.encounters.push(Encounter {
            encounter_id: format!("FZ{index:06}-{k}"),
            admit: (!missing || rng.random_bool(0.5)).then(|| at(base, admit)),
            discharge: (!missing).then(|| at(base, discharge)),
            encounter_type: kind,
        });
        stays.push((admit, discharge));
        // occasionally overlap the next stay with this one
        cursor = if rng.random_bool(0.1) { admit + len / 2 } else { discharge + rng.random_range(1..120) * 24 * 60 };
    }
    let horizon = cursor + 10 * 24 * 60;

    let mut v: f64 = rng.random_range(0.5..2.5);
    let mut step = |rng: &mut ChaCha8Rng| {
        v *= 1.0 + rng.random_range(-0.1..0.1);
        if rng.random_bool(0.03) {
            v *= rng.random_range(1.4..3.5);
        } else if v > 2.0 && rng.random_bool(0.2) {
            v *= 0.7;
        }
        v = v.clamp(0.3, 12.0);
        (v * 100.0).round() / 100.0
    };
    let mut lab = |p: &mut PatientRecord, rng: &mut ChaCha8Rng, t: i64| {
        let value = step(rng);
        p.labs.push(CreatinineMeasurement::mg_dl(value, at(base, t)));
        if rng.random_bool(0.03) {
            let tie = step(rng);
            p.labs.push(CreatinineMeasurement::mg_dl(tie, at(base, t)));
        }
    };
    if rng.random_bool(0.85) {
        let mut t = -rng.random_range(8..400) * 24 * 60;
        while t < 0 {
            lab(&mut p, rng, t);
            t += rng.random_range(1..90) * 24 * 60 + rng.random_range(0..24 * 60);
        }
    }
    for &(a, d) in &stays {
        if rng.random_bool(0.05) {
            continue;
        }
        let mut t = a + if rng.random_bool(0.1) { 0 } else { rng.random_range(0..6 * 60) };
        while t <= d {
            lab(&mut p, rng, t);
            t += rng.random_range(2 * 60..40 * 60);
        }
        if rng.random_bool(0.3) {
            let after = d + rng.random_range(60..20 * 24 * 60);
            lab(&mut p, rng, after);
        }
    }
    let day = |rng: &mut ChaCha8Rng| base + Duration::days(rng.random_range(-400..horizon / (24 * 60) + 1));
    for _ in 0..rng.random_range(0..4) {
        let (code, system) = *FUZZ_DIAGNOSES.choose(rng).unwrap_or(&FUZZ_DIAGNOSES[0]);
        let d = day(rng);
        p.diagnoses.push(CodeEvent::new(d, code, system));
    }
    for &(a, d) in &stays {
        let days = (d - a) / (24 * 60) + 1;
        let events = if rng.random_bool(0.75) { 0 } else { rng.random_range(1..4) };
        for _ in 0..events {
            let date = base + Duration::days(a / (24 * 60) + rng.random_range(0..days));
            match rng.random_range(0..3) {
                0 => {
                    let (code, system) = *FUZZ_PROCEDURES.choose(rng).unwrap_or(&FUZZ_PROCEDURES[0]);
                    p.procedures.push(CodeEvent::new(date, code, system));
                }
                1 => p.flowsheet.push(FlowsheetEntry {
                    measure_name: if rng.random_bool(0.8) { "Treatment Type" } else { "treatment type " }.into(),
                    value: TREATMENT_VALUES.choose(rng).unwrap_or(&"").to_string(),
                    recorded_at: at(date, rng.random_range(0..24 * 60)),
                    volumes: DialysisVolumes::default(),
                }),
                _ => {
                    let vol = |rng: &mut ChaCha8Rng| match rng.random_range(0..4) {
                        0 => None,
                        1 | 2 => Some(0.0),
                        _ => Some(rng.random_range(1..40) as f64 * 50.0),
                    };
                    p.flowsheet.push(FlowsheetEntry {
                        measure_name: "Dialysis".into(),
                        value: String::new(),
                        recorded_at: at(date, rng.random_range(0..24 * 60)),
                        volumes: DialysisVolumes {
                            hemodialysis_intake: vol(rng),
                            hemodialysis_output: vol(rng),
                            peritoneal_dialysis_intake: vol(rng),
                            peritoneal_dialysis_output: vol(rng),
                        },
                    });
                }
            }
        }
    }
    p.normalize_order();
    p
}

/// `patients` fuzzed records, deterministic in `seed`.
pub fn fuzz_cohort(patients: usize, seed: u64) -> Vec<PatientRecord> {
    (0..patients)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            fuzz_patient(i, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sorted() {
        let a = fuzz_cohort(50, 3);
        assert_eq!(a, fuzz_cohort(50, 3));
        for p in &a {
            assert!(p.labs.windows(2).all(|w| w[0].taken_at <= w[1].taken_at));
            assert!(!p.encounters.is_empty());
        }
    }
}
