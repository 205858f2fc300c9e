//! CKD-EPI eGFR, G stages, and the CKD category of a patient on admission.
//!
//! ```text
//! cargo run --example ckd_staging
//! ```

use chrono::{NaiveDate, NaiveDateTime};
use kidney_phenotype::ckd::{ckd_epi_egfr, g_stage, CkdEpiParams};
use kidney_phenotype::code_tables::CodeTable;
use kidney_phenotype::engine::{Engine, EngineConfig};
use kidney_phenotype::ingest::{CreatinineMeasurement, Encounter, EncounterType, PatientRecord, Sex};

fn at(s: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
}

fn main() {
    let p = CkdEpiParams::default();
    for scr in [0.6, 0.9, 1.2, 1.8, 2.6, 4.0, 6.5] {
        let f = ckd_epi_egfr(scr, 60.0, Sex::Female, false, &p).unwrap();
        let m = ckd_epi_egfr(scr, 60.0, Sex::Male, false, &p).unwrap();
        println!("scr {scr:.1}: female {f:6.1} {:<4} male {m:6.1} {}", g_stage(f).as_str(), g_stage(m).as_str());
    }

    // two low-eGFR labs more than 90 days apart before the stay
    let mut patient = PatientRecord::new("P1", NaiveDate::from_ymd_opt(1948, 6, 2).unwrap(), Sex::Female, "White");
    patient.encounters.push(Encounter {
        encounter_id: "P1-A".into(),
        admit: Some(at("2018-04-10 11:00")),
        discharge: Some(at("2018-04-14 15:00")),
        encounter_type: EncounterType::Inpatient,
    });
    for (when, v) in [("2017-06-01 09:00", 1.6), ("2017-12-15 09:00", 1.7), ("2018-04-10 12:00", 1.65)] {
        patient.labs.push(CreatinineMeasurement::mg_dl(v, at(when)));
    }

    let engine = Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap();
    let out = engine.phenotype_patient(&patient);
    let ckd = &out.phenotypes[0].ckd;
    println!(
        "{}: {} {} eGFR {:.1}",
        patient.patient_id,
        ckd.category.as_str(),
        ckd.g_stage.as_str(),
        ckd.reference_egfr.unwrap_or(f64::NAN)
    );
    if let Some(w) = &ckd.witness {
        println!("  witness labs {} and {}", w.first.at, w.second.at);
    }
}
