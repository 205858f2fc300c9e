//! KDIGO staging of every in-stay creatinine and the resulting episodes.
//!
//! ```text
//! cargo run --example aki_episodes
//! ```

use chrono::{NaiveDate, NaiveDateTime};
use kidney_phenotype::code_tables::{CodeSystem, CodeTable};
use kidney_phenotype::engine::{Engine, EngineConfig};
use kidney_phenotype::ingest::{CodeEvent, CreatinineMeasurement, Encounter, EncounterType, PatientRecord, Sex};

fn at(s: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
}

fn main() {
    let mut p = PatientRecord::new("P2", NaiveDate::from_ymd_opt(1961, 1, 20).unwrap(), Sex::Male, "Black");
    p.encounters.push(Encounter {
        encounter_id: "P2-A".into(),
        admit: Some(at("2019-09-01 07:00")),
        discharge: Some(at("2019-09-14 20:00")),
        encounter_type: EncounterType::Inpatient,
    });
    let labs = [
        ("2019-08-01 09:00", 0.9),
        ("2019-09-01 08:00", 1.0),
        ("2019-09-02 06:00", 1.6),
        ("2019-09-03 06:00", 3.1),
        ("2019-09-04 06:00", 2.4),
        ("2019-09-05 06:00", 1.0),
        ("2019-09-08 06:00", 1.0),
        ("2019-09-10 06:00", 1.9),
        ("2019-09-11 06:00", 1.4),
        ("2019-09-13 06:00", 1.1),
    ];
    for (when, v) in labs {
        p.labs.push(CreatinineMeasurement::mg_dl(v, at(when)));
    }
    p.procedures.push(CodeEvent::new(NaiveDate::from_ymd_opt(2019, 9, 3).unwrap(), "90935", CodeSystem::Cpt));

    let engine = Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap();
    let ph = &engine.phenotype_patient(&p).phenotypes[0];
    println!(
        "AKI {}  max stage {}  RRT days {}  recurrent {}",
        ph.aki_detected,
        ph.max_aki_stage.as_str(),
        ph.rrt_days,
        ph.recurrent_aki
    );
    for (i, e) in ph.episodes.iter().enumerate() {
        println!(
            "episode {}: {} .. {}  {}  {:.0}h {}  recovered={} ended={}",
            i + 1,
            e.start,
            e.end,
            e.max_stage.as_str(),
            e.duration_hours,
            e.duration_class.as_str(),
            e.recovered,
            e.ended
        );
    }
    if let Some(traj) = ph.trajectory() {
        println!("trajectory {}", traj.as_str());
    }
}
