//! Feed a stay event by event and watch the phenotype change; the final
//! state equals the batch result.
//!
//! ```text
//! cargo run --example streaming_feed
//! ```

use kidney_phenotype::code_tables::CodeTable;
use kidney_phenotype::engine::{patient_events, Engine, EngineConfig, EncounterSession};
use kidney_phenotype::synth::{generate, CohortPlan};

fn main() {
    let cohort = generate(&CohortPlan {
        patients: 200,
        seed: 11,
        ..CohortPlan::default()
    })
    .unwrap();
    let engine = Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap();

    // the first patient with a staged AKI
    let (patient, batch) = cohort
        .patients
        .iter()
        .find_map(|p| {
            let out = engine.phenotype_patient(p);
            let ph = out.phenotypes.into_iter().find(|ph| ph.aki_detected)?;
            Some((p, ph))
        })
        .expect("cohort has AKI");
    let adm = patient
        .encounters
        .iter()
        .find(|e| e.encounter_id == batch.encounter_id)
        .and_then(|e| e.admission())
        .unwrap();

    let mut history = patient.clone();
    history.labs.clear();
    history.procedures.clear();
    history.flowsheet.clear();
    history.diagnoses.clear();
    let mut session = EncounterSession::new(&engine, history, adm, Vec::new());
    for event in patient_events(patient) {
        let at = event.timestamp();
        if let Some(ph) = session.feed(event).unwrap() {
            println!(
                "{at}  stage {}  episodes {}  CKD {}",
                ph.max_aki_stage.as_str(),
                ph.episodes.len(),
                ph.ckd.category.as_str()
            );
        }
    }
    println!("matches batch: {}", session.current() == Some(&batch));
}
