//! Draw the stratified chart-review sample from a phenotyped cohort.
//!
//! ```text
//! cargo run --release --example review_sample
//! ```

use kidney_phenotype::code_tables::CodeTable;
use kidney_phenotype::engine::{Engine, EngineConfig};
use kidney_phenotype::synth::{generate, CohortPlan};
use kidney_phenotype::validation::{stratified_review_sample, ReviewCandidate};

fn main() {
    let cohort = generate(&CohortPlan {
        patients: 5000,
        ckd_prevalence: 0.3,
        ..CohortPlan::default()
    })
    .unwrap();
    let engine = Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap();
    let run = engine.phenotype_cohort(&cohort.patients, 0).unwrap();

    let candidates: Vec<_> = run.phenotypes.iter().filter_map(ReviewCandidate::from_phenotype).collect();
    let sample = stratified_review_sample(&candidates, 25);
    for s in &sample.strata {
        println!("{:<24} {:>4} of {:>5}{}", s.stratum.label(), s.selected, s.members, if s.short { "  short" } else { "" });
    }
    println!("{} charts to review", sample.picks.len());
    for p in sample.picks.iter().take(3) {
        println!("  {} {:?} {:.2}", p.encounter_id, p.tail, p.reference_creatinine);
    }
}
