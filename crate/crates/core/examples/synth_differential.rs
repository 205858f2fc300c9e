//! Differential check: the engine against the independent reference
//! implementation on fuzzed cohorts, and against planted labels.
//!
//! ```text
//! cargo run --release --example synth_differential -- [seeds]
//! ```

use kidney_phenotype::code_tables::CodeTable;
use kidney_phenotype::engine::{Engine, EngineConfig};
use kidney_phenotype::synth::{diff_runs, fuzz_cohort, generate, label_mismatches, oracle_cohort, CohortPlan};

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let engine = Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap();

    for seed in 0..seeds {
        let patients = fuzz_cohort(500, seed);
        let run = engine.phenotype_cohort(&patients, 0).unwrap();
        let oracle = oracle_cohort(&patients, engine.table(), engine.config()).unwrap();
        let d = diff_runs(&run.phenotypes, &oracle.phenotypes);
        println!("fuzz seed {seed}: {} encounters, {} mismatches", run.phenotypes.len(), d.len());
        for m in d.iter().take(3) {
            println!("  {} {}: {} vs {}", m.encounter_id, m.field, m.left, m.right);
        }
    }

    let cohort = generate(&CohortPlan {
        patients: 1000,
        missing_code_rate: 0.1,
        wrong_code_rate: 0.05,
        ..CohortPlan::default()
    })
    .unwrap();
    let run = engine.phenotype_cohort(&cohort.patients, 0).unwrap();
    let m = label_mismatches(&cohort.labels, &run.phenotypes, &run.exclusions);
    println!("planted cohort: {} labels, {} mismatches", cohort.labels.len(), m.len());
    for x in &m {
        println!("  {} {}: {} vs {}", x.encounter_id, x.field, x.left, x.right);
    }
}
