//! Write a synthetic cohort to disk, parse it back, phenotype it on all
//! cores and print the cohort report.
//!
//! ```text
//! cargo run --release --example phenotype_cohort -- [patients]
//! ```

use kidney_phenotype::code_tables::CodeTable;
use kidney_phenotype::engine::{Engine, EngineConfig};
use kidney_phenotype::ingest::{parse_cohort, ParseOptions};
use kidney_phenotype::synth::{generate, CohortPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let patients = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let dir = std::env::temp_dir().join("kidney-phenotype-example");
    let cohort = generate(&CohortPlan {
        patients,
        ..CohortPlan::default()
    })?;
    let paths = cohort.write(&dir)?;

    let parsed = parse_cohort(&paths, &ParseOptions::default())?;
    println!("parsed {} patients, {} row issues", parsed.patients.len(), parsed.issues.len());

    let engine = Engine::new(CodeTable::builtin(), EngineConfig::default())?;
    let start = std::time::Instant::now();
    let run = engine.phenotype_cohort(&parsed.patients, 0)?;
    println!("phenotyped {} encounters in {:.2?}\n", run.phenotypes.len(), start.elapsed());
    print!("{}", run.report.render_text());
    Ok(())
}
