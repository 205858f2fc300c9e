use kidney_phenotype::code_tables::CodeTable;
use kidney_phenotype::engine::{Engine, EngineConfig};
use kidney_phenotype::ingest::{parse_cohort, write_cohort, ParseOptions};
use kidney_phenotype::synth::{fuzz_cohort, generate, CohortPlan};

#[test]
fn fuzz_cohort_survives_write_and_parse() {
    let dir = tempfile::tempdir().unwrap();
    let patients = fuzz_cohort(300, 21);
    let paths = write_cohort(dir.path(), &patients).unwrap();
    let parsed = parse_cohort(&paths, &ParseOptions::default()).unwrap();
    assert!(parsed.issues.is_empty(), "{:?}", &parsed.issues[..parsed.issues.len().min(3)]);
    assert_eq!(parsed.patients.len(), patients.len());
    for (a, b) in patients.iter().zip(&parsed.patients) {
        // fields are read back trimmed
        let mut a = a.clone();
        for f in &mut a.flowsheet {
            f.measure_name = f.measure_name.trim().to_string();
            f.value = f.value.trim().to_string();
        }
        assert_eq!(&a, b, "{}", a.patient_id);
    }
}

#[test]
fn planted_cohort_phenotypes_identically_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate(&CohortPlan {
        patients: 400,
        seed: 8,
        ..CohortPlan::default()
    })
    .unwrap();
    let paths = cohort.write(dir.path()).unwrap();
    let parsed = parse_cohort(
        &paths,
        &ParseOptions {
            strict: true,
            creatinine_loinc_codes: Some(vec!["2160-0".into()]),
        },
    )
    .unwrap();
    let engine = Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap();
    let from_memory = engine.phenotype_cohort(&cohort.patients, 2).unwrap();
    let from_disk = engine.phenotype_cohort(&parsed.patients, 2).unwrap();
    assert_eq!(from_memory, from_disk);
}
