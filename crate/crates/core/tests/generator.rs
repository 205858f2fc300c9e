use kidney_phenotype::code_tables::CodeTable;
use kidney_phenotype::engine::{Engine, EngineConfig};
use kidney_phenotype::synth::{generate, label_mismatches, CohortPlan};

fn engine() -> Engine {
    Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap()
}

#[test]
fn planted_labels_hold_across_seeds_and_mixes() {
    let e = engine();
    let plans = [
        CohortPlan::default(),
        CohortPlan {
            aki_prevalence: 0.6,
            stage_mix: [0.2, 0.3, 0.5],
            recurrent_fraction: 0.4,
            ckd_prevalence: 0.5,
            ckd_mix: [0.3, 0.5, 0.2],
            ..CohortPlan::default()
        },
        CohortPlan {
            missing_code_rate: 0.2,
            wrong_code_rate: 0.1,
            recent_aki_fraction: 0.3,
            skip_lab_prob: 0.4,
            ..CohortPlan::default()
        },
    ];
    for (k, plan) in plans.into_iter().enumerate() {
        for seed in 0..3 {
            let plan = CohortPlan {
                patients: 600,
                seed: seed * 17 + k as u64,
                ..plan.clone()
            };
            let c = generate(&plan).unwrap();
            let run = e.phenotype_cohort(&c.patients, 0).unwrap();
            let m = label_mismatches(&c.labels, &run.phenotypes, &run.exclusions);
            assert!(m.is_empty(), "plan {k} seed {}: {:#?}", plan.seed, &m[..m.len().min(2)]);
            assert!(run.errors.is_empty());
        }
    }
}

#[test]
fn healthy_cohort_has_no_aki_or_ckd() {
    let c = generate(&CohortPlan::healthy(300, 3)).unwrap();
    let run = engine().phenotype_cohort(&c.patients, 0).unwrap();
    assert!(run.phenotypes.iter().all(|p| !p.aki_detected && !p.ckd.category.is_ckd()));
}

#[test]
fn planted_prevalence_is_exact() {
    let plan = CohortPlan {
        patients: 1000,
        eskd_fraction: 0.0,
        other_encounter_fraction: 0.0,
        ..CohortPlan::default()
    };
    let c = generate(&plan).unwrap();
    let run = engine().phenotype_cohort(&c.patients, 0).unwrap();
    let aki = run.phenotypes.iter().filter(|p| p.aki_detected).count();
    assert_eq!(run.phenotypes.len(), 1000);
    assert_eq!(aki, 210);
}
