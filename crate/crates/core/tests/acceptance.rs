//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kidney_phenotype::aki::AkiStage;
use kidney_phenotype::ckd::{ckd_epi_egfr, g_stage, CkdEpiParams, GStage};
use kidney_phenotype::code_tables::{Category, CodeSystem, CodeTable};
use kidney_phenotype::engine::{patient_events, Engine, EngineConfig, EncounterEvent, EncounterSession, EncounterPhenotype};
use kidney_phenotype::ingest::{PatientRecord, Sex};
use kidney_phenotype::synth::{diff_runs, fuzz_cohort, generate, oracle_cohort, CohortPlan};
use kidney_phenotype::validation::{clopper_pearson, diagnostic_metrics, sample_size, ConfusionMatrix, PowerParams};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn engine() -> Engine {
    Engine::new(CodeTable::builtin(), EngineConfig::default()).expect("default engine")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Rounded metric lines, in the printed "0.87 (0.81, 0.92)" form.
fn metric_lines(cm: ConfusionMatrix) -> Result<Vec<String>, String> {
    let m = diagnostic_metrics(&cm).map_err(|e| e.to_string())?;
    Ok(m.rows().iter().map(|(name, ci)| format!("{name} {}", ci.display())).collect())
}

fn check_table(cm: ConfusionMatrix, expected: [&str; 5], started: Instant) -> Outcome {
    let got = metric_lines(cm)?;
    for (g, e) in got.iter().zip(expected) {
        ensure(g == e, || format!("got {g:?}, expected {e:?}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(got.join("; "))
}

fn c1_ckd_metrics() -> Outcome {
    check_table(
        ConfusionMatrix::new(131, 19, 1, 149),
        [
            "PPV 0.87 (0.81, 0.92)",
            "NPV 0.99 (0.96, 1.00)",
            "Sensitivity 0.99 (0.96, 1.00)",
            "Specificity 0.89 (0.83, 0.93)",
            "Accuracy 0.93 (0.90, 0.96)",
        ],
        Instant::now(),
    )
}

fn c2_aki_metrics() -> Outcome {
    check_table(
        ConfusionMatrix::new(198, 2, 5, 95),
        [
            "PPV 0.99 (0.96, 1.00)",
            "NPV 0.95 (0.89, 0.98)",
            "Sensitivity 0.98 (0.94, 0.99)",
            "Specificity 0.98 (0.93, 1.00)",
            "Accuracy 0.98 (0.95, 0.99)",
        ],
        Instant::now(),
    )
}

fn c3_sample_size() -> Outcome {
    let n = sample_size(&PowerParams {
        p0: 0.5,
        odds_ratio: 2.0,
        alpha: 0.05,
        power: 0.8,
    })
    .map_err(|e| e.to_string())?;
    ensure(n == 137, || format!("sample size {n}"))?;
    Ok(format!("n = {n}"))
}

fn c4_prevalence() -> Outcome {
    let started = Instant::now();
    let plan = CohortPlan {
        patients: 1000,
        seed: 2024,
        aki_prevalence: 0.21,
        stage_mix: [0.628, 0.193, 0.179],
        eskd_fraction: 0.0,
        ..CohortPlan::default()
    };
    let cohort = generate(&plan).map_err(|e| e.to_string())?;
    let run = engine().phenotype_cohort(&cohort.patients, 1).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let n = run.phenotypes.len() as f64;
    let aki: Vec<&EncounterPhenotype> = run.phenotypes.iter().filter(|p| p.aki_detected).collect();
    let prevalence = 100.0 * aki.len() as f64 / n;
    ensure((prevalence - 21.0).abs() <= 1.0, || format!("AKI prevalence {prevalence:.2}%"))?;
    let share = |f: &dyn Fn(AkiStage) -> bool| 100.0 * aki.iter().filter(|p| f(p.max_aki_stage)).count() as f64 / aki.len() as f64;
    let shares = [
        share(&|s| s == AkiStage::S1),
        share(&|s| s == AkiStage::S2),
        share(&|s| matches!(s, AkiStage::S3 | AkiStage::S3Rrt)),
    ];
    for (got, want) in shares.iter().zip([62.8, 19.3, 17.8]) {
        ensure((got - want).abs() <= 2.0, || format!("stage shares {shares:.1?}"))?;
    }
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} encounters, AKI {prevalence:.1}%, stages {:.1}/{:.1}/{:.1}, {elapsed:.2?}",
        run.phenotypes.len(),
        shares[0],
        shares[1],
        shares[2]
    ))
}

fn c5_oracle() -> Outcome {
    let e = engine();
    let mut total = 0;
    for seed in 0..10u64 {
        let planted = generate(&CohortPlan {
            patients: 1100,
            seed,
            missing_code_rate: 0.1,
            wrong_code_rate: 0.05,
            ..CohortPlan::default()
        })
        .map_err(|x| x.to_string())?;
        let fuzzed = fuzz_cohort(800, 1000 + seed);
        for (kind, patients) in [("planted", &planted.patients), ("fuzz", &fuzzed)] {
            let run = e.phenotype_cohort(patients, 0).map_err(|x| x.to_string())?;
            let oracle = oracle_cohort(patients, e.table(), e.config()).map_err(|x| x.to_string())?;
            ensure(run.phenotypes.len() >= 1000, || format!("{kind} seed {seed}: only {} encounters", run.phenotypes.len()))?;
            let d = diff_runs(&run.phenotypes, &oracle.phenotypes);
            ensure(d.is_empty(), || format!("{kind} seed {seed}: {} mismatches, first {:?}", d.len(), d[0]))?;
            ensure(run.exclusions == oracle.exclusions, || format!("{kind} seed {seed}: exclusions differ"))?;
            total += run.phenotypes.len();
        }
    }
    Ok(format!("{total} encounters over 10 seeds x 2 generators, 0 mismatches"))
}

/// The patient with only the events in `events`.
fn prefix_patient(base: &PatientRecord, events: &[EncounterEvent]) -> PatientRecord {
    let mut p = base.clone();
    for e in events {
        match e.clone() {
            EncounterEvent::Creatinine(l) => p.labs.push(l),
            EncounterEvent::Procedure(c) => p.procedures.push(c),
            EncounterEvent::Flowsheet(f) => p.flowsheet.push(f),
            EncounterEvent::Diagnosis(c) => p.diagnoses.push(c),
        }
    }
    p.normalize_order();
    p
}

fn c6_streaming() -> Outcome {
    let e = engine();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pool = fuzz_cohort(400, 66);
    pool.extend(
        generate(&CohortPlan {
            patients: 400,
            seed: 66,
            ..CohortPlan::default()
        })
        .map_err(|x| x.to_string())?
        .patients,
    );

    let mut encounters = Vec::new();
    while encounters.len() < 100 {
        let p = &pool[rng.random_range(0..pool.len())];
        let included: Vec<_> = e.phenotype_patient(p).phenotypes.into_iter().map(|ph| ph.encounter_id).collect();
        let Some(id) = included.first() else { continue };
        let adm = p
            .encounters
            .iter()
            .find(|x| &x.encounter_id == id)
            .and_then(|x| x.admission())
            .ok_or("included encounter without admission")?;
        if !encounters.iter().any(|(q, a): &(&PatientRecord, _)| q.patient_id == p.patient_id && a == &adm) {
            encounters.push((p, adm));
        }
    }

    let mut prefixes = 0;
    for (p, adm) in &encounters {
        let mut empty = (*p).clone();
        empty.labs.clear();
        empty.procedures.clear();
        empty.flowsheet.clear();
        empty.diagnoses.clear();
        let events = patient_events(p);
        let mut session = EncounterSession::new(&e, empty.clone(), adm.clone(), Vec::new());
        for k in 0..events.len() {
            kidney_phenotype::engine::incremental_feed(&mut session, events[k].clone()).map_err(|x| x.to_string())?;
            let batch = e.phenotype_encounter(&prefix_patient(&empty, &events[..=k]), adm, &[]).ok();
            ensure(session.current() == batch.as_ref(), || {
                format!("{} after {} of {} events", adm.encounter_id, k + 1, events.len())
            })?;
            prefixes += 1;
        }
    }
    Ok(format!("{} encounters, {prefixes} prefixes, 0 mismatches", encounters.len()))
}

/// CKD-EPI written out branch by branch.
fn egfr_branches(scr: f64, age: f64, female: bool, black: bool) -> f64 {
    let mut v = if female {
        if scr <= 0.7 {
            141.0 * 1.018 * (scr / 0.7).powf(-0.329)
        } else {
            141.0 * 1.018 * (scr / 0.7).powf(-1.209)
        }
    } else if scr <= 0.9 {
        141.0 * (scr / 0.9).powf(-0.411)
    } else {
        141.0 * (scr / 0.9).powf(-1.209)
    };
    v *= 0.993f64.powf(age);
    if black {
        v *= 1.159;
    }
    v
}

fn c7_egfr() -> Outcome {
    let p = CkdEpiParams::default();
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for i in 0..10 {
        let scr = 0.4 + 0.5 * i as f64 + if i == 1 { 0.0 } else { 0.013 };
        for j in 0..25 {
            let age = 18.0 + 3.2 * j as f64;
            for female in [false, true] {
                for black in [false, true] {
                    let sex = if female { Sex::Female } else { Sex::Male };
                    let a = ckd_epi_egfr(scr, age, sex, black, &p).map_err(|e| e.to_string())?;
                    let b = egfr_branches(scr, age, female, black);
                    worst = worst.max((a - b).abs() / b.abs());
                    points += 1;
                }
            }
        }
    }
    // the kinks themselves
    for (scr, female) in [(0.7, true), (0.9, false)] {
        let sex = if female { Sex::Female } else { Sex::Male };
        let a = ckd_epi_egfr(scr, 50.0, sex, false, &p).map_err(|e| e.to_string())?;
        worst = worst.max((a - egfr_branches(scr, 50.0, female, false)).abs() / a);
    }
    ensure(points == 1000, || format!("{points} grid points"))?;
    ensure(worst <= 1e-9, || format!("max relative error {worst:e}"))?;

    let boundaries = [(90.0, GStage::G1), (60.0, GStage::G2), (45.0, GStage::G3a), (30.0, GStage::G3b), (15.0, GStage::G4)];
    for (egfr, want) in boundaries {
        ensure(g_stage(egfr) == want, || format!("g_stage({egfr}) = {:?}", g_stage(egfr)))?;
    }
    Ok(format!("{points} points, max relative error {worst:.1e}; boundaries ok"))
}

fn parse_system(s: &str) -> Result<CodeSystem, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| format!("{s}: {e}"))
}

fn c8_code_tables() -> Outcome {
    let table = CodeTable::builtin();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/kidney_code_sets.tsv");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut listed: BTreeSet<(String, CodeSystem)> = BTreeSet::new();
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        ensure(cols.len() == 3, || format!("bad fixture line {line:?}"))?;
        let system = parse_system(cols[1])?;
        let category: Category = cols[2].parse()?;
        listed.insert((cols[0].replace('.', "").to_ascii_uppercase(), system));
        rows.push((cols[0].to_string(), system, category));
    }

    let mut checked = 0;
    for (code, system, category) in &rows {
        let undotted = code.replace('.', "");
        let mut forms = vec![code.clone(), undotted.clone(), code.to_ascii_lowercase()];
        let diag = matches!(system, CodeSystem::Icd9Diag | CodeSystem::Icd10Diag);
        if diag && !code.contains('.') && undotted.len() > 3 {
            let at = if undotted.starts_with('E') && *system == CodeSystem::Icd9Diag { 4 } else { 3 };
            forms.push(format!("{}.{}", &undotted[..at], &undotted[at..]));
        }
        for f in forms {
            let got = table.classify(&f, *system);
            ensure(got.contains(*category), || format!("{f} ({system:?}) classified {got:?}, expected {category:?}"))?;
            checked += 1;
        }
    }

    // one-character perturbations that are not themselves listed
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let alphabet: Vec<char> = "0123456789ABCDEFGHJKMNPRSTVXYZ".chars().collect();
    let mut misses = BTreeSet::new();
    while misses.len() < 50 {
        let (code, system, _) = &rows[rng.random_range(0..rows.len())];
        let mut chars: Vec<char> = code.replace('.', "").chars().collect();
        match rng.random_range(0..3) {
            0 => {
                let i = rng.random_range(0..chars.len());
                chars[i] = alphabet[rng.random_range(0..alphabet.len())];
            }
            1 => chars.push(alphabet[rng.random_range(0..alphabet.len())]),
            _ if chars.len() > 1 => {
                chars.pop();
            }
            _ => continue,
        }
        let miss: String = chars.into_iter().collect();
        if listed.contains(&(miss.clone(), *system)) {
            continue;
        }
        misses.insert((miss, *system));
    }
    for (miss, system) in &misses {
        let got = table.classify(miss, *system);
        ensure(got.is_empty(), || format!("near miss {miss} ({system:?}) classified {got:?}"))?;
    }
    Ok(format!("{} listed codes, {checked} input forms, {} near misses", rows.len(), misses.len()))
}

/// ln C(n, k).
fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// P(X >= x) and P(X <= x) for X ~ Bin(n, p), by direct summation.
fn binomial_tails(x: u64, n: u64, p: f64) -> (f64, f64) {
    let pmf = |k: u64| {
        if p <= 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        if p >= 1.0 {
            return if k == n { 1.0 } else { 0.0 };
        }
        (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
    };
    let upper: f64 = (x..=n).map(pmf).sum();
    let lower: f64 = (0..=x).map(pmf).sum();
    (upper, lower)
}

fn c9_clopper_pearson() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let alpha = 0.05;
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n: u64 = rng.random_range(1..=400);
        let x = match i % 10 {
            0 => 0,
            1 => n,
            _ => rng.random_range(0..=n),
        };
        let (lo, hi) = clopper_pearson(x, n, alpha);
        ensure((0.0..=1.0).contains(&lo) && lo <= hi && hi <= 1.0, || format!("({x}, {n}): [{lo}, {hi}]"))?;
        if x == 0 {
            ensure(lo == 0.0, || format!("x = 0 gives lower {lo}"))?;
        } else {
            let (upper_tail, _) = binomial_tails(x, n, lo);
            worst = worst.max((upper_tail - alpha / 2.0).abs());
        }
        if x == n {
            ensure(hi == 1.0, || format!("x = n gives upper {hi}"))?;
        } else {
            let (_, lower_tail) = binomial_tails(x, n, hi);
            worst = worst.max((lower_tail - alpha / 2.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max tail error {worst:e}"))?;
    Ok(format!("200 pairs, max tail error {worst:.1e}"))
}

fn c10_determinism_throughput() -> Outcome {
    let e = engine();
    let small = generate(&CohortPlan {
        patients: 3000,
        seed: 10,
        ..CohortPlan::default()
    })
    .map_err(|x| x.to_string())?;
    let mut mixed = small.patients;
    mixed.extend(fuzz_cohort(2000, 10));
    let one = e.phenotype_cohort(&mixed, 1).map_err(|x| x.to_string())?;
    let eight = e.phenotype_cohort(&mixed, 8).map_err(|x| x.to_string())?;
    ensure(one == eight, || "runs at parallelism 1 and 8 differ".into())?;
    let bytes = |r: &[EncounterPhenotype]| r.iter().map(|p| serde_json::to_string(p).unwrap_or_default()).collect::<Vec<_>>();
    ensure(bytes(&one.phenotypes) == bytes(&eight.phenotypes), || "serialized outputs differ".into())?;

    let big = generate(&CohortPlan {
        patients: 100_000,
        seed: 100,
        other_encounter_fraction: 0.0,
        eskd_fraction: 0.0,
        ..CohortPlan::default()
    })
    .map_err(|x| x.to_string())?;
    let started = Instant::now();
    let run = e.phenotype_cohort(&big.patients, 0).map_err(|x| x.to_string())?;
    let elapsed = started.elapsed();
    ensure(run.phenotypes.len() >= 100_000, || format!("only {} encounters", run.phenotypes.len()))?;
    ensure(elapsed < Duration::from_secs(60), || format!("100k encounters took {elapsed:?}"))?;
    Ok(format!(
        "{} encounters identical at 1 and 8 threads; {} encounters in {elapsed:.2?}",
        one.phenotypes.len(),
        run.phenotypes.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metrics reproduce the CKD validation table", c1_ckd_metrics),
        ("metrics reproduce the AKI validation table", c2_aki_metrics),
        ("two-proportion sample size", c3_sample_size),
        ("planted AKI prevalence and stage mix recovered", c4_prevalence),
        ("engine equals brute-force oracle", c5_oracle),
        ("streaming equals batch at every prefix", c6_streaming),
        ("CKD-EPI dual implementation and G-stage boundaries", c7_egfr),
        ("code-table fidelity and near misses", c8_code_tables),
        ("Clopper-Pearson tail equations", c9_clopper_pearson),
        ("determinism across thread counts and throughput", c10_determinism_throughput),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
