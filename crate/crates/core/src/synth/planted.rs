use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{allocate, share_of, write_gold_labels, write_labels, CohortPlan, GroundTruthLabel, PlantedEpisode, PlantedPhenotype, SynthError};
use crate::aki::{AkiStage, DurationClass};
use crate::ckd::{ckd_epi_egfr, CkdCategory, CkdEpiParams, RecentAki};
use crate::code_tables::CodeSystem;
use crate::engine::EncounterPhenotype;
use crate::ingest::{
    age_at, write_cohort, CodeEvent, CohortPaths, CreatinineMeasurement, DialysisVolumes, Encounter, EncounterType,
    ExclusionReason, FlowsheetEntry, PatientRecord, Sex,
};

pub const LABELS_FILE: &str = "labels.jsonl";
pub const GOLD_FILE: &str = "gold.csv";

const CKD_CODES: [(&str, CodeSystem); 8] = [
    ("585.2", CodeSystem::Icd9Diag),
    ("585.3", CodeSystem::Icd9Diag),
    ("585.4", CodeSystem::Icd9Diag),
    ("585.9", CodeSystem::Icd9Diag),
    ("N18.2", CodeSystem::Icd10Diag),
    ("N18.3", CodeSystem::Icd10Diag),
    ("N18.4", CodeSystem::Icd10Diag),
    ("N18.9", CodeSystem::Icd10Diag),
];
const TRANSPLANT_CODES: [(&str, CodeSystem); 2] = [("V42.0", CodeSystem::Icd9Diag), ("Z94.0", CodeSystem::Icd10Diag)];
const AKI_CODES: [(&str, CodeSystem); 2] = [("584.9", CodeSystem::Icd9Diag), ("N17.9", CodeSystem::Icd10Diag)];
const ESKD_CODES: [(&str, CodeSystem); 2] = [("585.6", CodeSystem::Icd9Diag), ("N18.6", CodeSystem::Icd10Diag)];
const RISK_CODES: [(&str, CodeSystem); 3] = [
    ("401.9", CodeSystem::Icd9Diag),
    ("I10", CodeSystem::Icd10Diag),
    ("E11.9", CodeSystem::Icd10Diag),
];
/// Renal failure, unspecified: listed with the CKD codes.
const SPURIOUS_CKD_CODE: (&str, CodeSystem) = ("586", CodeSystem::Icd9Diag);
const ROUTINE_VISIT: (&str, CodeSystem) = ("99213", CodeSystem::Cpt);
const RACES: [&str; 4] = ["White", "Black or African American", "Asian", "Other"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CkdPlan {
    NoCkd,
    Insufficient,
    History,
    Creatinine,
    Transplant,
}

impl CkdPlan {
    fn category(self) -> CkdCategory {
        match self {
            CkdPlan::NoCkd => CkdCategory::NoCkd,
            CkdPlan::Insufficient => CkdCategory::InsufficientData,
            CkdPlan::History => CkdCategory::CkdByHistory,
            CkdPlan::Creatinine => CkdCategory::CkdByCreatinine,
            CkdPlan::Transplant => CkdCategory::CkdAfterTransplant,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct AkiPlan {
    stage: AkiStage,
    duration: DurationClass,
    recurrent: bool,
    recovered: bool,
    rrt: bool,
}

#[derive(Debug, Clone)]
struct PatientSpec {
    index: usize,
    eskd: bool,
    ckd: CkdPlan,
    recent: RecentAki,
    aki: Option<AkiPlan>,
}

/// A generated cohort and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub patients: Vec<PatientRecord>,
    pub labels: Vec<GroundTruthLabel>,
}

impl SyntheticCohort {
    /// Cohort files plus `labels.jsonl` and `gold.csv` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CohortPaths, SynthError> {
        let dir = dir.as_ref();
        let paths = write_cohort(dir, &self.patients)?;
        write_labels(dir.join(LABELS_FILE), &self.labels)?;
        write_gold_labels(dir.join(GOLD_FILE), &self.labels)?;
        Ok(paths)
    }

    pub fn encounter_count(&self) -> usize {
        self.labels.len()
    }
}

impl PlantedPhenotype {
    /// The labelled fields of a computed phenotype.
    pub fn observed(p: &EncounterPhenotype) -> PlantedPhenotype {
        PlantedPhenotype {
            ckd: p.ckd.category,
            recent_aki: p.ckd.recent_aki,
            aki: p.aki_detected,
            max_stage: p.max_aki_stage,
            episodes: p
                .episodes
                .iter()
                .map(|e| PlantedEpisode {
                    first_day: e.start.date(),
                    last_day: e.end.date() - Duration::days(1),
                    start: e.start,
                    max_stage: e.max_stage,
                    duration_class: e.duration_class,
                    recovered: e.recovered,
                    rrt_days: e.rrt_days,
                })
                .collect(),
            rrt_days: p.rrt_days,
            recurrent: p.recurrent_aki,
        }
    }
}

fn shuffled<T: Clone>(parts: &[(T, usize)], rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut v: Vec<T> = parts
        .iter()
        .flat_map(|(t, n)| std::iter::repeat_n(t.clone(), *n))
        .collect();
    v.shuffle(rng);
    v
}

fn flags(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = share_of(n, fraction);
    shuffled(&[(true, k), (false, n - k)], rng)
}

fn specs(plan: &CohortPlan) -> Vec<PatientSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(u64::MAX);
    let n = plan.patients;
    let eskd = flags(n, plan.eskd_fraction, &mut rng);
    let eligible: Vec<usize> = (0..n).filter(|&i| !eskd[i]).collect();
    let m = eligible.len();

    let n_ckd = share_of(m, plan.ckd_prevalence);
    let ckd_counts = allocate(n_ckd, &plan.ckd_mix);
    let n_ins = share_of(m - n_ckd, plan.insufficient_fraction);
    let ckd = shuffled(
        &[
            (CkdPlan::History, ckd_counts[0]),
            (CkdPlan::Creatinine, ckd_counts[1]),
            (CkdPlan::Transplant, ckd_counts[2]),
            (CkdPlan::Insufficient, n_ins),
            (CkdPlan::NoCkd, m - n_ckd - n_ins),
        ],
        &mut rng,
    );

    let n_aki = share_of(m, plan.aki_prevalence);
    let stage_counts = allocate(n_aki, &plan.stage_mix);
    let stages = shuffled(
        &[
            (Some(AkiStage::S1), stage_counts[0]),
            (Some(AkiStage::S2), stage_counts[1]),
            (Some(AkiStage::S3), stage_counts[2]),
            (None, m - n_aki),
        ],
        &mut rng,
    );
    let dur_counts = allocate(n_aki, &plan.duration_mix);
    let durations = shuffled(
        &[
            (DurationClass::RapidReversal, dur_counts[0]),
            (DurationClass::Persistent, dur_counts[1]),
            (DurationClass::Akd, dur_counts[2]),
        ],
        &mut rng,
    );
    let recurrent = flags(n_aki, plan.recurrent_fraction, &mut rng);
    let recovered = flags(n_aki, plan.recovery_fraction, &mut rng);
    let mut aki: Vec<Option<AkiPlan>> = Vec::with_capacity(m);
    let mut k = 0;
    for s in &stages {
        aki.push(s.map(|stage| {
            let p = AkiPlan {
                stage,
                duration: durations[k],
                recurrent: recurrent[k],
                recovered: recovered[k],
                rrt: false,
            };
            k += 1;
            p
        }));
    }
    let n_rrt = share_of(stage_counts[2], plan.rrt_fraction);
    let mut rrt_pool: Vec<usize> = (0..m)
        .filter(|&i| aki[i].is_some_and(|a| a.stage == AkiStage::S3 && a.duration != DurationClass::RapidReversal))
        .collect();
    rrt_pool.shuffle(&mut rng);
    for &i in rrt_pool.iter().take(n_rrt) {
        if let Some(a) = aki[i].as_mut() {
            a.rrt = true;
        }
    }

    let with_history: Vec<usize> = (0..m).filter(|&i| ckd[i] != CkdPlan::Insufficient).collect();
    let recent_flags = flags(with_history.len(), plan.recent_aki_fraction, &mut rng);
    let n_recent = recent_flags.iter().filter(|f| **f).count();
    let akd = flags(n_recent, plan.recent_akd_share, &mut rng);
    let mut recent = vec![RecentAki::None; m];
    let mut r = 0;
    for (j, &i) in with_history.iter().enumerate() {
        if recent_flags[j] {
            recent[i] = if akd[r] {
                RecentAki::AkdNonrecoveredOnAdmission
            } else {
                RecentAki::RecoveredAkiOnAdmission
            };
            r += 1;
        }
    }

    let mut out: Vec<PatientSpec> = (0..n)
        .map(|index| PatientSpec {
            index,
            eskd: true,
            ckd: CkdPlan::NoCkd,
            recent: RecentAki::None,
            aki: None,
        })
        .collect();
    for (j, &i) in eligible.iter().enumerate() {
        out[i] = PatientSpec {
            index: i,
            eskd: false,
            ckd: ckd[j],
            recent: recent[j],
            aki: aki[j],
        };
    }
    out
}

/// Generate a cohort whose labels follow from the phenotype rules. The
/// output depends only on the plan.
pub fn generate(plan: &CohortPlan) -> Result<SyntheticCohort, SynthError> {
    plan.validate()?;
    let specs = specs(plan);
    let built: Vec<(PatientRecord, Vec<GroundTruthLabel>)> = specs
        .par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(s.index as u64);
            build_patient(plan, s, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let mut cohort = SyntheticCohort {
        patients: Vec::with_capacity(built.len()),
        labels: Vec::new(),
    };
    for (p, l) in built {
        cohort.patients.push(p);
        cohort.labels.extend(l);
    }
    Ok(cohort)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn baseline_value(b: f64, rng: &mut ChaCha8Rng) -> f64 {
    round2(b * rng.random_range(0.97..=1.03))
}

fn aki_value(b: f64, stage: AkiStage, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = match stage {
        AkiStage::S1 => (1.6, 1.88),
        AkiStage::S2 => (2.12, 2.85),
        _ => (3.2, 3.8),
    };
    round2(b * rng.random_range(lo..=hi))
}

fn at(day0: NaiveDate, day: i64, minute: i64) -> NaiveDateTime {
    (day0 + Duration::days(day)).and_hms_opt(0, 0, 0).unwrap_or_default() + Duration::minutes(minute)
}

fn pick(codes: &[(&str, CodeSystem)], date: NaiveDate, rng: &mut ChaCha8Rng) -> CodeEvent {
    let (code, system) = *codes.choose(rng).unwrap_or(&codes[0]);
    CodeEvent::new(date, code, system)
}

/// Ranges of the baseline creatinine that keep planted stages clear of the
/// 4.0 mg/dL absolute criterion.
fn baseline_range(ckd: CkdPlan, stage: Option<AkiStage>) -> (f64, f64) {
    let (lo, hi): (f64, f64) = match ckd {
        CkdPlan::NoCkd | CkdPlan::Insufficient => (0.5, 1.3),
        CkdPlan::Creatinine => (1.0, 3.5),
        CkdPlan::History | CkdPlan::Transplant => (0.6, 3.0),
    };
    (lo, hi.min(stage.map_or(4.5, baseline_cap)))
}

/// Largest baseline whose AKI values at `stage` stay below 4.0 mg/dL.
fn baseline_cap(stage: AkiStage) -> f64 {
    match stage {
        AkiStage::S1 => 2.1,
        AkiStage::S2 => 1.38,
        _ => 4.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Day {
    Baseline { required: bool },
    Aki { stage: AkiStage, peak: bool, required: bool },
    Empty,
}

struct EpisodeDraft {
    first: i64,
    last: i64,
    stage: AkiStage,
    duration: DurationClass,
    recovered: bool,
    rrt: Vec<i64>,
}

fn episode_len(d: DurationClass, rng: &mut ChaCha8Rng) -> i64 {
    match d {
        DurationClass::RapidReversal => rng.random_range(1..=2),
        DurationClass::Persistent => rng.random_range(3..=7),
        DurationClass::Akd => rng.random_range(8..=12),
    }
}

/// Per-day layout of the stay, day 0 being the admission date.
fn layout(aki: Option<AkiPlan>, b: f64, rng: &mut ChaCha8Rng) -> (Vec<Day>, Vec<EpisodeDraft>) {
    let Some(a) = aki else {
        let last = rng.random_range(1..=10);
        let mut days = vec![Day::Baseline { required: false }; last as usize + 1];
        days[0] = Day::Baseline { required: true };
        return (days, Vec::new());
    };
    let mut drafts = Vec::new();
    let first = rng.random_range(1..=4);
    let len = episode_len(a.duration, rng);
    let mut rrt = Vec::new();
    if a.rrt && len >= 3 {
        let mut interior: Vec<i64> = (first + 1..first + len - 1).collect();
        interior.shuffle(rng);
        let k = rng.random_range(1..=interior.len().min(3));
        rrt = interior[..k].to_vec();
        rrt.sort_unstable();
    }
    drafts.push(EpisodeDraft {
        first,
        last: first + len - 1,
        stage: a.stage,
        duration: a.duration,
        recovered: true,
        rrt,
    });
    if a.recurrent {
        let gap = rng.random_range(2..=3);
        let duration = if rng.random_bool(0.5) {
            DurationClass::RapidReversal
        } else {
            DurationClass::Persistent
        };
        let len = episode_len(duration, rng).min(4);
        let duration = if len >= 3 { DurationClass::Persistent } else { DurationClass::RapidReversal };
        let stages: Vec<AkiStage> = [AkiStage::S1, AkiStage::S2, AkiStage::S3]
            .into_iter()
            .filter(|s| *s <= a.stage && b <= baseline_cap(*s))
            .collect();
        let first = drafts[0].last + gap + 1;
        drafts.push(EpisodeDraft {
            first,
            last: first + len - 1,
            stage: *stages.choose(rng).unwrap_or(&AkiStage::S1),
            duration,
            recovered: true,
            rrt: Vec::new(),
        });
    }

    let end = drafts.last().map_or(0, |d| d.last);
    let mut days: Vec<Day> = vec![Day::Baseline { required: false }; end as usize + 1];
    days[0] = Day::Baseline { required: true };
    for (k, d) in drafts.iter().enumerate() {
        if k > 0 {
            for g in drafts[k - 1].last + 1..d.first {
                days[g as usize] = Day::Baseline { required: true };
            }
        }
        let peak = rng.random_range(d.first..=d.last);
        for day in d.first..=d.last {
            days[day as usize] = Day::Aki {
                stage: d.stage,
                peak: day == peak,
                required: day == d.first || day == d.last || day == peak,
            };
        }
    }

    if a.recovered {
        days.push(Day::Baseline { required: true });
        for _ in 0..rng.random_range(1..=3) {
            days.push(Day::Baseline { required: false });
        }
    } else {
        match rng.random_range(0..3) {
            0 => {}
            1 => days.push(Day::Baseline { required: true }),
            _ => {
                days.push(Day::Empty);
                days.push(Day::Empty);
                days.push(Day::Baseline { required: true });
                if rng.random_bool(0.5) {
                    days.push(Day::Baseline { required: false });
                }
            }
        }
        if let Some(d) = drafts.last_mut() {
            d.recovered = false;
        }
    }
    (days, drafts)
}

struct Demo {
    birth: NaiveDate,
    sex: Sex,
    race: &'static str,
    b: f64,
    pre_labs: Vec<CreatinineMeasurement>,
}

fn pre_admission_days(ckd: CkdPlan, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let mut days: Vec<i64> = match ckd {
        CkdPlan::Insufficient => Vec::new(),
        CkdPlan::NoCkd => (0..rng.random_range(1..=4)).map(|_| rng.random_range(-360..=-8)).collect(),
        CkdPlan::Creatinine => {
            let mut v: Vec<i64> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(-360..=-200)).collect();
            v.extend((0..rng.random_range(1..=2)).map(|_| rng.random_range(-100..=-8)));
            v
        }
        CkdPlan::History | CkdPlan::Transplant => (0..rng.random_range(1..=3)).map(|_| rng.random_range(-80..=-8)).collect(),
    };
    days.sort_unstable();
    days
}

/// Demographics, baseline and pre-admission labs meeting the eGFR side of
/// the planted CKD category.
fn demographics(spec: &PatientSpec, admit: NaiveDateTime, rng: &mut ChaCha8Rng) -> Result<Demo, SynthError> {
    let params = CkdEpiParams::default();
    let (lo, hi) = baseline_range(spec.ckd, spec.aki.map(|a| a.stage));
    let day0 = admit.date();
    for _ in 0..10_000 {
        let age_years = rng.random_range(25..=90);
        let birth = day0 - Duration::days(age_years * 365 + rng.random_range(0..365));
        let sex = if rng.random_bool(0.5) { Sex::Female } else { Sex::Male };
        let race = if rng.random_bool(0.15) {
            RACES[1]
        } else {
            *[RACES[0], RACES[0], RACES[2], RACES[3]].choose(rng).unwrap_or(&RACES[0])
        };
        let black = race == RACES[1];
        let b = rng.random_range(lo..=hi);
        let pre_labs: Vec<CreatinineMeasurement> = pre_admission_days(spec.ckd, rng)
            .into_iter()
            .map(|d| CreatinineMeasurement::mg_dl(baseline_value(b, rng), at(day0, d, rng.random_range(7 * 60..18 * 60))))
            .collect();
        let egfr = |l: &CreatinineMeasurement| {
            ckd_epi_egfr(l.value, age_at(birth, l.taken_at) as f64, sex, black, &params).unwrap_or(f64::NAN)
        };
        let ok = match spec.ckd {
            CkdPlan::NoCkd => pre_labs.iter().all(|l| egfr(l) >= 62.0),
            CkdPlan::Creatinine => pre_labs.iter().all(|l| egfr(l) < 59.0),
            _ => true,
        };
        if ok {
            return Ok(Demo {
                birth,
                sex,
                race,
                b,
                pre_labs,
            });
        }
    }
    Err(SynthError::InfeasiblePlan(format!(
        "no demographics fit patient {} ({:?}, {:?})",
        spec.index, spec.ckd, spec.aki
    )))
}

fn build_patient(
    plan: &CohortPlan,
    spec: &PatientSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(PatientRecord, Vec<GroundTruthLabel>), SynthError> {
    let pid = format!("SYN{:06}", spec.index);
    let day0 = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap_or_default() + Duration::days(rng.random_range(0..2900));
    let admit_minute = rng.random_range(6 * 60..21 * 60);
    let admit = at(day0, 0, admit_minute);
    let demo = demographics(spec, admit, rng)?;
    let mut p = PatientRecord::new(&pid, demo.birth, demo.sex, demo.race);
    p.ethnicity = if rng.random_bool(0.1) { "Hispanic" } else { "Not Hispanic" }.to_string();
    p.labs = demo.pre_labs;
    let b = demo.b;
    let prior_date = |rng: &mut ChaCha8Rng, from: i64, to: i64| day0 + Duration::days(rng.random_range(from..=to));

    let mut expected_ckd = spec.ckd.category();
    let mut expected_recent = spec.recent;
    if spec.eskd {
        let d = prior_date(rng, -700, -1);
        p.diagnoses.push(pick(&ESKD_CODES, d, rng));
    }
    match spec.ckd {
        CkdPlan::History | CkdPlan::Transplant => {
            let codes: &[(&str, CodeSystem)] = if spec.ckd == CkdPlan::History { &CKD_CODES } else { &TRANSPLANT_CODES };
            let d = prior_date(rng, -700, -10);
            if rng.random_bool(plan.missing_code_rate) {
                expected_ckd = CkdCategory::NoCkd;
            } else {
                p.diagnoses.push(pick(codes, d, rng));
            }
        }
        CkdPlan::NoCkd if rng.random_bool(plan.wrong_code_rate) => {
            let d = prior_date(rng, -700, -10);
            p.diagnoses.push(pick(&[SPURIOUS_CKD_CODE], d, rng));
            expected_ckd = CkdCategory::CkdByHistory;
        }
        _ => {}
    }
    if spec.ckd != CkdPlan::Insufficient && rng.random_bool(0.3) {
        let d = prior_date(rng, -700, -10);
        p.diagnoses.push(pick(&RISK_CODES, d, rng));
    }
    if spec.recent != RecentAki::None {
        let d = prior_date(rng, -85, -1);
        if rng.random_bool(plan.missing_code_rate) {
            expected_recent = RecentAki::None;
        } else {
            p.diagnoses.push(pick(&AKI_CODES, d, rng));
        }
        if spec.recent == RecentAki::AkdNonrecoveredOnAdmission {
            let t = at(day0, -rng.random_range(4..=6), rng.random_range(7 * 60..18 * 60));
            p.labs.push(CreatinineMeasurement::mg_dl(round2(2.0 * b), t));
        }
    }

    let mut labels = Vec::new();
    if rng.random_bool(plan.other_encounter_fraction) {
        let d = prior_date(rng, -300, -20);
        let visit = d.and_hms_opt(9, 0, 0).unwrap_or_default();
        let eid = format!("{pid}-O");
        p.encounters.push(Encounter {
            encounter_id: eid.clone(),
            admit: Some(visit),
            discharge: Some(visit + Duration::hours(1)),
            encounter_type: EncounterType::Other,
        });
        if spec.ckd != CkdPlan::Insufficient {
            p.procedures.push(pick(&[ROUTINE_VISIT], d, rng));
        }
        labels.push(GroundTruthLabel {
            patient_id: pid.clone(),
            encounter_id: eid,
            excluded: Some(ExclusionReason::NotInpatientOrObservation),
            truth: None,
            expected: None,
            coded_aki: false,
        });
    }

    let (days, drafts) = layout(if spec.eskd { None } else { spec.aki }, b, rng);
    let last_day = days.len() as i64 - 1;
    let discharge = at(day0, last_day, rng.random_range(19 * 60..24 * 60));
    let eid = format!("{pid}-A");
    p.encounters.push(Encounter {
        encounter_id: eid.clone(),
        admit: Some(admit),
        discharge: Some(discharge),
        encounter_type: if rng.random_bool(0.1) { EncounterType::Observation } else { EncounterType::Inpatient },
    });

    let mut starts: Vec<NaiveDateTime> = Vec::new();
    for (d, day) in days.iter().enumerate() {
        let d = d as i64;
        let first_minute = if d == 0 {
            admit_minute + rng.random_range(30..=120)
        } else {
            rng.random_range(4 * 60..9 * 60)
        };
        let second = d > 0 && rng.random_bool(plan.second_lab_prob);
        match *day {
            Day::Empty => {}
            Day::Baseline { required } => {
                if required || !rng.random_bool(plan.skip_lab_prob) {
                    p.labs.push(CreatinineMeasurement::mg_dl(baseline_value(b, rng), at(day0, d, first_minute)));
                    if second {
                        let m = rng.random_range(14 * 60..19 * 60);
                        p.labs.push(CreatinineMeasurement::mg_dl(baseline_value(b, rng), at(day0, d, m)));
                    }
                }
            }
            Day::Aki { stage, peak, required } => {
                let draw = |rng: &mut ChaCha8Rng| {
                    let s = *[AkiStage::S1, AkiStage::S2, AkiStage::S3]
                        .iter()
                        .filter(|s| **s <= stage)
                        .collect::<Vec<_>>()
                        .choose(rng)
                        .copied()
                        .unwrap_or(&AkiStage::S1);
                    aki_value(b, s, rng)
                };
                if required || !rng.random_bool(plan.skip_lab_prob) {
                    let t = at(day0, d, first_minute);
                    let v = if peak { aki_value(b, stage, rng) } else { draw(rng) };
                    p.labs.push(CreatinineMeasurement::mg_dl(v, t));
                    if drafts.iter().any(|e| e.first == d) {
                        starts.push(t);
                    }
                    if second {
                        let m = rng.random_range(14 * 60..19 * 60);
                        let v = draw(rng);
                        p.labs.push(CreatinineMeasurement::mg_dl(v, at(day0, d, m)));
                    }
                }
            }
        }
    }

    for d in drafts.iter().flat_map(|e| e.rrt.iter()) {
        let date = day0 + Duration::days(*d);
        match rng.random_range(0..3) {
            0 => p.procedures.push(CodeEvent::new(date, "90935", CodeSystem::Cpt)),
            1 => p.flowsheet.push(FlowsheetEntry {
                measure_name: "Treatment Type".into(),
                value: "CVVHDF".into(),
                recorded_at: at(day0, *d, rng.random_range(9 * 60..13 * 60)),
                volumes: DialysisVolumes::default(),
            }),
            _ => p.flowsheet.push(FlowsheetEntry {
                measure_name: "Hemodialysis".into(),
                value: String::new(),
                recorded_at: at(day0, *d, rng.random_range(9 * 60..13 * 60)),
                volumes: DialysisVolumes {
                    hemodialysis_intake: Some(0.0),
                    hemodialysis_output: Some(rng.random_range(5..=30) as f64 * 100.0),
                    ..Default::default()
                },
            }),
        }
    }
    if rng.random_bool(0.1) {
        let d = rng.random_range(0..=last_day);
        let rrt_day = drafts.iter().any(|e| e.rrt.contains(&d));
        if !rrt_day {
            p.flowsheet.push(FlowsheetEntry {
                measure_name: "Hemodialysis".into(),
                value: String::new(),
                recorded_at: at(day0, d, 12 * 60),
                volumes: DialysisVolumes {
                    hemodialysis_intake: Some(0.0),
                    hemodialysis_output: Some(0.0),
                    ..Default::default()
                },
            });
            p.flowsheet.push(FlowsheetEntry {
                measure_name: "Treatment Type".into(),
                value: "None".into(),
                recorded_at: at(day0, d, 12 * 60),
                volumes: DialysisVolumes::default(),
            });
        }
    }

    let has_aki = !drafts.is_empty();
    let code_p = if has_aki { plan.aki_code_sensitivity } else { plan.aki_code_false_positive };
    let coded_aki = rng.random_bool(code_p);
    if coded_aki {
        let d = day0 + Duration::days(rng.random_range(0..=last_day));
        p.diagnoses.push(pick(&AKI_CODES, d, rng));
    }
    p.normalize_order();

    let label = if spec.eskd {
        GroundTruthLabel {
            patient_id: pid,
            encounter_id: eid,
            excluded: Some(ExclusionReason::EskdOnAdmission),
            truth: None,
            expected: None,
            coded_aki,
        }
    } else {
        let episodes: Vec<PlantedEpisode> = drafts
            .iter()
            .zip(&starts)
            .map(|(e, start)| PlantedEpisode {
                first_day: day0 + Duration::days(e.first),
                last_day: day0 + Duration::days(e.last),
                start: *start,
                max_stage: if e.rrt.is_empty() { e.stage } else { AkiStage::S3Rrt },
                duration_class: e.duration,
                recovered: e.recovered,
                rrt_days: e.rrt.len(),
            })
            .collect();
        let truth = PlantedPhenotype {
            ckd: spec.ckd.category(),
            recent_aki: spec.recent,
            aki: has_aki,
            max_stage: episodes.iter().map(|e| e.max_stage).max().unwrap_or_default(),
            rrt_days: episodes.iter().map(|e| e.rrt_days).sum(),
            recurrent: episodes.len() > 1,
            episodes,
        };
        let expected = PlantedPhenotype {
            ckd: expected_ckd,
            recent_aki: expected_recent,
            ..truth.clone()
        };
        GroundTruthLabel {
            patient_id: pid,
            encounter_id: eid,
            excluded: None,
            truth: Some(truth),
            expected: Some(expected),
            coded_aki,
        }
    };
    labels.push(label);
    Ok((p, labels))
}
