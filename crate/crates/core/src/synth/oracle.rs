//! Deliberately naive re-implementation of the phenotype rules. It reads the
//! same inputs and configuration as the engine but shares none of its code:
//! every day of a stay is materialized, every reference is recomputed from
//! the raw labs, and the creatinine criterion is an exhaustive pair search.

use std::collections::HashMap;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rayon::prelude::*;

use crate::aki::{AkiEpisode, AkiPointAssessment, AkiStage, Criterion, DurationClass};
use crate::ckd::{CkdAssessment, CkdCategory, CreatinineWitness, GStage, PriorAkiOutcome, RecentAki};
use crate::code_tables::{Category, CodeSystem, CodeTable};
use crate::engine::{config_fingerprint, EncounterPhenotype, EngineConfig, EngineError, ExclusionRecord, QuarantineRecord, ENGINE_VERSION};
use crate::ingest::{CodeEvent, CreatinineMeasurement, EncounterType, ExclusionReason, PatientRecord, Sex};
use crate::refcr::{LabPoint, Provenance, ReferenceCreatinine, RollingReferenceMode};

/// Oracle view of the code tables: canonical code and system to the
/// categories listed for it, with the nonspecific flag.
pub struct OracleCodes {
    map: HashMap<(String, CodeSystem), Vec<(Category, bool)>>,
}

fn canonical(raw: &str) -> Option<String> {
    let s = raw.trim();
    if s.is_empty() || s.contains(char::is_whitespace) {
        return None;
    }
    let c = s.replace('.', "").to_uppercase();
    (!c.is_empty()).then_some(c)
}

impl OracleCodes {
    pub fn new(table: &CodeTable) -> OracleCodes {
        let mut map: HashMap<(String, CodeSystem), Vec<(Category, bool)>> = HashMap::new();
        for e in table.entries() {
            if let Some(c) = canonical(&e.code) {
                map.entry((c, e.code_system)).or_default().push((e.category, e.nonspecific));
            }
        }
        OracleCodes { map }
    }

    fn has(&self, c: &CodeEvent, category: Category, skip_nonspecific: bool) -> bool {
        let Some(code) = canonical(&c.code) else {
            return false;
        };
        self.map
            .get(&(code, c.system))
            .is_some_and(|v| v.iter().any(|(cat, ns)| *cat == category && !(skip_nonspecific && *ns)))
    }
}

fn years_between(birth: NaiveDate, on: NaiveDate) -> i32 {
    let mut y = on.year() - birth.year();
    if on.month() < birth.month() || (on.month() == birth.month() && on.day() < birth.day()) {
        y -= 1;
    }
    y.max(0)
}

/// CKD-EPI 2009 written out branch by branch.
fn egfr(cfg: &EngineConfig, scr: f64, age: i32, sex: Sex, black: bool) -> Option<f64> {
    let p = &cfg.ckd.egfr_params;
    if scr <= 0.0 || scr.is_nan() {
        return None;
    }
    let female = match sex {
        Sex::Female => true,
        Sex::Male => false,
        Sex::Unknown => return None,
    };
    let kappa = if female { p.kappa_female } else { p.kappa_male };
    let ratio = scr / kappa;
    let mut e = p.scale;
    if ratio <= 1.0 {
        e *= ratio.powf(if female { p.alpha_female } else { p.alpha_male });
    } else {
        e *= ratio.powf(p.slope_exponent);
    }
    e *= p.age_base.powf(age as f64);
    if female {
        e *= p.female_factor;
    }
    if black {
        e *= p.black_factor;
    }
    Some(e)
}

fn stage_of(e: f64) -> GStage {
    if e.is_nan() || e <= 0.0 || e.is_infinite() {
        return GStage::Unstageable;
    }
    let table = [
        (90.0, GStage::G1),
        (60.0, GStage::G2),
        (45.0, GStage::G3a),
        (30.0, GStage::G3b),
        (15.0, GStage::G4),
    ];
    table.iter().find(|(lo, _)| e >= *lo).map_or(GStage::G5, |(_, g)| *g)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn point(l: &CreatinineMeasurement) -> LabPoint {
    LabPoint {
        value: l.value,
        at: l.taken_at,
    }
}

fn midnight(d: NaiveDate) -> NaiveDateTime {
    d.and_hms_opt(0, 0, 0).unwrap_or_default()
}

struct Stay {
    id: String,
    admit: NaiveDateTime,
    discharge: NaiveDateTime,
    kind: EncounterType,
}

/// Oracle results for one patient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleOutcome {
    pub phenotypes: Vec<EncounterPhenotype>,
    pub exclusions: Vec<ExclusionRecord>,
    pub errors: Vec<QuarantineRecord>,
}

/// All encounters of one patient, in admission order.
pub fn oracle_phenotype(patient: &PatientRecord, table: &CodeTable, config: &EngineConfig) -> Result<OracleOutcome, EngineError> {
    let codes = OracleCodes::new(table);
    let fingerprint = config_fingerprint(config, table);
    oracle_patient(patient, &codes, config, &fingerprint)
}

/// Oracle over a whole cohort, parallel across patients; output in
/// patient-id order.
pub fn oracle_cohort(patients: &[PatientRecord], table: &CodeTable, config: &EngineConfig) -> Result<OracleOutcome, EngineError> {
    let codes = OracleCodes::new(table);
    let fingerprint = config_fingerprint(config, table);
    let mut per: Vec<(&str, OracleOutcome)> = patients
        .par_iter()
        .map(|p| oracle_patient(p, &codes, config, &fingerprint).map(|o| (p.patient_id.as_str(), o)))
        .collect::<Result<_, _>>()?;
    per.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = OracleOutcome::default();
    for (_, o) in per {
        out.phenotypes.extend(o.phenotypes);
        out.exclusions.extend(o.exclusions);
        out.errors.extend(o.errors);
    }
    Ok(out)
}

fn oracle_patient(
    patient: &PatientRecord,
    codes: &OracleCodes,
    config: &EngineConfig,
    fingerprint: &str,
) -> Result<OracleOutcome, EngineError> {
    let mut labs = patient.labs.clone();
    labs.sort_by_key(|l| l.taken_at);
    let mut encounters = patient.encounters.clone();
    encounters.sort_by(|a, b| (a.admit, &a.encounter_id).cmp(&(b.admit, &b.encounter_id)));

    let mut out = OracleOutcome::default();
    let mut prior: Vec<PriorAkiOutcome> = Vec::new();
    for e in &encounters {
        let exclude = |reason| ExclusionRecord {
            patient_id: patient.patient_id.clone(),
            encounter_id: e.encounter_id.clone(),
            reason,
        };
        if e.encounter_type != EncounterType::Inpatient && e.encounter_type != EncounterType::Observation {
            out.exclusions.push(exclude(ExclusionReason::NotInpatientOrObservation));
            continue;
        }
        let (Some(admit), Some(discharge)) = (e.admit, e.discharge) else {
            out.exclusions.push(exclude(ExclusionReason::MissingTimestamps));
            continue;
        };
        let stay = Stay {
            id: e.encounter_id.clone(),
            admit,
            discharge,
            kind: e.encounter_type,
        };
        let all_codes = || patient.diagnoses.iter().chain(&patient.procedures);
        if all_codes().any(|c| c.date <= admit.date() && codes.has(c, Category::Eskd, false)) {
            out.exclusions.push(exclude(ExclusionReason::EskdOnAdmission));
            continue;
        }
        if !labs.iter().any(|l| l.taken_at >= admit && l.taken_at <= discharge) {
            out.exclusions.push(exclude(ExclusionReason::NoCreatinine));
            continue;
        }
        let w = &config.study_window;
        if w.start.is_some_and(|s| admit.date() < s) || w.end.is_some_and(|x| admit.date() > x) {
            out.exclusions.push(exclude(ExclusionReason::OutsideStudyWindow));
            continue;
        }
        if years_between(patient.birth_date, admit.date()) < 18 {
            out.exclusions.push(exclude(ExclusionReason::Under18));
            continue;
        }
        let ph = encounter_phenotype(patient, &labs, &stay, &prior, codes, config, fingerprint);
        for ep in &ph.episodes {
            prior.push(PriorAkiOutcome {
                episode_end: ep.end,
                recovered: ep.recovered,
            });
        }
        out.phenotypes.push(ph);
    }
    Ok(out)
}

/// Reference creatinine at the `k`-th in-stay lab, recomputed from scratch.
fn reference_at(labs: &[CreatinineMeasurement], triggers: &[usize], k: usize, stay: &Stay, config: &EngineConfig) -> ReferenceCreatinine {
    let week = Duration::hours(config.reference.first_week_hours);
    let t = labs[triggers[k]].taken_at;
    let admission = &labs[triggers[0]];

    let recent: Vec<&CreatinineMeasurement> = labs
        .iter()
        .filter(|l| l.taken_at < stay.admit && l.taken_at > stay.admit - week)
        .collect();
    let oldest = stay.admit - Duration::days(config.reference.history_days);
    let history: Vec<&CreatinineMeasurement> = labs
        .iter()
        .filter(|l| l.taken_at <= stay.admit - week && l.taken_at >= oldest)
        .collect();
    let mut first_week = admission.value;
    if let Some(m) = recent.iter().map(|l| l.value).min_by(|a, b| a.total_cmp(b)) {
        first_week = first_week.min(m);
    }
    if let Some(m) = median(history.iter().map(|l| l.value).collect()) {
        first_week = first_week.min(m);
    }

    let rolling = |j: usize| j > 0 && labs[triggers[j]].taken_at - stay.admit >= week;
    let window = |j: usize| {
        let tj = labs[triggers[j]].taken_at;
        labs.iter()
            .filter(move |l| l.taken_at > tj - week && l.taken_at < tj)
    };
    if !rolling(k) {
        let mut inputs: Vec<LabPoint> = recent.iter().map(|l| point(l)).collect();
        inputs.extend(history.iter().map(|l| point(l)));
        inputs.push(point(admission));
        return ReferenceCreatinine {
            value: first_week,
            provenance: if recent.is_empty() && history.is_empty() {
                Provenance::NoHistoryAdmissionOnly
            } else {
                Provenance::CombinedMin
            },
            computed_at: t,
            inputs_used: inputs,
        };
    }
    let mut value = first_week;
    if config.reference.rolling_mode == RollingReferenceMode::MinOfBoth {
        for j in (0..=k).filter(|&j| rolling(j)) {
            for l in window(j) {
                value = value.min(l.value);
            }
        }
    }
    ReferenceCreatinine {
        value,
        provenance: Provenance::RollingPrior,
        computed_at: t,
        inputs_used: window(k).map(point).collect(),
    }
}

fn assess(labs: &[CreatinineMeasurement], i: usize, reference: f64, rrt: bool, config: &EngineConfig) -> AkiPointAssessment {
    let th = &config.kdigo;
    let eps = th.eps;
    let t = labs[i].taken_at;
    let scr = labs[i].value;
    let mut low = scr;
    for l in &labs[..=i] {
        if l.taken_at > t - Duration::hours(th.abs_window_hours) && l.taken_at <= t && l.value < low {
            low = l.value;
        }
    }
    let ratio = scr / reference;
    let tol = eps / reference;
    let rise = scr - low >= th.abs_rise - eps;
    let x15 = ratio >= th.ratio_stage1 - tol;
    let x20 = ratio >= th.ratio_stage2 - tol;
    let x30 = ratio >= th.ratio_stage3 - tol;
    let over4 = scr >= th.abs_stage3 - eps && (rise || x15);
    let mut criteria = Vec::new();
    for (met, c) in [
        (rise, Criterion::AbsRise48h),
        (x15, Criterion::Ratio1_5),
        (x20, Criterion::Ratio2_0),
        (x30, Criterion::Ratio3_0),
        (over4, Criterion::AbsGe4),
        (rrt, Criterion::Rrt),
    ] {
        if met {
            criteria.push(c);
        }
    }
    let mut stage = AkiStage::None;
    for (met, s) in [
        (rise || x15, AkiStage::S1),
        (x20, AkiStage::S2),
        (x30 || over4, AkiStage::S3),
        (rrt, AkiStage::S3Rrt),
    ] {
        if met {
            stage = s;
        }
    }
    AkiPointAssessment {
        at: t,
        scr,
        reference,
        stage,
        criteria_met: criteria,
    }
}

fn rrt_day(patient: &PatientRecord, date: NaiveDate, codes: &OracleCodes) -> bool {
    if patient.procedures.iter().any(|c| c.date == date && codes.has(c, Category::Rrt, false)) {
        return true;
    }
    patient.flowsheet.iter().filter(|f| f.recorded_at.date() == date).any(|f| {
        let name = f.measure_name.trim().to_lowercase();
        let value = f.value.trim().to_uppercase();
        let continuous = name == "treatment type" && (value == "CVVH" || value == "CVVHD" || value == "CVVHDF");
        let v = &f.volumes;
        let volume = [
            v.hemodialysis_intake,
            v.hemodialysis_output,
            v.peritoneal_dialysis_intake,
            v.peritoneal_dialysis_output,
        ]
        .iter()
        .any(|x| matches!(x, Some(x) if *x != 0.0 && !x.is_nan()));
        continuous || volume
    })
}

struct DayRow {
    date: NaiveDate,
    data: bool,
    aki: bool,
    flagged: bool,
    rrt: bool,
    top: AkiStage,
    first_aki: Option<NaiveDateTime>,
}

#[allow(clippy::too_many_arguments)]
fn encounter_phenotype(
    patient: &PatientRecord,
    labs: &[CreatinineMeasurement],
    stay: &Stay,
    prior: &[PriorAkiOutcome],
    codes: &OracleCodes,
    config: &EngineConfig,
    fingerprint: &str,
) -> EncounterPhenotype {
    let triggers: Vec<usize> = (0..labs.len())
        .filter(|&i| labs[i].taken_at >= stay.admit && labs[i].taken_at <= stay.discharge)
        .collect();

    let mut dates = Vec::new();
    let mut d = stay.admit.date();
    while d <= stay.discharge.date() {
        dates.push(d);
        d += Duration::days(1);
    }
    let rrt_dates: Vec<NaiveDate> = dates.iter().copied().filter(|d| rrt_day(patient, *d, codes)).collect();

    let trace: Vec<ReferenceCreatinine> = (0..triggers.len()).map(|k| reference_at(labs, &triggers, k, stay, config)).collect();
    let assessments: Vec<AkiPointAssessment> = triggers
        .iter()
        .zip(&trace)
        .map(|(&i, r)| assess(labs, i, r.value, rrt_dates.contains(&labs[i].taken_at.date()), config))
        .collect();

    let mut days: Vec<DayRow> = dates
        .iter()
        .map(|&date| {
            let rrt = rrt_dates.contains(&date);
            let todays: Vec<&AkiPointAssessment> = assessments.iter().filter(|a| a.at.date() == date).collect();
            let mut top = if rrt { AkiStage::S3Rrt } else { AkiStage::None };
            for a in &todays {
                top = top.max(a.stage);
            }
            let first_aki = todays.iter().filter(|a| a.stage != AkiStage::None).map(|a| a.at).min();
            let aki = rrt || first_aki.is_some();
            DayRow {
                date,
                data: rrt || !todays.is_empty(),
                aki,
                flagged: aki,
                rrt,
                top,
                first_aki,
            }
        })
        .collect();
    for i in 0..days.len() {
        if days[i].data {
            continue;
        }
        let before = (0..i).rev().find(|&j| days[j].data);
        let after = (i + 1..days.len()).find(|&j| days[j].data);
        if let (Some(b), Some(a)) = (before, after) {
            days[i].flagged = days[b].aki && days[a].aki;
        }
    }

    let flagged: Vec<usize> = (0..days.len()).filter(|&i| days[i].flagged).collect();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for &i in &flagged {
        match groups.last_mut() {
            Some((_, last)) if i - *last <= 2 => *last = i,
            _ => groups.push((i, i)),
        }
    }
    let last_date = *dates.last().unwrap_or(&stay.admit.date());
    let episodes: Vec<AkiEpisode> = groups
        .iter()
        .map(|&(a, b)| {
            let first = &days[a];
            let start = if first.rrt {
                midnight(first.date).max(stay.admit)
            } else {
                first.first_aki.unwrap_or_else(|| midnight(first.date).max(stay.admit))
            };
            let end = midnight(days[b].date + Duration::days(1));
            let ended = days[b].date + Duration::days(2) <= last_date;
            let hours = (end - start).num_seconds() as f64 / 3600.0;
            let class = if hours < 48.0 {
                DurationClass::RapidReversal
            } else if hours <= 168.0 {
                DurationClass::Persistent
            } else {
                DurationClass::Akd
            };
            let limit = end + Duration::hours(48);
            let mut last_before: Option<&AkiPointAssessment> = None;
            for x in &assessments {
                if x.at < limit {
                    last_before = Some(x);
                }
            }
            let recovered = ended && last_before.is_some_and(|x| x.stage == AkiStage::None);
            AkiEpisode {
                start,
                end,
                max_stage: days[a..=b].iter().map(|d| d.top).max().unwrap_or_default(),
                rrt_days: days[a..=b].iter().filter(|d| d.rrt).count(),
                duration_hours: hours,
                duration_class: class,
                recovered,
                ended,
            }
        })
        .collect();

    let mut max_stage = episodes.iter().map(|e| e.max_stage).max().unwrap_or(AkiStage::None);
    if !rrt_dates.is_empty() {
        max_stage = AkiStage::S3Rrt;
    }
    let skip_ns = config.ckd.ignore_nonspecific_aki_codes;
    let coded_aki = patient
        .diagnoses
        .iter()
        .chain(&patient.procedures)
        .any(|c| c.date >= stay.admit.date() && c.date <= stay.discharge.date() && codes.has(c, Category::AkiHistory, skip_ns));

    let ckd = ckd_status(patient, labs, stay, trace.first().map(|r| r.value), prior, codes, config);
    EncounterPhenotype {
        patient_id: patient.patient_id.clone(),
        encounter_id: stay.id.clone(),
        admit: stay.admit,
        discharge: stay.discharge,
        encounter_type: stay.kind,
        ckd,
        aki_detected: !episodes.is_empty(),
        max_aki_stage: max_stage,
        rrt_days: rrt_dates.len(),
        recurrent_aki: episodes.len() >= 2,
        episodes,
        coded_aki,
        reference_trace: trace,
        engine_version: ENGINE_VERSION.to_string(),
        config_fingerprint: fingerprint.to_string(),
    }
}

fn ckd_status(
    patient: &PatientRecord,
    labs: &[CreatinineMeasurement],
    stay: &Stay,
    reference: Option<f64>,
    prior: &[PriorAkiOutcome],
    codes: &OracleCodes,
    config: &EngineConfig,
) -> CkdAssessment {
    let cfg = &config.ckd;
    let admit_date = stay.admit.date();
    let prior_codes: Vec<&CodeEvent> = patient
        .diagnoses
        .iter()
        .chain(&patient.procedures)
        .filter(|c| c.date < admit_date)
        .collect();
    let transplant = prior_codes.iter().any(|c| codes.has(c, Category::KidneyTransplant, false));
    let history = prior_codes.iter().any(|c| codes.has(c, Category::Ckd, false));
    let pre: Vec<&CreatinineMeasurement> = labs.iter().filter(|l| l.taken_at < stay.admit).collect();

    let low = |l: &CreatinineMeasurement| {
        let age = years_between(patient.birth_date, l.taken_at.date());
        age >= 18 && egfr(config, l.value, age, patient.sex, patient.race_black).is_some_and(|e| e < cfg.egfr_threshold)
    };
    let mut best: Option<(Duration, usize, usize)> = None;
    for i in 0..pre.len() {
        for j in 0..pre.len() {
            let gap = pre[j].taken_at - pre[i].taken_at;
            if gap < Duration::days(cfg.min_separation_days) || !low(pre[i]) || !low(pre[j]) {
                continue;
            }
            let better = match best {
                None => true,
                Some((g, bi, bj)) => gap > g || (gap == g && (i < bi || (i == bi && j > bj))),
            };
            if better {
                best = Some((gap, i, j));
            }
        }
    }
    let risk_ok = !cfg.require_risk_factor_codes
        || patient.diagnoses.iter().any(|c| {
            c.date < admit_date
                && canonical(&c.code).is_some_and(|code| cfg.risk_factor_codes.iter().any(|p| code.starts_with(p.as_str())))
        });
    let witness = best.filter(|_| risk_ok).map(|(_, i, j)| CreatinineWitness {
        first: point(pre[i]),
        second: point(pre[j]),
    });

    let category = match () {
        _ if transplant => CkdCategory::CkdAfterTransplant,
        _ if history => CkdCategory::CkdByHistory,
        _ if witness.is_some() => CkdCategory::CkdByCreatinine,
        _ if prior_codes.is_empty() && pre.is_empty() => CkdCategory::InsufficientData,
        _ => CkdCategory::NoCkd,
    };
    if category == CkdCategory::InsufficientData {
        return CkdAssessment {
            category,
            recent_aki: RecentAki::None,
            g_stage: GStage::Unstageable,
            reference_egfr: None,
            witness: None,
        };
    }

    let skip_ns = cfg.ignore_nonspecific_aki_codes;
    let window_from = admit_date - Duration::days(cfg.recent_aki_days);
    let coded = patient
        .diagnoses
        .iter()
        .chain(&patient.procedures)
        .any(|c| c.date >= window_from && c.date < admit_date && codes.has(c, Category::AkiHistory, skip_ns));
    let recent_aki = if !coded {
        RecentAki::None
    } else {
        let lookback = stay.admit - Duration::days(cfg.recent_aki_days);
        let mut latest: Option<&PriorAkiOutcome> = None;
        for o in prior {
            if latest.is_none_or(|l| o.episode_end >= l.episode_end) {
                latest = Some(o);
            }
        }
        let recovered = match latest.filter(|o| o.episode_end >= lookback) {
            Some(o) => o.recovered,
            None => match (pre.last(), reference) {
                (Some(last), Some(r)) => {
                    let eps = crate::COMPARISON_EPS;
                    let high = last.value >= cfg.nonrecovery_ratio * r - eps || last.value - r >= cfg.nonrecovery_rise - eps;
                    !high
                }
                _ => true,
            },
        };
        if recovered {
            RecentAki::RecoveredAkiOnAdmission
        } else {
            RecentAki::AkdNonrecoveredOnAdmission
        }
    };

    let age = years_between(patient.birth_date, admit_date);
    let reference_egfr = reference.and_then(|r| egfr(config, r, age, patient.sex, patient.race_black));
    CkdAssessment {
        category,
        recent_aki,
        g_stage: reference_egfr.map_or(GStage::Unstageable, stage_of),
        reference_egfr,
        witness: if category == CkdCategory::CkdByCreatinine { witness } else { None },
    }
}
