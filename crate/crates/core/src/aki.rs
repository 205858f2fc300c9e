//! KDIGO creatinine staging, daily RRT status, and episode segmentation.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::code_tables::{Category, CodeTable};
use crate::ingest::{Admission, CodeEvent, CreatinineMeasurement, FlowsheetEntry};
use crate::COMPARISON_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdigoThresholds {
    pub abs_rise: f64,
    pub ratio_stage1: f64,
    pub ratio_stage2: f64,
    pub ratio_stage3: f64,
    pub abs_stage3: f64,
    pub ratio_window_hours: i64,
    pub abs_window_hours: i64,
    pub eps: f64,
}

impl Default for KdigoThresholds {
    fn default() -> Self {
        KdigoThresholds {
            abs_rise: 0.3,
            ratio_stage1: 1.5,
            ratio_stage2: 2.0,
            ratio_stage3: 3.0,
            abs_stage3: 4.0,
            ratio_window_hours: 168,
            abs_window_hours: 48,
            eps: COMPARISON_EPS,
        }
    }
}

impl KdigoThresholds {
    pub fn is_valid(&self) -> bool {
        self.abs_rise > 0.0
            && 0.0 < self.ratio_stage1
            && self.ratio_stage1 < self.ratio_stage2
            && self.ratio_stage2 < self.ratio_stage3
            && self.abs_stage3 > 0.0
            && self.ratio_window_hours > 0
            && self.abs_window_hours > 0
            && self.eps >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AkiStage {
    #[default]
    None,
    S1,
    S2,
    S3,
    S3Rrt,
}

impl AkiStage {
    pub const ALL: [AkiStage; 5] = [AkiStage::None, AkiStage::S1, AkiStage::S2, AkiStage::S3, AkiStage::S3Rrt];

    pub fn as_str(self) -> &'static str {
        match self {
            AkiStage::None => "NONE",
            AkiStage::S1 => "S1",
            AkiStage::S2 => "S2",
            AkiStage::S3 => "S3",
            AkiStage::S3Rrt => "S3_RRT",
        }
    }

    pub fn is_aki(self) -> bool {
        self >= AkiStage::S1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "ABS_RISE_48H")]
    AbsRise48h,
    #[serde(rename = "RATIO_1_5")]
    Ratio1_5,
    #[serde(rename = "RATIO_2_0")]
    Ratio2_0,
    #[serde(rename = "RATIO_3_0")]
    Ratio3_0,
    #[serde(rename = "ABS_GE_4")]
    AbsGe4,
    #[serde(rename = "RRT")]
    Rrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkiPointAssessment {
    pub at: NaiveDateTime,
    pub scr: f64,
    pub reference: f64,
    pub stage: AkiStage,
    pub criteria_met: Vec<Criterion>,
}

/// Stage one creatinine trigger.
///
/// `labs_upto` are the patient's labs up to and including the trigger, in
/// time order; the 48-hour rise is measured from the lowest of those taken
/// within 48 hours of the trigger.
pub fn assess_point(
    trigger: &CreatinineMeasurement,
    reference: f64,
    labs_upto: &[CreatinineMeasurement],
    rrt_today: bool,
    th: &KdigoThresholds,
) -> AkiPointAssessment {
    let t = trigger.taken_at;
    let scr = trigger.value;
    let from = t - Duration::hours(th.abs_window_hours);
    let window_min = labs_upto
        .iter()
        .rev()
        .take_while(|l| l.taken_at > from)
        .filter(|l| l.taken_at <= t)
        .map(|l| l.value)
        .fold(scr, f64::min);

    let eps = th.eps;
    let at_least = |k: f64| scr >= k * reference - eps;
    let mut criteria = Vec::new();
    let abs = scr - window_min >= th.abs_rise - eps;
    if abs {
        criteria.push(Criterion::AbsRise48h);
    }
    let r15 = at_least(th.ratio_stage1);
    if r15 {
        criteria.push(Criterion::Ratio1_5);
    }
    let r20 = at_least(th.ratio_stage2);
    if r20 {
        criteria.push(Criterion::Ratio2_0);
    }
    let r30 = at_least(th.ratio_stage3);
    if r30 {
        criteria.push(Criterion::Ratio3_0);
    }
    let ge4 = scr >= th.abs_stage3 - eps && (abs || r15);
    if ge4 {
        criteria.push(Criterion::AbsGe4);
    }
    if rrt_today {
        criteria.push(Criterion::Rrt);
    }
    let stage = if rrt_today {
        AkiStage::S3Rrt
    } else if r30 || ge4 {
        AkiStage::S3
    } else if r20 {
        AkiStage::S2
    } else if r15 || abs {
        AkiStage::S1
    } else {
        AkiStage::None
    };
    AkiPointAssessment {
        at: t,
        scr,
        reference,
        stage,
        criteria_met: criteria,
    }
}

const CONTINUOUS_RRT_MODES: [&str; 3] = ["CVVH", "CVVHD", "CVVHDF"];

fn flowsheet_shows_rrt(f: &FlowsheetEntry) -> bool {
    let treatment = f.measure_name.trim().eq_ignore_ascii_case("treatment type")
        && CONTINUOUS_RRT_MODES
            .iter()
            .any(|m| f.value.trim().eq_ignore_ascii_case(m));
    treatment || f.volumes.any_nonzero()
}

fn is_rrt_procedure(c: &CodeEvent, table: &CodeTable) -> bool {
    table.classify(&c.code, c.system).contains(Category::Rrt)
}

/// Whether renal replacement therapy is documented on `date`.
pub fn rrt_on_day(date: NaiveDate, procedures: &[CodeEvent], flowsheet: &[FlowsheetEntry], table: &CodeTable) -> bool {
    procedures.iter().any(|c| c.date == date && is_rrt_procedure(c, table))
        || flowsheet
            .iter()
            .any(|f| f.recorded_at.date() == date && flowsheet_shows_rrt(f))
}

/// Daily RRT status over the dates of one encounter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RrtDayLedger {
    days: BTreeMap<NaiveDate, bool>,
}

impl RrtDayLedger {
    pub fn build(encounter: &Admission, procedures: &[CodeEvent], flowsheet: &[FlowsheetEntry], table: &CodeTable) -> Self {
        let mut days: BTreeMap<NaiveDate, bool> = encounter.dates().map(|d| (d, false)).collect();
        for c in procedures {
            if let Some(slot) = days.get_mut(&c.date) {
                if !*slot && is_rrt_procedure(c, table) {
                    *slot = true;
                }
            }
        }
        for f in flowsheet {
            if let Some(slot) = days.get_mut(&f.recorded_at.date()) {
                if !*slot && flowsheet_shows_rrt(f) {
                    *slot = true;
                }
            }
        }
        RrtDayLedger { days }
    }

    pub fn from_days(days: BTreeMap<NaiveDate, bool>) -> Self {
        RrtDayLedger { days }
    }

    pub fn mark(&mut self, date: NaiveDate) -> bool {
        match self.days.get_mut(&date) {
            Some(slot) if !*slot => {
                *slot = true;
                true
            }
            _ => false,
        }
    }

    pub fn is_rrt(&self, date: NaiveDate) -> bool {
        self.days.get(&date).copied().unwrap_or(false)
    }

    pub fn rrt_dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.iter().filter(|(_, v)| **v).map(|(d, _)| *d)
    }

    pub fn count(&self) -> usize {
        self.days.values().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayFlag {
    pub date: NaiveDate,
    /// A creatinine was assessed or RRT was documented.
    pub has_data: bool,
    pub aki_present: bool,
    pub rrt: bool,
    pub max_stage: AkiStage,
    /// Earliest trigger on this date staged S1 or worse.
    pub first_aki_at: Option<NaiveDateTime>,
}

/// One flag per encounter date. A date without data counts as AKI-present
/// only when the nearest data dates on both sides are AKI-present.
pub fn daily_flags(encounter: &Admission, assessments: &[AkiPointAssessment], ledger: &RrtDayLedger) -> Vec<DayFlag> {
    let mut flags: Vec<DayFlag> = encounter
        .dates()
        .map(|date| {
            let rrt = ledger.is_rrt(date);
            DayFlag {
                date,
                has_data: rrt,
                aki_present: rrt,
                rrt,
                max_stage: if rrt { AkiStage::S3Rrt } else { AkiStage::None },
                first_aki_at: None,
            }
        })
        .collect();
    let first = encounter.admit.date();
    for a in assessments {
        let idx = (a.at.date() - first).num_days();
        let Some(f) = usize::try_from(idx).ok().and_then(|i| flags.get_mut(i)) else {
            continue;
        };
        f.has_data = true;
        f.max_stage = f.max_stage.max(a.stage);
        if a.stage.is_aki() {
            f.aki_present = true;
            if f.first_aki_at.is_none_or(|t| a.at < t) {
                f.first_aki_at = Some(a.at);
            }
        }
    }
    let mut last_data: Option<bool> = None;
    let mut pending: Vec<usize> = Vec::new();
    for i in 0..flags.len() {
        if flags[i].has_data {
            let here = flags[i].aki_present;
            if here && last_data == Some(true) {
                for &j in &pending {
                    flags[j].aki_present = true;
                }
            }
            pending.clear();
            last_data = Some(here);
        } else {
            pending.push(i);
        }
    }
    flags
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub start: NaiveDateTime,
    /// Midnight after the last AKI-present date.
    pub end: NaiveDateTime,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    /// Closed by two AKI-free dates before discharge.
    pub ended: bool,
}

/// Runs of AKI-present dates; a run closes after two consecutive AKI-free
/// dates.
pub fn segment_episodes(flags: &[DayFlag], admit: NaiveDateTime) -> Vec<EpisodeSpan> {
    let mut out = Vec::new();
    let mut open: Option<EpisodeSpan> = None;
    let mut free = 0;
    for f in flags {
        if f.aki_present {
            free = 0;
            match open.as_mut() {
                Some(ep) => ep.last_day = f.date,
                None => {
                    let midnight = f.date.and_hms_opt(0, 0, 0).unwrap_or_default();
                    let start = if f.rrt {
                        midnight.max(admit)
                    } else {
                        f.first_aki_at.unwrap_or(midnight.max(admit))
                    };
                    open = Some(EpisodeSpan {
                        start,
                        end: start,
                        first_day: f.date,
                        last_day: f.date,
                        ended: false,
                    });
                }
            }
        } else if let Some(mut ep) = open {
            free += 1;
            if free == 2 {
                ep.ended = true;
                out.push(ep);
                open = None;
            }
        }
    }
    out.extend(open);
    for ep in &mut out {
        ep.end = (ep.last_day + Duration::days(1))
            .and_hms_opt(0, 0, 0)
            .unwrap_or(ep.start);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DurationClass {
    RapidReversal,
    Persistent,
    Akd,
}

impl DurationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DurationClass::RapidReversal => "RAPID_REVERSAL",
            DurationClass::Persistent => "PERSISTENT",
            DurationClass::Akd => "AKD",
        }
    }
}

/// Under 48 hours is rapid reversal, over 7 days is AKD; 48 hours exactly is
/// persistent.
pub fn classify_duration(duration_hours: f64) -> DurationClass {
    if duration_hours < 48.0 {
        DurationClass::RapidReversal
    } else if duration_hours > 168.0 {
        DurationClass::Akd
    } else {
        DurationClass::Persistent
    }
}

/// Recovered when the episode closed before discharge and the last
/// creatinine assessed before end + 48h is no longer in AKI range.
pub fn recovery_status(span: &EpisodeSpan, assessments: &[AkiPointAssessment]) -> bool {
    if !span.ended {
        return false;
    }
    let limit = span.end + Duration::hours(48);
    assessments
        .iter()
        .rev()
        .find(|a| a.at < limit)
        .is_some_and(|a| a.stage == AkiStage::None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkiEpisode {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub max_stage: AkiStage,
    pub rrt_days: usize,
    pub duration_hours: f64,
    pub duration_class: DurationClass,
    pub recovered: bool,
    pub ended: bool,
}

/// Full episode records for one encounter.
pub fn build_episodes(
    encounter: &Admission,
    assessments: &[AkiPointAssessment],
    ledger: &RrtDayLedger,
) -> Vec<AkiEpisode> {
    let flags = daily_flags(encounter, assessments, ledger);
    segment_episodes(&flags, encounter.admit)
        .into_iter()
        .map(|span| {
            let in_span = flags
                .iter()
                .filter(|f| f.date >= span.first_day && f.date <= span.last_day);
            let mut max_stage = AkiStage::None;
            let mut rrt_days = 0;
            for f in in_span {
                max_stage = max_stage.max(f.max_stage);
                rrt_days += usize::from(f.rrt);
            }
            let duration_hours = (span.end - span.start).num_seconds() as f64 / 3600.0;
            AkiEpisode {
                start: span.start,
                end: span.end,
                max_stage,
                rrt_days,
                duration_hours,
                duration_class: classify_duration(duration_hours),
                recovered: recovery_status(&span, assessments),
                ended: span.ended,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterRollup {
    pub aki_detected: bool,
    pub max_stage: AkiStage,
    pub episode_count: usize,
    pub recurrent: bool,
    pub rrt_days: usize,
}

pub fn encounter_rollup(episodes: &[AkiEpisode], ledger: &RrtDayLedger) -> EncounterRollup {
    let rrt_days = ledger.count();
    let mut max_stage = episodes.iter().map(|e| e.max_stage).max().unwrap_or_default();
    if rrt_days > 0 {
        max_stage = AkiStage::S3Rrt;
    }
    EncounterRollup {
        aki_detected: !episodes.is_empty(),
        max_stage,
        episode_count: episodes.len(),
        recurrent: episodes.len() > 1,
        rrt_days,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_tables::CodeSystem;
    use crate::ingest::{DialysisVolumes, EncounterType};
    use proptest::prelude::*;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 9, 4).unwrap()
    }

    fn at(day: i64, hour: u32) -> NaiveDateTime {
        (day0() + Duration::days(day)).and_hms_opt(hour, 0, 0).unwrap()
    }

    fn enc(days: i64) -> Admission {
        Admission {
            encounter_id: "E".into(),
            admit: at(0, 7),
            discharge: at(days, 20),
            encounter_type: EncounterType::Inpatient,
        }
    }

    fn lab(day: i64, hour: u32, v: f64) -> CreatinineMeasurement {
        CreatinineMeasurement::mg_dl(v, at(day, hour))
    }

    fn point(day: i64, stage: AkiStage) -> AkiPointAssessment {
        AkiPointAssessment {
            at: at(day, 6),
            scr: 1.0,
            reference: 1.0,
            stage,
            criteria_met: vec![],
        }
    }

    fn th() -> KdigoThresholds {
        KdigoThresholds::default()
    }

    #[test]
    fn point_examples() {
        let prior = lab(0, 8, 1.0);
        let trig = lab(1, 6, 1.4);
        let a = assess_point(&trig, 1.0, &[prior, trig.clone()], false, &th());
        assert_eq!(a.stage, AkiStage::S1);
        assert_eq!(a.criteria_met, vec![Criterion::AbsRise48h]);

        let trig = lab(1, 6, 2.0);
        assert_eq!(assess_point(&trig, 1.0, std::slice::from_ref(&trig), false, &th()).stage, AkiStage::S2);
        let trig = lab(1, 6, 3.1);
        assert_eq!(assess_point(&trig, 1.0, std::slice::from_ref(&trig), false, &th()).stage, AkiStage::S3);
        let trig = lab(1, 6, 0.5);
        let a = assess_point(&trig, 1.0, std::slice::from_ref(&trig), true, &th());
        assert_eq!(a.stage, AkiStage::S3Rrt);
        assert!(a.criteria_met.contains(&Criterion::Rrt));
    }

    #[test]
    fn ratio_boundary_with_rounding() {
        // 1.5 x 0.8 is 1.2000000000000002 in binary floating point
        let trig = lab(1, 6, 1.2);
        let a = assess_point(&trig, 0.8, std::slice::from_ref(&trig), false, &th());
        assert_eq!(a.stage, AkiStage::S1);
    }

    #[test]
    fn high_creatinine_alone_is_not_aki() {
        let prev = lab(0, 8, 4.4);
        let trig = lab(1, 6, 4.5);
        let a = assess_point(&trig, 4.3, &[prev, trig.clone()], false, &th());
        assert_eq!(a.stage, AkiStage::None);
        assert!(a.criteria_met.is_empty());
        let prev = lab(0, 8, 3.9);
        let trig = lab(1, 6, 4.2);
        let a = assess_point(&trig, 3.9, &[prev, trig.clone()], false, &th());
        assert_eq!(a.stage, AkiStage::S3);
        assert!(a.criteria_met.contains(&Criterion::AbsGe4));
    }

    #[test]
    fn rise_window_is_48_hours() {
        let old = lab(0, 6, 1.0);
        let trig = lab(2, 6, 1.35);
        assert_eq!(assess_point(&trig, 1.2, &[old, trig.clone()], false, &th()).stage, AkiStage::None);
        let old = lab(0, 7, 1.0);
        assert_eq!(assess_point(&trig, 1.2, &[old, trig.clone()], false, &th()).stage, AkiStage::S1);
    }

    #[test]
    fn rrt_sources() {
        let t = CodeTable::builtin();
        let d = day0();
        let cpt = vec![CodeEvent::new(d, "90935", CodeSystem::Cpt)];
        assert!(rrt_on_day(d, &cpt, &[], &t));
        assert!(!rrt_on_day(d + Duration::days(1), &cpt, &[], &t));
        let cvvhdf = FlowsheetEntry {
            measure_name: "Treatment Type".into(),
            value: "cvvhdf".into(),
            recorded_at: at(0, 12),
            volumes: DialysisVolumes::default(),
        };
        assert!(rrt_on_day(d, &[], &[cvvhdf], &t));
        let zero = FlowsheetEntry {
            measure_name: "HD Output".into(),
            value: String::new(),
            recorded_at: at(0, 12),
            volumes: DialysisVolumes {
                hemodialysis_output: Some(0.0),
                ..Default::default()
            },
        };
        assert!(!rrt_on_day(d, &[], std::slice::from_ref(&zero), &t));
        let mut nonzero = zero;
        nonzero.volumes.peritoneal_dialysis_intake = Some(1500.0);
        assert!(rrt_on_day(d, &[], &[nonzero], &t));

        let e = enc(3);
        let ledger = RrtDayLedger::build(&e, &cpt, &[], &t);
        assert_eq!(ledger.count(), 1);
    }

    fn flags_of(days: i64, pts: &[AkiPointAssessment]) -> Vec<bool> {
        daily_flags(&enc(days), pts, &RrtDayLedger::build(&enc(days), &[], &[], &CodeTable::builtin()))
            .iter()
            .map(|f| f.aki_present)
            .collect()
    }

    #[test]
    fn bridging() {
        let f = flags_of(5, &[point(1, AkiStage::S1), point(2, AkiStage::S1)]);
        assert_eq!(f, [false, true, true, false, false, false]);
        let f = flags_of(5, &[point(1, AkiStage::S1), point(3, AkiStage::S1)]);
        assert_eq!(f, [false, true, true, true, false, false]);
        let f = flags_of(5, &[point(1, AkiStage::S1), point(4, AkiStage::None)]);
        assert_eq!(f, [false, true, false, false, false, false]);
    }

    fn spans(present: &[bool]) -> Vec<(usize, usize, bool)> {
        let flags: Vec<DayFlag> = present
            .iter()
            .enumerate()
            .map(|(i, p)| DayFlag {
                date: day0() + Duration::days(i as i64),
                has_data: true,
                aki_present: *p,
                rrt: false,
                max_stage: AkiStage::None,
                first_aki_at: p.then(|| at(i as i64, 6)),
            })
            .collect();
        segment_episodes(&flags, at(0, 0))
            .iter()
            .map(|s| {
                (
                    (s.first_day - day0()).num_days() as usize,
                    (s.last_day - day0()).num_days() as usize,
                    s.ended,
                )
            })
            .collect()
    }

    #[test]
    fn segmentation_examples() {
        let t = true;
        let f = false;
        assert_eq!(spans(&[f, t, t, t, f, t, f, f]), vec![(1, 5, true)]);
        assert_eq!(spans(&[f, t, t, f, f, t]), vec![(1, 2, true), (5, 5, false)]);
        assert_eq!(spans(&[f, f, f]), vec![]);
        assert_eq!(spans(&[t, f]), vec![(0, 0, false)]);
    }

    #[test]
    fn durations() {
        assert_eq!(classify_duration(24.0), DurationClass::RapidReversal);
        assert_eq!(classify_duration(48.0), DurationClass::Persistent);
        assert_eq!(classify_duration(96.0), DurationClass::Persistent);
        assert_eq!(classify_duration(168.0), DurationClass::Persistent);
        assert_eq!(classify_duration(200.0), DurationClass::Akd);
    }

    #[test]
    fn recovery_examples() {
        let e = enc(9);
        let ledger = RrtDayLedger::build(&e, &[], &[], &CodeTable::builtin());
        let pts = vec![
            point(3, AkiStage::S1),
            point(4, AkiStage::S2),
            point(5, AkiStage::S1),
            point(6, AkiStage::None),
            point(7, AkiStage::None),
        ];
        let eps = build_episodes(&e, &pts, &ledger);
        assert_eq!(eps.len(), 1);
        assert!(eps[0].recovered);
        assert_eq!(eps[0].max_stage, AkiStage::S2);
        assert_eq!(eps[0].duration_class, DurationClass::Persistent);

        let e = enc(5);
        let eps = build_episodes(&e, &pts[..3], &RrtDayLedger::build(&e, &[], &[], &CodeTable::builtin()));
        assert!(!eps[0].recovered && !eps[0].ended);
    }

    #[test]
    fn rollup_examples() {
        let ep = |s| AkiEpisode {
            start: at(1, 6),
            end: at(2, 0),
            max_stage: s,
            rrt_days: 0,
            duration_hours: 18.0,
            duration_class: DurationClass::RapidReversal,
            recovered: true,
            ended: true,
        };
        let empty = RrtDayLedger::default();
        let r = encounter_rollup(&[ep(AkiStage::S1), ep(AkiStage::S3)], &empty);
        assert_eq!((r.max_stage, r.recurrent), (AkiStage::S3, true));
        let r = encounter_rollup(&[ep(AkiStage::S2)], &empty);
        assert_eq!((r.max_stage, r.recurrent), (AkiStage::S2, false));
        let e = enc(5);
        let procs: Vec<_> = (1..4)
            .map(|d| CodeEvent::new(day0() + Duration::days(d), "90935", CodeSystem::Cpt))
            .collect();
        let ledger = RrtDayLedger::build(&e, &procs, &[], &CodeTable::builtin());
        let r = encounter_rollup(&[ep(AkiStage::S1)], &ledger);
        assert_eq!((r.max_stage, r.rrt_days), (AkiStage::S3Rrt, 3));
    }

    // Day walk: a no-data day is present iff the nearest data days on both
    // sides are present.
    fn walk(data: &[Option<bool>]) -> Vec<bool> {
        (0..data.len())
            .map(|i| match data[i] {
                Some(p) => p,
                None => {
                    let prev = data[..i].iter().rev().find_map(|d| *d);
                    let next = data[i + 1..].iter().find_map(|d| *d);
                    prev == Some(true) && next == Some(true)
                }
            })
            .collect()
    }

    proptest! {
        #[test]
        fn stage_monotone_in_scr(reference in 0.3f64..5.0, a in 0.2f64..12.0, b in 0.2f64..12.0, prev in 0.2f64..8.0, rrt: bool) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = lab(0, 8, prev);
            let t_lo = lab(1, 6, lo);
            let t_hi = lab(1, 6, hi);
            let s_lo = assess_point(&t_lo, reference, &[p.clone(), t_lo.clone()], rrt, &th());
            let s_hi = assess_point(&t_hi, reference, &[p, t_hi.clone()], rrt, &th());
            prop_assert!(s_hi.stage >= s_lo.stage);
            prop_assert_eq!(s_lo.stage == AkiStage::None, s_lo.criteria_met.is_empty());
            if rrt { prop_assert_eq!(s_hi.stage, AkiStage::S3Rrt); }
        }

        #[test]
        fn flags_match_day_walk(data in proptest::collection::vec(proptest::option::of(any::<bool>()), 1..20)) {
            let n = data.len() as i64 - 1;
            let pts: Vec<_> = data.iter().enumerate().filter_map(|(i, d)| {
                d.map(|p| point(i as i64, if p { AkiStage::S1 } else { AkiStage::None }))
            }).collect();
            prop_assert_eq!(flags_of(n, &pts), walk(&data));
        }

        #[test]
        fn episodes_are_separated(present in proptest::collection::vec(any::<bool>(), 1..30)) {
            let sp = spans(&present);
            for w in sp.windows(2) {
                prop_assert!(w[1].0 >= w[0].1 + 3);
            }
            for (a, b, ended) in &sp {
                prop_assert!(present[*a] && present[*b]);
                prop_assert_eq!(*ended, b + 2 < present.len());
                // no two consecutive free days inside an episode
                for i in *a..*b {
                    prop_assert!(present[i] || present[i + 1]);
                }
            }
            let covered: usize = sp.iter().map(|(a, b, _)| present[*a..=*b].iter().filter(|p| **p).count()).sum();
            prop_assert_eq!(covered, present.iter().filter(|p| **p).count());
        }

        #[test]
        fn duration_classes_partition(h in 0.0f64..1000.0) {
            let c = classify_duration(h);
            prop_assert_eq!(c == DurationClass::RapidReversal, h < 48.0);
            prop_assert_eq!(c == DurationClass::Akd, h > 168.0);
        }
    }
}
