use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EncounterPhenotype, Trajectory};
use crate::aki::AkiStage;
use crate::ckd::{CkdCategory, GStage, RecentAki};
use crate::ingest::ExclusionTally;

const RECENT: [RecentAki; 3] = [
    RecentAki::None,
    RecentAki::RecoveredAkiOnAdmission,
    RecentAki::AkdNonrecoveredOnAdmission,
];

const G_STAGES: [GStage; 7] = [
    GStage::G1,
    GStage::G2,
    GStage::G3a,
    GStage::G3b,
    GStage::G4,
    GStage::G5,
    GStage::Unstageable,
];

/// Report buckets for the maximum stage; stage 3 includes RRT.
const STAGE_ROWS: [AkiStage; 3] = [AkiStage::S1, AkiStage::S2, AkiStage::S3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            p25: quantile(&v, 0.25)?,
            median: quantile(&v, 0.5)?,
            p75: quantile(&v, 0.75)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: CkdCategory,
    pub count: usize,
    pub recent_aki: Vec<(RecentAki, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CkdDistribution {
    pub denominator: usize,
    pub categories: Vec<CategoryCount>,
    pub ckd_total: usize,
    /// G-stage counts among encounters with CKD.
    pub g_stages: Vec<(GStage, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AkiDistribution {
    pub denominator: usize,
    pub no_aki: usize,
    pub aki: usize,
    pub max_stage: Vec<(AkiStage, usize)>,
    pub rrt: usize,
    /// RRT days among encounters with any RRT.
    pub rrt_days: Option<Quartiles>,
    pub recurrent: usize,
    /// Episode durations in days.
    pub duration_days: Option<Quartiles>,
    pub rapid_reversal: usize,
    pub persistent: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub encounters: usize,
    pub ckd: CkdDistribution,
    pub aki: AkiDistribution,
    pub exclusions: ExclusionTally,
}

/// Running counts that merge associatively; finish() sorts the collected
/// values, so merge order does not affect the report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportAccumulator {
    encounters: usize,
    ckd: [[usize; 3]; 5],
    g_stage: [usize; 7],
    aki: usize,
    stage: [usize; 3],
    rrt: usize,
    recurrent: usize,
    rapid: usize,
    persistent: usize,
    rrt_days: Vec<f64>,
    durations: Vec<f64>,
}

fn idx<T: PartialEq>(all: &[T], v: &T) -> usize {
    all.iter().position(|x| x == v).unwrap_or(0)
}

impl ReportAccumulator {
    pub fn add(&mut self, p: &EncounterPhenotype) {
        self.encounters += 1;
        let c = idx(&CkdCategory::ALL, &p.ckd.category);
        self.ckd[c][idx(&RECENT, &p.ckd.recent_aki)] += 1;
        if p.ckd.category.is_ckd() {
            self.g_stage[idx(&G_STAGES, &p.ckd.g_stage)] += 1;
        }
        if !p.aki_detected {
            return;
        }
        self.aki += 1;
        let s = match p.max_aki_stage {
            AkiStage::S3Rrt => AkiStage::S3,
            s => s,
        };
        self.stage[idx(&STAGE_ROWS, &s)] += 1;
        if p.rrt_days > 0 {
            self.rrt += 1;
            self.rrt_days.push(p.rrt_days as f64);
        }
        self.recurrent += usize::from(p.recurrent_aki);
        match p.trajectory() {
            Some(Trajectory::RapidReversal) => self.rapid += 1,
            Some(Trajectory::Persistent) => self.persistent += 1,
            None => {}
        }
        self.durations
            .extend(p.episodes.iter().map(|e| e.duration_hours / 24.0));
    }

    pub fn merge(&mut self, other: &ReportAccumulator) {
        self.encounters += other.encounters;
        for (a, b) in self.ckd.iter_mut().zip(&other.ckd) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.g_stage.iter_mut().zip(&other.g_stage) {
            *x += y;
        }
        for (x, y) in self.stage.iter_mut().zip(&other.stage) {
            *x += y;
        }
        self.aki += other.aki;
        self.rrt += other.rrt;
        self.recurrent += other.recurrent;
        self.rapid += other.rapid;
        self.persistent += other.persistent;
        self.rrt_days.extend_from_slice(&other.rrt_days);
        self.durations.extend_from_slice(&other.durations);
    }

    pub fn finish(&self, exclusions: ExclusionTally) -> CohortReport {
        let categories: Vec<CategoryCount> = CkdCategory::ALL
            .iter()
            .zip(&self.ckd)
            .map(|(c, row)| CategoryCount {
                category: *c,
                count: row.iter().sum(),
                recent_aki: RECENT.iter().copied().zip(row.iter().copied()).collect(),
            })
            .collect();
        let ckd_total = categories
            .iter()
            .filter(|c| c.category.is_ckd())
            .map(|c| c.count)
            .sum();
        CohortReport {
            encounters: self.encounters,
            ckd: CkdDistribution {
                denominator: self.encounters,
                categories,
                ckd_total,
                g_stages: G_STAGES.iter().copied().zip(self.g_stage).collect(),
            },
            aki: AkiDistribution {
                denominator: self.encounters,
                no_aki: self.encounters - self.aki,
                aki: self.aki,
                max_stage: STAGE_ROWS.iter().copied().zip(self.stage).collect(),
                rrt: self.rrt,
                rrt_days: Quartiles::of(&self.rrt_days),
                recurrent: self.recurrent,
                duration_days: Quartiles::of(&self.durations),
                rapid_reversal: self.rapid,
                persistent: self.persistent,
            },
            exclusions,
        }
    }
}

/// Build a report from phenotypes already in hand.
pub fn cohort_report(phenotypes: &[EncounterPhenotype], exclusions: ExclusionTally) -> CohortReport {
    let mut acc = ReportAccumulator::default();
    for p in phenotypes {
        acc.add(p);
    }
    acc.finish(exclusions)
}

pub fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

fn category_label(c: CkdCategory) -> &'static str {
    match c {
        CkdCategory::InsufficientData => "Insufficient data",
        CkdCategory::NoCkd => "No CKD",
        CkdCategory::CkdByHistory => "CKD by medical history",
        CkdCategory::CkdByCreatinine => "CKD by creatinine criteria",
        CkdCategory::CkdAfterTransplant => "CKD after kidney transplant",
    }
}

fn recent_label(r: RecentAki) -> &'static str {
    match r {
        RecentAki::None => "no recent AKI episode",
        RecentAki::RecoveredAkiOnAdmission => "recovered recent AKI on admission",
        RecentAki::AkdNonrecoveredOnAdmission => "non-recovered recent AKI (AKD) on admission",
    }
}

fn stage_label(s: GStage) -> &'static str {
    match s {
        GStage::G1 => "G1 (eGFR >= 90)",
        GStage::G2 => "G2 (90 > eGFR >= 60)",
        GStage::G3a => "G3a (60 > eGFR >= 45)",
        GStage::G3b => "G3b (45 > eGFR >= 30)",
        GStage::G4 => "G4 (30 > eGFR >= 15)",
        GStage::G5 => "G5 (eGFR < 15)",
        GStage::Unstageable => "No staging can be done",
    }
}

impl CohortReport {
    /// Plain-text rendering with one `label<TAB>n (%)` row per line.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, indent: usize, label: &str, n: usize, d: usize| {
            let _ = writeln!(s, "{}{label}\t{n} ({:.1})", "  ".repeat(indent), percent(n, d));
        };
        let q = |x: &Option<Quartiles>| match x {
            Some(q) => format!("{:.1} ({:.1}, {:.1}, {:.1})", q.median, q.p25, q.median, q.p75),
            None => "-".to_string(),
        };

        let ex = &self.exclusions;
        let _ = writeln!(s, "Encounters screened\t{}", ex.total);
        for (r, n) in &ex.excluded {
            let _ = writeln!(s, "  Excluded: {r}\t{n}");
        }
        let _ = writeln!(s, "Encounters phenotyped\t{}", self.encounters);
        s.push('\n');

        let ckd = &self.ckd;
        let d = ckd.denominator;
        let _ = writeln!(s, "CKD groups\tn (%)");
        row(&mut s, 0, "Overall", d, d);
        let find = |c: CkdCategory| ckd.categories.iter().find(|x| x.category == c);
        let sub = |s: &mut String, c: CkdCategory| {
            if let Some(cc) = find(c) {
                row(s, 1, category_label(c), cc.count, d);
                if c != CkdCategory::InsufficientData {
                    for (r, n) in &cc.recent_aki {
                        row(s, 2, &format!("{}, {}", category_label(c), recent_label(*r)), *n, d);
                    }
                }
            }
        };
        sub(&mut s, CkdCategory::InsufficientData);
        sub(&mut s, CkdCategory::NoCkd);
        row(&mut s, 0, "CKD", ckd.ckd_total, d);
        sub(&mut s, CkdCategory::CkdByHistory);
        sub(&mut s, CkdCategory::CkdByCreatinine);
        sub(&mut s, CkdCategory::CkdAfterTransplant);
        let _ = writeln!(s, "CKD stages among encounters with CKD");
        for (g, n) in &ckd.g_stages {
            row(&mut s, 1, stage_label(*g), *n, ckd.ckd_total);
        }
        s.push('\n');

        let aki = &self.aki;
        let _ = writeln!(s, "AKI\tn (%)");
        row(&mut s, 0, "No AKI during hospitalization", aki.no_aki, aki.denominator);
        row(&mut s, 0, "AKI during hospitalization", aki.aki, aki.denominator);
        let _ = writeln!(s, "Maximum AKI stage");
        for (st, n) in &aki.max_stage {
            let label = match st {
                AkiStage::S1 => "Stage 1",
                AkiStage::S2 => "Stage 2",
                _ => "Stage 3 (with or without RRT)",
            };
            row(&mut s, 1, label, *n, aki.aki);
        }
        row(&mut s, 0, "RRT", aki.rrt, aki.aki);
        let _ = writeln!(s, "Days on RRT, median (25th, 50th, 75th)\t{}", q(&aki.rrt_days));
        row(&mut s, 0, "Recurrent AKI", aki.recurrent, aki.aki);
        let _ = writeln!(s, "AKI duration, days, median (25th, 50th, 75th)\t{}", q(&aki.duration_days));
        let _ = writeln!(s, "AKI trajectories");
        row(&mut s, 1, "Rapidly reversed AKI", aki.rapid_reversal, aki.aki);
        row(&mut s, 1, "Persistent AKI", aki.persistent, aki.aki);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let q = Quartiles::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(q.median, 2.5);
        assert_eq!(q.p25, 1.75);
        assert_eq!(q.p75, 3.25);
        assert!(Quartiles::of(&[]).is_none());
        assert_eq!(Quartiles::of(&[7.0]).unwrap().p25, 7.0);
    }

    #[test]
    fn empty_report_is_consistent() {
        let r = cohort_report(&[], ExclusionTally::new());
        assert_eq!(r.encounters, 0);
        assert_eq!(r.ckd.categories.iter().map(|c| c.count).sum::<usize>(), 0);
        assert!(r.render_text().contains("Overall\t0 (0.0)"));
    }
}
