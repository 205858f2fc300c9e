//! Agreement with chart review: confusion matrices, exact binomial
//! intervals, sample size, and the stratified review sample.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::inv_beta_reg;
use thiserror::Error;

use crate::engine::EncounterPhenotype;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("label sets differ: {only_predicted} ids only predicted, {only_gold} only in gold (e.g. {example:?})")]
    IdMismatch {
        only_predicted: usize,
        only_gold: usize,
        example: String,
    },
    #[error("{metric}: denominator is zero")]
    ZeroDenominator { metric: &'static str },
    #[error("odds ratio gives p1 = p0; no sample size")]
    DegenerateProportions,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("gold labels line {line}: {message}")]
    Gold { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Cross-tabulate predicted against gold labels. Both maps must cover the
/// same, non-empty set of ids.
pub fn confusion(predicted: &BTreeMap<String, bool>, gold: &BTreeMap<String, bool>) -> Result<ConfusionMatrix, ValidationError> {
    let p: BTreeSet<&String> = predicted.keys().collect();
    let g: BTreeSet<&String> = gold.keys().collect();
    if p != g || p.is_empty() {
        let only_p: Vec<_> = p.difference(&g).collect();
        let only_g: Vec<_> = g.difference(&p).collect();
        let example = only_p.first().or(only_g.first()).map(|s| s.to_string()).unwrap_or_default();
        return Err(ValidationError::IdMismatch {
            only_predicted: only_p.len(),
            only_gold: only_g.len(),
            example,
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (id, &pred) in predicted {
        match (pred, gold[id]) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Exact (Clopper-Pearson) two-sided interval for `x` successes in `n`.
pub fn clopper_pearson(x: u64, n: u64, alpha: f64) -> (f64, f64) {
    assert!(x <= n && n > 0, "need 0 <= x <= n and n > 0");
    let (xf, nf) = (x as f64, n as f64);
    let lo = if x == 0 { 0.0 } else { inv_beta_reg(xf, nf - xf + 1.0, alpha / 2.0) };
    let hi = if x == n { 1.0 } else { inv_beta_reg(xf + 1.0, nf - xf, 1.0 - alpha / 2.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionCi {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ProportionCi {
    pub fn exact(successes: u64, trials: u64, alpha: f64) -> ProportionCi {
        let (lower, upper) = clopper_pearson(successes, trials, alpha);
        ProportionCi {
            successes,
            trials,
            estimate: successes as f64 / trials as f64,
            lower,
            upper,
        }
    }

    /// `0.87 (0.81, 0.92)`, each value rounded half-up to two decimals.
    pub fn display(&self) -> String {
        format!(
            "{:.2} ({:.2}, {:.2})",
            round_half_up(self.estimate, 2),
            round_half_up(self.lower, 2),
            round_half_up(self.upper, 2)
        )
    }
}

/// Round half away from zero for non-negative values, tolerating binary
/// representation error at the half.
pub fn round_half_up(v: f64, decimals: i32) -> f64 {
    let m = 10f64.powi(decimals);
    (v * m + 0.5 + 1e-9).floor() / m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticMetrics {
    pub ppv: ProportionCi,
    pub npv: ProportionCi,
    pub sensitivity: ProportionCi,
    pub specificity: ProportionCi,
    pub accuracy: ProportionCi,
}

impl DiagnosticMetrics {
    pub fn rows(&self) -> [(&'static str, &ProportionCi); 5] {
        [
            ("PPV", &self.ppv),
            ("NPV", &self.npv),
            ("Sensitivity", &self.sensitivity),
            ("Specificity", &self.specificity),
            ("Accuracy", &self.accuracy),
        ]
    }
}

pub fn diagnostic_metrics(cm: &ConfusionMatrix) -> Result<DiagnosticMetrics, ValidationError> {
    diagnostic_metrics_at(cm, 0.05)
}

pub fn diagnostic_metrics_at(cm: &ConfusionMatrix, alpha: f64) -> Result<DiagnosticMetrics, ValidationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ValidationError::InvalidParams(format!("alpha {alpha} outside (0, 1)")));
    }
    let ci = |metric: &'static str, x: u64, n: u64| {
        if n == 0 {
            Err(ValidationError::ZeroDenominator { metric })
        } else {
            Ok(ProportionCi::exact(x, n, alpha))
        }
    };
    Ok(DiagnosticMetrics {
        ppv: ci("ppv", cm.tp, cm.tp + cm.fp)?,
        npv: ci("npv", cm.tn, cm.tn + cm.fn_)?,
        sensitivity: ci("sensitivity", cm.tp, cm.tp + cm.fn_)?,
        specificity: ci("specificity", cm.tn, cm.tn + cm.fp)?,
        accuracy: ci("accuracy", cm.tp + cm.tn, cm.total())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    pub p0: f64,
    pub odds_ratio: f64,
    pub alpha: f64,
    pub power: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        PowerParams {
            p0: 0.5,
            odds_ratio: 2.0,
            alpha: 0.05,
            power: 0.8,
        }
    }
}

/// Per-group sample size for comparing two proportions, where the second
/// proportion is implied by `p0` and the odds ratio.
pub fn sample_size(params: &PowerParams) -> Result<u64, ValidationError> {
    let PowerParams { p0, odds_ratio, alpha, power } = *params;
    let open_unit = |v: f64| v > 0.0 && v < 1.0;
    if !(open_unit(p0) && open_unit(alpha) && open_unit(power) && odds_ratio > 0.0) {
        return Err(ValidationError::InvalidParams(format!("{params:?}")));
    }
    let p1 = odds_ratio * p0 / (1.0 - p0 + odds_ratio * p0);
    if (p1 - p0).abs() < 1e-12 {
        return Err(ValidationError::DegenerateProportions);
    }
    let z = Normal::standard();
    let za = z.inverse_cdf(1.0 - alpha / 2.0);
    let zb = z.inverse_cdf(power);
    let pbar = (p0 + p1) / 2.0;
    let num = za * (2.0 * pbar * (1.0 - pbar)).sqrt() + zb * (p0 * (1.0 - p0) + p1 * (1.0 - p1)).sqrt();
    Ok((num * num / ((p1 - p0) * (p1 - p0))).ceil() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AkiReviewGroup {
    NoAki,
    AkiRecovered,
    AkiNonRecovered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub ckd: bool,
    pub aki: AkiReviewGroup,
}

impl Stratum {
    pub const ALL: [Stratum; 6] = [
        Stratum { ckd: true, aki: AkiReviewGroup::NoAki },
        Stratum { ckd: true, aki: AkiReviewGroup::AkiRecovered },
        Stratum { ckd: true, aki: AkiReviewGroup::AkiNonRecovered },
        Stratum { ckd: false, aki: AkiReviewGroup::NoAki },
        Stratum { ckd: false, aki: AkiReviewGroup::AkiRecovered },
        Stratum { ckd: false, aki: AkiReviewGroup::AkiNonRecovered },
    ];

    /// CKD case/control by category; AKI recovery judged on the last episode.
    pub fn of(p: &EncounterPhenotype) -> Stratum {
        let aki = match p.episodes.last() {
            None => AkiReviewGroup::NoAki,
            Some(e) if e.recovered => AkiReviewGroup::AkiRecovered,
            Some(_) => AkiReviewGroup::AkiNonRecovered,
        };
        Stratum {
            ckd: p.ckd.category.is_ckd(),
            aki,
        }
    }

    pub fn label(&self) -> String {
        let aki = match self.aki {
            AkiReviewGroup::NoAki => "NO_AKI",
            AkiReviewGroup::AkiRecovered => "AKI_RECOVERED",
            AkiReviewGroup::AkiNonRecovered => "AKI_NONRECOVERED",
        };
        format!("{}/{aki}", if self.ckd { "CKD" } else { "NO_CKD" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewCandidate {
    pub encounter_id: String,
    pub stratum: Stratum,
    pub reference_creatinine: f64,
}

impl ReviewCandidate {
    pub fn from_phenotype(p: &EncounterPhenotype) -> Option<ReviewCandidate> {
        Some(ReviewCandidate {
            encounter_id: p.encounter_id.clone(),
            stratum: Stratum::of(p),
            reference_creatinine: p.admission_reference()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tail {
    Lowest,
    Highest,
    /// Short stratum, taken whole.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPick {
    pub encounter_id: String,
    pub stratum: Stratum,
    pub tail: Tail,
    pub reference_creatinine: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub stratum: Stratum,
    pub members: usize,
    pub selected: usize,
    pub short: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewSample {
    pub picks: Vec<ReviewPick>,
    pub strata: Vec<StratumSummary>,
}

/// Per stratum, the `k` lowest and then the `k` highest reference
/// creatinines among the rest; ties go to the lower encounter id. A stratum
/// with fewer than `2k` members is taken whole and flagged short.
pub fn stratified_review_sample(candidates: &[ReviewCandidate], k: usize) -> ReviewSample {
    let mut out = ReviewSample::default();
    for stratum in Stratum::ALL {
        let mut members: Vec<&ReviewCandidate> = candidates.iter().filter(|c| c.stratum == stratum).collect();
        members.sort_by(|a, b| {
            a.reference_creatinine
                .total_cmp(&b.reference_creatinine)
                .then_with(|| a.encounter_id.cmp(&b.encounter_id))
        });
        let short = members.len() < 2 * k;
        let pick = |c: &ReviewCandidate, tail| ReviewPick {
            encounter_id: c.encounter_id.clone(),
            stratum,
            tail,
            reference_creatinine: c.reference_creatinine,
        };
        let before = out.picks.len();
        if short {
            out.picks.extend(members.iter().map(|c| pick(c, Tail::All)));
        } else {
            out.picks.extend(members[..k].iter().map(|c| pick(c, Tail::Lowest)));
            let mut rest = members[k..].to_vec();
            rest.sort_by(|a, b| {
                b.reference_creatinine
                    .total_cmp(&a.reference_creatinine)
                    .then_with(|| a.encounter_id.cmp(&b.encounter_id))
            });
            out.picks.extend(rest[..k].iter().map(|c| pick(c, Tail::Highest)));
        }
        out.strata.push(StratumSummary {
            stratum,
            members: members.len(),
            selected: out.picks.len() - before,
            short,
        });
    }
    out
}

/// Chart-review labels keyed by encounter id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldLabels {
    pub ckd: BTreeMap<String, bool>,
    pub aki: BTreeMap<String, bool>,
}

pub const GOLD_COLUMNS: [&str; 3] = ["encounter_deiden_id", "gold_ckd", "gold_aki"];

/// Read `encounter_deiden_id,gold_ckd,gold_aki` rows with 0/1 values.
pub fn read_gold_labels<R: Read>(reader: R) -> Result<GoldLabels, ValidationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ValidationError::Gold { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| ValidationError::Gold {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (id, ckd, aki) = (col(GOLD_COLUMNS[0])?, col(GOLD_COLUMNS[1])?, col(GOLD_COLUMNS[2])?);
    let mut out = GoldLabels::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| ValidationError::Gold { line, message: e.to_string() })?;
        let flag = |c: usize| match row.get(c) {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            other => Err(ValidationError::Gold {
                line,
                message: format!("expected 0 or 1, got {:?}", other.unwrap_or("")),
            }),
        };
        let key = row.get(id).unwrap_or_default().to_string();
        if out.ckd.contains_key(&key) {
            return Err(ValidationError::Gold {
                line,
                message: format!("duplicate id {key:?}"),
            });
        }
        out.ckd.insert(key.clone(), flag(ckd)?);
        out.aki.insert(key, flag(aki)?);
    }
    Ok(out)
}

/// Algorithm-vs-review table and metric lines.
pub fn render_metrics_table(title: &str, cm: &ConfusionMatrix, m: &DiagnosticMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "Phenotyping algorithm\tManual chart review");
    let _ = writeln!(s, "\tCase\tControl\tTotal");
    let _ = writeln!(s, "Case\t{}\t{}\t{}", cm.tp, cm.fp, cm.tp + cm.fp);
    let _ = writeln!(s, "Control\t{}\t{}\t{}", cm.fn_, cm.tn, cm.fn_ + cm.tn);
    let _ = writeln!(s, "Total\t{}\t{}\t{}", cm.tp + cm.fn_, cm.fp + cm.tn, cm.total());
    for (name, ci) in m.rows() {
        let _ = writeln!(s, "{name} (95% CI)\t{}", ci.display());
    }
    s
}
