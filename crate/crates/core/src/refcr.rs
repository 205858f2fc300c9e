//! Reference (steady-state) creatinine.
//!
//! A trigger in the first week of the stay takes the minimum of three
//! candidates: the minimum of labs in the 0-7 days before admission, the
//! median of labs 8-365 days before admission, and the admission creatinine.
//! Later triggers roll forward from the previous reference and the minimum
//! of the trailing seven days.

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Admission, CreatinineMeasurement};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefCrError {
    #[error("no creatinine measured during the encounter")]
    NoCreatinine,
    #[error("no reference candidates")]
    NoCandidates,
    #[error("median of an empty list")]
    EmptyList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    #[serde(rename = "PREADMIT_MIN_0_7D")]
    PreadmitMin0To7d,
    #[serde(rename = "PREADMIT_MEDIAN_8_365D")]
    PreadmitMedian8To365d,
    AdmissionCreatinine,
    CombinedMin,
    RollingPrior,
    NoHistoryAdmissionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabPoint {
    pub value: f64,
    pub at: NaiveDateTime,
}

impl From<&CreatinineMeasurement> for LabPoint {
    fn from(m: &CreatinineMeasurement) -> Self {
        LabPoint {
            value: m.value,
            at: m.taken_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCreatinine {
    pub value: f64,
    pub provenance: Provenance,
    pub computed_at: NaiveDateTime,
    pub inputs_used: Vec<LabPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RollingReferenceMode {
    /// Minimum of the previous reference and the trailing-week minimum.
    #[default]
    MinOfBoth,
    /// Previous reference when there is one, else the trailing-week minimum.
    PriorFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefCrConfig {
    /// Length of the "first week" of a stay and of the rolling window, hours.
    pub first_week_hours: i64,
    /// Oldest history considered before admission, days.
    pub history_days: i64,
    pub rolling_mode: RollingReferenceMode,
}

impl Default for RefCrConfig {
    fn default() -> Self {
        RefCrConfig {
            first_week_hours: 168,
            history_days: 365,
            rolling_mode: RollingReferenceMode::MinOfBoth,
        }
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64, RefCrError> {
    if values.is_empty() {
        return Err(RefCrError::EmptyList);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Earliest creatinine within [admit, discharge]. `labs` must be sorted.
pub fn admission_creatinine<'a>(
    encounter: &Admission,
    labs: &'a [CreatinineMeasurement],
) -> Result<&'a CreatinineMeasurement, RefCrError> {
    let start = labs.partition_point(|l| l.taken_at < encounter.admit);
    labs[start..]
        .first()
        .filter(|l| l.taken_at <= encounter.discharge)
        .ok_or(RefCrError::NoCreatinine)
}

/// First-week candidates, fixed for a given encounter.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstWeekCandidates {
    /// Labs in (admit - 7d, admit).
    pub recent: Vec<LabPoint>,
    /// Labs in [admit - 365d, admit - 7d].
    pub history: Vec<LabPoint>,
    pub admission: LabPoint,
}

impl FirstWeekCandidates {
    pub fn collect(
        encounter: &Admission,
        labs: &[CreatinineMeasurement],
        cfg: &RefCrConfig,
    ) -> Result<FirstWeekCandidates, RefCrError> {
        let admission = admission_creatinine(encounter, labs)?.into();
        let week = Duration::hours(cfg.first_week_hours);
        let recent_from = encounter.admit - week;
        let history_from = encounter.admit - Duration::days(cfg.history_days);
        let before = &labs[..labs.partition_point(|l| l.taken_at < encounter.admit)];
        let mut recent = Vec::new();
        let mut history = Vec::new();
        for l in before {
            if l.taken_at > recent_from {
                recent.push(l.into());
            } else if l.taken_at >= history_from {
                history.push(l.into());
            }
        }
        Ok(FirstWeekCandidates {
            recent,
            history,
            admission,
        })
    }

    pub fn recent_min(&self) -> Option<f64> {
        self.recent.iter().map(|p| p.value).reduce(f64::min)
    }

    pub fn history_median(&self) -> Option<f64> {
        let values: Vec<f64> = self.history.iter().map(|p| p.value).collect();
        median(&values).ok()
    }

    pub fn reference(&self, trigger_at: NaiveDateTime) -> ReferenceCreatinine {
        let mut value = self.admission.value;
        let mut candidates = 1;
        for c in [self.recent_min(), self.history_median()].into_iter().flatten() {
            value = value.min(c);
            candidates += 1;
        }
        let provenance = if candidates == 1 {
            Provenance::NoHistoryAdmissionOnly
        } else {
            Provenance::CombinedMin
        };
        let mut inputs_used = Vec::with_capacity(self.recent.len() + self.history.len() + 1);
        inputs_used.extend_from_slice(&self.recent);
        inputs_used.extend_from_slice(&self.history);
        inputs_used.push(self.admission);
        ReferenceCreatinine {
            value,
            provenance,
            computed_at: trigger_at,
            inputs_used,
        }
    }
}

/// Reference for a trigger at or after one week into the stay.
/// `window` holds the labs in (trigger - 7d, trigger).
pub fn rolling_reference(
    trigger_at: NaiveDateTime,
    prior: &ReferenceCreatinine,
    window: Vec<LabPoint>,
    mode: RollingReferenceMode,
) -> ReferenceCreatinine {
    let window_min = window.iter().map(|p| p.value).reduce(f64::min);
    let value = match (mode, window_min) {
        (RollingReferenceMode::MinOfBoth, Some(m)) => prior.value.min(m),
        _ => prior.value,
    };
    ReferenceCreatinine {
        value,
        provenance: Provenance::RollingPrior,
        computed_at: trigger_at,
        inputs_used: window,
    }
}

/// Whether a trigger is handled by the rolling rule. The first trigger of a
/// stay always uses the first-week rule, whenever it falls.
pub fn uses_rolling_rule(
    encounter: &Admission,
    trigger_at: NaiveDateTime,
    has_prior: bool,
    cfg: &RefCrConfig,
) -> bool {
    has_prior && trigger_at - encounter.admit >= Duration::hours(cfg.first_week_hours)
}

/// Reference creatinine at `trigger_at`.
///
/// `labs` are the patient's labs visible at the trigger, sorted by time.
/// `prior` is the reference computed at the previous trigger of the same
/// encounter.
pub fn reference_creatinine(
    trigger_at: NaiveDateTime,
    encounter: &Admission,
    labs: &[CreatinineMeasurement],
    prior: Option<&ReferenceCreatinine>,
    cfg: &RefCrConfig,
) -> Result<ReferenceCreatinine, RefCrError> {
    if labs.is_empty() {
        return Err(RefCrError::NoCandidates);
    }
    match prior {
        Some(prior) if uses_rolling_rule(encounter, trigger_at, true, cfg) => {
            let from = trigger_at - Duration::hours(cfg.first_week_hours);
            let window = labs
                .iter()
                .filter(|l| l.taken_at > from && l.taken_at < trigger_at)
                .map(LabPoint::from)
                .collect();
            Ok(rolling_reference(trigger_at, prior, window, cfg.rolling_mode))
        }
        _ => Ok(FirstWeekCandidates::collect(encounter, labs, cfg)?.reference(trigger_at)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::EncounterType;
    use chrono::NaiveDate;

    fn admit() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2015, 6, 10)
            .unwrap()
            .and_hms_opt(8, 0, 0)
            .unwrap()
    }

    fn encounter(days: i64) -> Admission {
        Admission {
            encounter_id: "E".into(),
            admit: admit(),
            discharge: admit() + Duration::days(days),
            encounter_type: EncounterType::Inpatient,
        }
    }

    fn lab(hours_from_admit: i64, v: f64) -> CreatinineMeasurement {
        CreatinineMeasurement::mg_dl(v, admit() + Duration::hours(hours_from_admit))
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[0.8, 0.9, 1.0]).unwrap(), 0.9);
        assert!((median(&[0.8, 1.0]).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(median(&[1.3]).unwrap(), 1.3);
        assert_eq!(median(&[1.0, 0.8, 0.9]).unwrap(), 0.9);
        assert_eq!(median(&[]), Err(RefCrError::EmptyList));
    }

    #[test]
    fn admission_creatinine_is_earliest_in_stay() {
        let enc = encounter(3);
        let labs = vec![lab(-30, 0.7), lab(1, 1.2), lab(5, 1.0)];
        assert_eq!(admission_creatinine(&enc, &labs).unwrap().value, 1.2);
        let labs = vec![lab(2, 0.9)];
        assert_eq!(admission_creatinine(&enc, &labs).unwrap().value, 0.9);
        let labs = vec![lab(-5, 0.9), lab(24 * 4, 1.0)];
        assert_eq!(admission_creatinine(&enc, &labs), Err(RefCrError::NoCreatinine));
    }

    #[test]
    fn combined_minimum_of_three_candidates() {
        let enc = encounter(5);
        let labs = vec![
            lab(-24 * 200, 0.8),
            lab(-24 * 100, 1.0),
            lab(-24 * 30, 0.9),
            lab(-24 * 5, 1.2),
            lab(-24 * 2, 1.0),
            lab(1, 1.1),
        ];
        let r = reference_creatinine(admit() + Duration::hours(1), &enc, &labs, None, &RefCrConfig::default())
            .unwrap();
        // recent min 1.0, history median 0.9, admission 1.1
        assert_eq!(r.value, 0.9);
        assert_eq!(r.provenance, Provenance::CombinedMin);
        assert_eq!(r.inputs_used.len(), 6);
    }

    #[test]
    fn admission_only_without_history() {
        let enc = encounter(5);
        let labs = vec![lab(1, 1.1)];
        let r = reference_creatinine(admit() + Duration::hours(1), &enc, &labs, None, &RefCrConfig::default())
            .unwrap();
        assert_eq!(r.value, 1.1);
        assert_eq!(r.provenance, Provenance::NoHistoryAdmissionOnly);
    }

    #[test]
    fn rolling_rule_after_first_week() {
        let enc = encounter(14);
        let labs = vec![lab(1, 1.0), lab(24 * 8, 0.8), lab(24 * 9 + 1, 1.3), lab(24 * 10, 1.4)];
        let prior = ReferenceCreatinine {
            value: 1.0,
            provenance: Provenance::CombinedMin,
            computed_at: admit(),
            inputs_used: vec![],
        };
        let cfg = RefCrConfig::default();
        let t = admit() + Duration::days(10);
        let r = reference_creatinine(t, &enc, &labs, Some(&prior), &cfg).unwrap();
        assert_eq!(r.value, 0.8);
        assert_eq!(r.provenance, Provenance::RollingPrior);

        let cfg = RefCrConfig {
            rolling_mode: RollingReferenceMode::PriorFirst,
            ..cfg
        };
        let r = reference_creatinine(t, &enc, &labs, Some(&prior), &cfg).unwrap();
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn window_seam_is_a_partition() {
        // a lab exactly seven days before admission belongs to the history window
        let enc = encounter(2);
        let labs = vec![lab(-168, 0.7), lab(-167, 0.9), lab(1, 1.0)];
        let c = FirstWeekCandidates::collect(&enc, &labs, &RefCrConfig::default()).unwrap();
        assert_eq!(c.history.len(), 1);
        assert_eq!(c.history[0].value, 0.7);
        assert_eq!(c.recent.len(), 1);
        // a lab older than a year is ignored
        let labs = vec![lab(-24 * 366, 0.5), lab(1, 1.0)];
        let c = FirstWeekCandidates::collect(&enc, &labs, &RefCrConfig::default()).unwrap();
        assert!(c.history.is_empty() && c.recent.is_empty());
    }

    #[test]
    fn first_trigger_late_in_stay_uses_first_week_rule() {
        let enc = encounter(20);
        let labs = vec![lab(-24 * 30, 0.8), lab(24 * 9, 1.5)];
        let t = admit() + Duration::days(9);
        let r = reference_creatinine(t, &enc, &labs, None, &RefCrConfig::default()).unwrap();
        assert_eq!(r.value, 0.8);
        assert_eq!(r.provenance, Provenance::CombinedMin);
    }
}
