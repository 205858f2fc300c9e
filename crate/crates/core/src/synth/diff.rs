use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{GroundTruthLabel, PlantedPhenotype};
use crate::engine::{EncounterPhenotype, ExclusionRecord};

/// Relative tolerance on `reference_egfr`; both sides evaluate the same
/// formula with a different multiplication order.
pub const EGFR_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub encounter_id: String,
    pub field: String,
    pub left: String,
    pub right: String,
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= EGFR_REL_TOL * x.abs().max(y.abs()),
        _ => false,
    }
}

/// Field-level differences between two phenotypes of the same encounter.
/// Everything must match exactly except `ckd.reference_egfr`.
pub fn diff_phenotypes(left: &EncounterPhenotype, right: &EncounterPhenotype) -> Vec<Mismatch> {
    let mut out = Vec::new();
    let id = left.encounter_id.clone();
    if !close(left.ckd.reference_egfr, right.ckd.reference_egfr) {
        out.push(Mismatch {
            encounter_id: id.clone(),
            field: "ckd.reference_egfr".into(),
            left: format!("{:?}", left.ckd.reference_egfr),
            right: format!("{:?}", right.ckd.reference_egfr),
        });
    }
    let mut l = left.clone();
    let mut r = right.clone();
    l.ckd.reference_egfr = None;
    r.ckd.reference_egfr = None;
    if l == r {
        return out;
    }
    let (Ok(serde_json::Value::Object(lv)), Ok(serde_json::Value::Object(rv))) = (serde_json::to_value(&l), serde_json::to_value(&r)) else {
        out.push(Mismatch {
            encounter_id: id,
            field: "*".into(),
            left: format!("{l:?}"),
            right: format!("{r:?}"),
        });
        return out;
    };
    for (k, a) in &lv {
        let b = rv.get(k).unwrap_or(&serde_json::Value::Null);
        if a != b {
            out.push(Mismatch {
                encounter_id: id.clone(),
                field: k.clone(),
                left: a.to_string(),
                right: b.to_string(),
            });
        }
    }
    if out.is_empty() {
        // values equal as JSON but not as f64 (e.g. NaN)
        out.push(Mismatch {
            encounter_id: id,
            field: "*".into(),
            left: format!("{l:?}"),
            right: format!("{r:?}"),
        });
    }
    out
}

/// Differences between two runs, matched by encounter id. Encounters
/// present on one side only are reported with field `presence`.
pub fn diff_runs(left: &[EncounterPhenotype], right: &[EncounterPhenotype]) -> Vec<Mismatch> {
    let rmap: HashMap<&str, &EncounterPhenotype> = right.iter().map(|p| (p.encounter_id.as_str(), p)).collect();
    let lmap: HashMap<&str, &EncounterPhenotype> = left.iter().map(|p| (p.encounter_id.as_str(), p)).collect();
    let mut out = Vec::new();
    for p in left {
        match rmap.get(p.encounter_id.as_str()) {
            Some(q) => out.extend(diff_phenotypes(p, q)),
            None => out.push(Mismatch {
                encounter_id: p.encounter_id.clone(),
                field: "presence".into(),
                left: "phenotyped".into(),
                right: "missing".into(),
            }),
        }
    }
    for q in right {
        if !lmap.contains_key(q.encounter_id.as_str()) {
            out.push(Mismatch {
                encounter_id: q.encounter_id.clone(),
                field: "presence".into(),
                left: "missing".into(),
                right: "phenotyped".into(),
            });
        }
    }
    out
}

/// Planted labels that a run does not reproduce: expected phenotypes,
/// in-stay AKI coding, and exclusions.
pub fn label_mismatches(labels: &[GroundTruthLabel], phenotypes: &[EncounterPhenotype], exclusions: &[ExclusionRecord]) -> Vec<Mismatch> {
    let by_id: HashMap<&str, &EncounterPhenotype> = phenotypes.iter().map(|p| (p.encounter_id.as_str(), p)).collect();
    let excluded: HashMap<&str, &ExclusionRecord> = exclusions.iter().map(|e| (e.encounter_id.as_str(), e)).collect();
    let mut out = Vec::new();
    let mut push = |id: &str, field: &str, left: String, right: String| {
        out.push(Mismatch {
            encounter_id: id.to_string(),
            field: field.to_string(),
            left,
            right,
        })
    };
    for l in labels {
        let id = l.encounter_id.as_str();
        if let Some(reason) = l.excluded {
            let got = excluded.get(id).map(|e| e.reason.as_str()).unwrap_or("not excluded");
            if got != reason.as_str() {
                push(id, "excluded", reason.as_str().to_string(), got.to_string());
            }
            continue;
        }
        let Some(p) = by_id.get(id) else {
            push(id, "presence", "phenotyped".into(), "missing".into());
            continue;
        };
        if let Some(expected) = &l.expected {
            let observed = PlantedPhenotype::observed(p);
            if &observed != expected {
                push(id, "phenotype", format!("{expected:?}"), format!("{observed:?}"));
            }
        }
        if p.coded_aki != l.coded_aki {
            push(id, "coded_aki", l.coded_aki.to_string(), p.coded_aki.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_tables::CodeTable;
    use crate::engine::{Engine, EngineConfig};
    use crate::synth::{fuzz_cohort, generate, oracle_cohort, CohortPlan};

    fn engine() -> Engine {
        Engine::new(CodeTable::builtin(), EngineConfig::default()).unwrap()
    }

    #[test]
    fn engine_matches_oracle_on_fuzz() {
        let e = engine();
        for seed in 0..3 {
            let cohort = fuzz_cohort(150, seed);
            let run = e.phenotype_cohort(&cohort, 0).unwrap();
            let oracle = oracle_cohort(&cohort, e.table(), e.config()).unwrap();
            let d = diff_runs(&run.phenotypes, &oracle.phenotypes);
            assert!(d.is_empty(), "seed {seed}: {:#?}", &d[..d.len().min(3)]);
            assert_eq!(run.exclusions, oracle.exclusions);
        }
    }

    #[test]
    fn oracle_reproduces_planted_labels() {
        let plan = CohortPlan {
            patients: 300,
            seed: 5,
            missing_code_rate: 0.1,
            wrong_code_rate: 0.1,
            ..CohortPlan::default()
        };
        let c = generate(&plan).unwrap();
        let e = engine();
        let oracle = oracle_cohort(&c.patients, e.table(), e.config()).unwrap();
        let m = label_mismatches(&c.labels, &oracle.phenotypes, &oracle.exclusions);
        assert!(m.is_empty(), "{:#?}", &m[..m.len().min(3)]);
    }

    #[test]
    fn diff_reports_fields() {
        let c = generate(&CohortPlan {
            patients: 20,
            ..CohortPlan::default()
        })
        .unwrap();
        let run = engine().phenotype_cohort(&c.patients, 1).unwrap();
        let a = &run.phenotypes[0];
        let mut b = a.clone();
        b.rrt_days += 1;
        let d = diff_phenotypes(a, &b);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].field, "rrt_days");
        assert!(diff_phenotypes(a, a).is_empty());
    }
}
