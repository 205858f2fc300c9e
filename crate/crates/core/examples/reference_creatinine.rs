//! Reference creatinine for a stay: first-week rule, then the rolling rule
//! for triggers a week or more after admission.
//!
//! ```text
//! cargo run --example reference_creatinine
//! ```

use chrono::{Duration, NaiveDate, NaiveDateTime};
use kidney_phenotype::ingest::{Admission, CreatinineMeasurement, EncounterType};
use kidney_phenotype::refcr::{reference_creatinine, RefCrConfig, ReferenceCreatinine};

fn t(day: i64, hour: i64) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2017, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap() + Duration::days(day) + Duration::hours(hour)
}

fn main() {
    let stay = Admission {
        encounter_id: "E1".into(),
        admit: t(0, 8),
        discharge: t(12, 17),
        encounter_type: EncounterType::Inpatient,
    };
    let labs: Vec<CreatinineMeasurement> = [
        (-200, 9, 1.1),
        (-90, 9, 1.0),
        (-3, 10, 1.3),
        (0, 10, 1.4),
        (2, 6, 2.1),
        (5, 6, 1.2),
        (8, 6, 1.0),
        (10, 6, 1.9),
        (12, 6, 1.1),
    ]
    .into_iter()
    .map(|(d, h, v)| CreatinineMeasurement::mg_dl(v, t(d, h)))
    .collect();

    let cfg = RefCrConfig::default();
    let mut prior: Option<ReferenceCreatinine> = None;
    for (i, lab) in labs.iter().enumerate().filter(|(_, l)| stay.contains(l.taken_at)) {
        let r = reference_creatinine(lab.taken_at, &stay, &labs[..=i], prior.as_ref(), &cfg).expect("labs present");
        println!(
            "{}  scr {:.2}  reference {:.2}  {:?} ({} inputs)",
            lab.taken_at,
            lab.value,
            r.value,
            r.provenance,
            r.inputs_used.len()
        );
        prior = Some(r);
    }
}
