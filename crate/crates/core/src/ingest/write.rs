use std::fs::File;
use std::path::Path;

use chrono::NaiveDateTime;

use super::model::*;
use super::parse::*;
use super::IngestError;

/// LOINC for serum/plasma creatinine, written on emitted lab rows.
pub const CREATININE_LOINC: &str = "2160-0";

pub fn format_datetime(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<File>, IngestError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| IngestError::Io {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn io(name: &str) -> impl Fn(csv::Error) -> IngestError + '_ {
    move |e| IngestError::Io {
        file: name.to_string(),
        message: e.to_string(),
    }
}

/// Write patients as the six cohort input files under `dir`, using the
/// standard file names. Lab values are written in mg/dL.
pub fn write_cohort(dir: impl AsRef<Path>, patients: &[PatientRecord]) -> Result<CohortPaths, IngestError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| IngestError::Io {
        file: dir.display().to_string(),
        message: e.to_string(),
    })?;

    let mut demo = writer(dir, DEMOGRAPHICS_FILE)?;
    let mut enc = writer(dir, ENCOUNTERS_FILE)?;
    let mut labs = writer(dir, LABS_FILE)?;
    let mut diag = writer(dir, DIAGNOSES_FILE)?;
    let mut proc = writer(dir, PROCEDURES_FILE)?;
    let mut flow = writer(dir, FLOWSHEET_FILE)?;

    demo.write_record(DEMOGRAPHICS_COLUMNS).map_err(io(DEMOGRAPHICS_FILE))?;
    enc.write_record(ENCOUNTER_COLUMNS).map_err(io(ENCOUNTERS_FILE))?;
    labs.write_record(LAB_COLUMNS).map_err(io(LABS_FILE))?;
    diag.write_record(DIAGNOSIS_COLUMNS).map_err(io(DIAGNOSES_FILE))?;
    proc.write_record(PROCEDURE_COLUMNS).map_err(io(PROCEDURES_FILE))?;
    flow.write_record(FLOWSHEET_COLUMNS).map_err(io(FLOWSHEET_FILE))?;

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in patients {
        let pid = p.patient_id.as_str();
        demo.write_record([
            pid,
            &p.birth_date.format("%Y-%m-%d").to_string(),
            p.sex.as_str(),
            &p.race,
            &p.ethnicity,
        ])
        .map_err(io(DEMOGRAPHICS_FILE))?;
        for e in &p.encounters {
            enc.write_record([
                pid,
                &e.encounter_id,
                &e.admit.map(format_datetime).unwrap_or_default(),
                &e.discharge.map(format_datetime).unwrap_or_default(),
                e.encounter_type.as_str(),
            ])
            .map_err(io(ENCOUNTERS_FILE))?;
        }
        for l in &p.labs {
            labs.write_record([
                pid,
                &l.value.to_string(),
                "mg/dL",
                &format_datetime(l.taken_at),
                CREATININE_LOINC,
            ])
            .map_err(io(LABS_FILE))?;
        }
        for d in &p.diagnoses {
            diag.write_record([
                pid,
                &d.date.format("%Y-%m-%d").to_string(),
                &d.code,
                d.system.as_str(),
            ])
            .map_err(io(DIAGNOSES_FILE))?;
        }
        for d in &p.procedures {
            proc.write_record([
                pid,
                &d.date.format("%Y-%m-%d").to_string(),
                d.system.as_str(),
                &d.code,
            ])
            .map_err(io(PROCEDURES_FILE))?;
        }
        for f in &p.flowsheet {
            let ts = format_datetime(f.recorded_at);
            flow.write_record([
                pid,
                &f.measure_name,
                &f.value,
                &ts,
                &opt(f.volumes.hemodialysis_intake),
                &opt(f.volumes.hemodialysis_output),
                &opt(f.volumes.peritoneal_dialysis_intake),
                &opt(f.volumes.peritoneal_dialysis_output),
                &ts,
            ])
            .map_err(io(FLOWSHEET_FILE))?;
        }
    }
    for (w, name) in [
        (&mut demo, DEMOGRAPHICS_FILE),
        (&mut enc, ENCOUNTERS_FILE),
        (&mut labs, LABS_FILE),
        (&mut diag, DIAGNOSES_FILE),
        (&mut proc, PROCEDURES_FILE),
        (&mut flow, FLOWSHEET_FILE),
    ] {
        w.flush().map_err(|e| IngestError::Io {
            file: name.to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(CohortPaths::in_dir(dir))
}
