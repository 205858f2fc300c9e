use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::model::*;
use super::IngestError;
use crate::code_tables::CodeSystem;

pub const DEMOGRAPHICS_COLUMNS: [&str; 5] =
    ["patient_deiden_id", "birth_date", "sex", "race", "ethnicity"];
pub const ENCOUNTER_COLUMNS: [&str; 5] = [
    "patient_deiden_id",
    "encounter_deiden_id",
    "admit_datetime",
    "dischg_datetime",
    "patient_type",
];
pub const LAB_COLUMNS: [&str; 5] = [
    "patient_deiden_id",
    "lab_result",
    "lab_unit",
    "inferred_specimen_datetime",
    "stamped_and_inferred_loinc_code",
];
pub const DIAGNOSIS_COLUMNS: [&str; 4] =
    ["patient_deiden_id", "start_date", "diag_code", "diag_icd_type"];
pub const PROCEDURE_COLUMNS: [&str; 4] =
    ["patient_deiden_id", "proc_date", "proc_code_type", "proc_code"];
pub const FLOWSHEET_COLUMNS: [&str; 9] = [
    "patient_deiden_id",
    "vital_sign_measure_name",
    "meas_value",
    "recorded_time",
    "hemodialysis_intake",
    "hemodialysis_output",
    "peritoneal_dialysis_intake",
    "peritoneal_dialysis_output",
    "observation_datetime",
];

/// Standard file names used when a cohort lives in one directory.
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";
pub const ENCOUNTERS_FILE: &str = "encounters.csv";
pub const LABS_FILE: &str = "labs.csv";
pub const DIAGNOSES_FILE: &str = "diagnoses.csv";
pub const PROCEDURES_FILE: &str = "procedures.csv";
pub const FLOWSHEET_FILE: &str = "flowsheet.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortPaths {
    pub demographics: PathBuf,
    pub encounters: PathBuf,
    pub labs: PathBuf,
    pub diagnoses: Option<PathBuf>,
    pub procedures: Option<PathBuf>,
    pub flowsheet: Option<PathBuf>,
}

impl CohortPaths {
    /// Paths for a directory laid out with the standard file names. Optional
    /// files are only included when they exist.
    pub fn in_dir(dir: impl AsRef<Path>) -> CohortPaths {
        let dir = dir.as_ref();
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        CohortPaths {
            demographics: dir.join(DEMOGRAPHICS_FILE),
            encounters: dir.join(ENCOUNTERS_FILE),
            labs: dir.join(LABS_FILE),
            diagnoses: optional(DIAGNOSES_FILE),
            procedures: optional(PROCEDURES_FILE),
            flowsheet: optional(FLOWSHEET_FILE),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Abort on the first malformed row instead of skipping it.
    pub strict: bool,
    /// LOINC codes that identify serum creatinine. `None` treats every lab
    /// row as creatinine.
    pub creatinine_loinc_codes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueKind {
    Timestamp,
    Row,
    MissingDemographics,
}

/// A skipped row or quarantined patient found while parsing in lenient mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub file: String,
    pub line: u64,
    pub patient_id: Option<String>,
    pub encounter_id: Option<String>,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCohort {
    /// One record per patient, sorted by patient id.
    pub patients: Vec<PatientRecord>,
    pub issues: Vec<RowIssue>,
}

const DATETIME_FORMATS: [&str; 6] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S%.fZ",
    "%Y-%m-%d %H:%M:%S%.fZ",
];

/// ISO-8601 date and time, without zone offset.
pub fn parse_datetime(raw: &str) -> Result<NaiveDateTime, String> {
    let s = raw.trim();
    DATETIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| format!("unparseable datetime {raw:?}"))
}

/// ISO-8601 date. A full datetime is accepted and truncated to its date.
pub fn parse_date(raw: &str) -> Result<NaiveDate, String> {
    let s = raw.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| parse_datetime(s).map(|dt| dt.date()))
        .map_err(|_| format!("unparseable date {raw:?}"))
}

/// Convert a creatinine result to mg/dL.
pub fn to_mg_dl(value: f64, unit: &str) -> Result<f64, String> {
    let u = unit.trim().to_ascii_lowercase();
    match u.as_str() {
        "mg/dl" => Ok(value),
        "µmol/l" | "μmol/l" | "umol/l" | "micromol/l" => Ok(value / UMOL_PER_MG_DL),
        _ => Err(format!("unsupported creatinine unit {unit:?}")),
    }
}

pub fn diagnosis_system(raw: &str) -> Result<CodeSystem, String> {
    if let Ok(sys) = raw.parse::<CodeSystem>() {
        return Ok(sys);
    }
    let s = raw.trim().to_ascii_uppercase().replace(['-', ' ', '_'], "");
    match s.as_str() {
        "9" | "ICD9" | "ICD9CM" | "ICD9DX" => Ok(CodeSystem::Icd9Diag),
        "10" | "ICD10" | "ICD10CM" | "ICD10DX" => Ok(CodeSystem::Icd10Diag),
        _ => Err(format!("unknown diagnosis code type {raw:?}")),
    }
}

pub fn procedure_system(raw: &str) -> Result<CodeSystem, String> {
    if let Ok(sys) = raw.parse::<CodeSystem>() {
        return Ok(sys);
    }
    let s = raw.trim().to_ascii_uppercase().replace(['-', ' ', '_'], "");
    match s.as_str() {
        "9" | "ICD9" | "ICD9CM" | "ICD9PROC" | "ICD9PCS" => Ok(CodeSystem::Icd9Proc),
        "10" | "ICD10" | "ICD10PCS" | "ICD10PROC" => Ok(CodeSystem::Icd10Pcs),
        "CPT" | "CPT4" | "HCPCS" => Ok(CodeSystem::Cpt),
        _ => Err(format!("unknown procedure code type {raw:?}")),
    }
}

struct Table {
    name: String,
    reader: csv::Reader<File>,
    columns: HashMap<String, usize>,
}

impl Table {
    fn open(path: &Path, required: &[&str]) -> Result<Table, IngestError> {
        let name = path.display().to_string();
        let file = File::open(path).map_err(|e| IngestError::Io {
            file: name.clone(),
            message: e.to_string(),
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(file);
        let headers = reader.headers().map_err(|e| IngestError::Io {
            file: name.clone(),
            message: e.to_string(),
        })?;
        let columns: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim_start_matches('\u{feff}').to_string(), i))
            .collect();
        for col in required {
            if !columns.contains_key(*col) {
                return Err(IngestError::Schema {
                    file: name,
                    column: col.to_string(),
                });
            }
        }
        Ok(Table {
            name,
            reader,
            columns,
        })
    }

    fn rows(&mut self) -> impl Iterator<Item = Result<Row<'_>, IngestError>> + '_ {
        let name = self.name.clone();
        let columns = &self.columns;
        self.reader.records().map(move |r| match r {
            Ok(record) => Ok(Row {
                line: record.position().map_or(0, |p| p.line()),
                record,
                columns,
            }),
            Err(e) => Err(IngestError::Row {
                file: name.clone(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            }),
        })
    }
}

struct Row<'a> {
    line: u64,
    record: csv::StringRecord,
    columns: &'a HashMap<String, usize>,
}

impl Row<'_> {
    fn get(&self, col: &str) -> &str {
        self.columns
            .get(col)
            .and_then(|i| self.record.get(*i))
            .unwrap_or("")
    }

    fn opt_f64(&self, col: &str) -> Result<Option<f64>, String> {
        let raw = self.get(col);
        if raw.is_empty() {
            Ok(None)
        } else {
            raw.parse::<f64>()
                .map(Some)
                .map_err(|_| format!("{col}: not a number {raw:?}"))
        }
    }
}

enum RowError {
    Timestamp(String),
    Other(String),
}

struct Collector<'o> {
    opts: &'o ParseOptions,
    issues: Vec<RowIssue>,
}

impl Collector<'_> {
    fn report(
        &mut self,
        file: &str,
        line: u64,
        patient_id: Option<&str>,
        encounter_id: Option<&str>,
        err: RowError,
    ) -> Result<(), IngestError> {
        let (kind, message) = match err {
            RowError::Timestamp(m) => (IssueKind::Timestamp, m),
            RowError::Other(m) => (IssueKind::Row, m),
        };
        if self.opts.strict {
            return Err(match kind {
                IssueKind::Timestamp => IngestError::Timestamp {
                    file: file.to_string(),
                    line,
                    message,
                },
                _ => IngestError::Row {
                    file: file.to_string(),
                    line,
                    message,
                },
            });
        }
        self.issues.push(RowIssue {
            file: file.to_string(),
            line,
            patient_id: patient_id.map(str::to_string),
            encounter_id: encounter_id.map(str::to_string),
            kind,
            message,
        });
        Ok(())
    }
}

#[derive(Default)]
struct Events {
    encounters: Vec<(u64, Encounter)>,
    labs: Vec<CreatinineMeasurement>,
    diagnoses: Vec<CodeEvent>,
    procedures: Vec<CodeEvent>,
    flowsheet: Vec<FlowsheetEntry>,
}

/// Read every cohort file and assemble one [`PatientRecord`] per patient.
pub fn parse_cohort(paths: &CohortPaths, opts: &ParseOptions) -> Result<ParsedCohort, IngestError> {
    let mut out = Collector {
        opts,
        issues: Vec::new(),
    };
    let mut demographics: BTreeMap<String, (u64, NaiveDate, Sex, String, String)> = BTreeMap::new();
    let mut events: BTreeMap<String, Events> = BTreeMap::new();
    let loinc: Option<HashSet<String>> = opts
        .creatinine_loinc_codes
        .as_ref()
        .map(|codes| codes.iter().map(|c| c.trim().to_string()).collect());

    {
        let mut t = Table::open(&paths.demographics, &DEMOGRAPHICS_COLUMNS)?;
        let file = t.name.clone();
        for row in t.rows() {
            let row = row?;
            let pid = row.get("patient_deiden_id").to_string();
            let res = (|| {
                if pid.is_empty() {
                    return Err(RowError::Other("empty patient_deiden_id".into()));
                }
                if demographics.contains_key(&pid) {
                    return Err(RowError::Other(format!("duplicate demographics for {pid}")));
                }
                let birth = parse_date(row.get("birth_date")).map_err(RowError::Timestamp)?;
                Ok((
                    row.line,
                    birth,
                    Sex::parse(row.get("sex")),
                    row.get("race").to_string(),
                    row.get("ethnicity").to_string(),
                ))
            })();
            match res {
                Ok(d) => {
                    demographics.insert(pid, d);
                }
                Err(e) => out.report(&file, row.line, Some(&pid), None, e)?,
            }
        }
    }

    {
        let mut t = Table::open(&paths.encounters, &ENCOUNTER_COLUMNS)?;
        let file = t.name.clone();
        for row in t.rows() {
            let row = row?;
            let pid = row.get("patient_deiden_id").to_string();
            let eid = row.get("encounter_deiden_id").to_string();
            let res = (|| {
                if pid.is_empty() || eid.is_empty() {
                    return Err(RowError::Other("empty patient or encounter id".into()));
                }
                let opt_ts = |col: &str| -> Result<Option<NaiveDateTime>, RowError> {
                    let raw = row.get(col);
                    if raw.is_empty() {
                        Ok(None)
                    } else {
                        parse_datetime(raw).map(Some).map_err(RowError::Timestamp)
                    }
                };
                let admit = opt_ts("admit_datetime")?;
                let discharge = opt_ts("dischg_datetime")?;
                if let (Some(a), Some(d)) = (admit, discharge) {
                    if a >= d {
                        return Err(RowError::Timestamp(format!(
                            "discharge {d} is not after admission {a}"
                        )));
                    }
                }
                Ok(Encounter {
                    encounter_id: eid.clone(),
                    admit,
                    discharge,
                    encounter_type: EncounterType::parse(row.get("patient_type")),
                })
            })();
            match res {
                Ok(enc) => events.entry(pid).or_default().encounters.push((row.line, enc)),
                Err(e) => out.report(&file, row.line, Some(&pid), Some(&eid), e)?,
            }
        }
    }

    {
        let mut t = Table::open(&paths.labs, &LAB_COLUMNS)?;
        let file = t.name.clone();
        for row in t.rows() {
            let row = row?;
            let pid = row.get("patient_deiden_id").to_string();
            if let Some(allow) = &loinc {
                if !allow.contains(row.get("stamped_and_inferred_loinc_code")) {
                    continue;
                }
            }
            let res = (|| {
                if pid.is_empty() {
                    return Err(RowError::Other("empty patient_deiden_id".into()));
                }
                let taken_at = parse_datetime(row.get("inferred_specimen_datetime"))
                    .map_err(RowError::Timestamp)?;
                let raw = row.get("lab_result");
                let raw_value: f64 = raw
                    .parse()
                    .map_err(|_| RowError::Other(format!("lab_result: not a number {raw:?}")))?;
                let unit = row.get("lab_unit");
                let value = to_mg_dl(raw_value, unit).map_err(RowError::Other)?;
                if !(value > 0.0 && value < MAX_PLAUSIBLE_SCR) {
                    return Err(RowError::Other(format!(
                        "implausible creatinine {value} mg/dL"
                    )));
                }
                Ok(CreatinineMeasurement {
                    value,
                    taken_at,
                    source_unit: unit.to_string(),
                })
            })();
            match res {
                Ok(lab) => events.entry(pid).or_default().labs.push(lab),
                Err(e) => out.report(&file, row.line, Some(&pid), None, e)?,
            }
        }
    }

    if let Some(path) = &paths.diagnoses {
        let mut t = Table::open(path, &DIAGNOSIS_COLUMNS)?;
        let file = t.name.clone();
        for row in t.rows() {
            let row = row?;
            let pid = row.get("patient_deiden_id").to_string();
            let res = (|| {
                let date = parse_date(row.get("start_date")).map_err(RowError::Timestamp)?;
                let system = diagnosis_system(row.get("diag_icd_type")).map_err(RowError::Other)?;
                code_event(&pid, date, row.get("diag_code"), system)
            })();
            match res {
                Ok(ev) => events.entry(pid).or_default().diagnoses.push(ev),
                Err(e) => out.report(&file, row.line, Some(&pid), None, e)?,
            }
        }
    }

    if let Some(path) = &paths.procedures {
        let mut t = Table::open(path, &PROCEDURE_COLUMNS)?;
        let file = t.name.clone();
        for row in t.rows() {
            let row = row?;
            let pid = row.get("patient_deiden_id").to_string();
            let res = (|| {
                let date = parse_date(row.get("proc_date")).map_err(RowError::Timestamp)?;
                let system = procedure_system(row.get("proc_code_type")).map_err(RowError::Other)?;
                code_event(&pid, date, row.get("proc_code"), system)
            })();
            match res {
                Ok(ev) => events.entry(pid).or_default().procedures.push(ev),
                Err(e) => out.report(&file, row.line, Some(&pid), None, e)?,
            }
        }
    }

    if let Some(path) = &paths.flowsheet {
        let mut t = Table::open(path, &FLOWSHEET_COLUMNS)?;
        let file = t.name.clone();
        for row in t.rows() {
            let row = row?;
            let pid = row.get("patient_deiden_id").to_string();
            let res = (|| {
                if pid.is_empty() {
                    return Err(RowError::Other("empty patient_deiden_id".into()));
                }
                let when = match (row.get("recorded_time"), row.get("observation_datetime")) {
                    ("", "") => {
                        return Err(RowError::Timestamp(
                            "recorded_time and observation_datetime both empty".into(),
                        ))
                    }
                    ("", obs) => obs,
                    (rec, _) => rec,
                };
                let recorded_at = parse_datetime(when).map_err(RowError::Timestamp)?;
                let volumes = DialysisVolumes {
                    hemodialysis_intake: row.opt_f64("hemodialysis_intake").map_err(RowError::Other)?,
                    hemodialysis_output: row.opt_f64("hemodialysis_output").map_err(RowError::Other)?,
                    peritoneal_dialysis_intake: row
                        .opt_f64("peritoneal_dialysis_intake")
                        .map_err(RowError::Other)?,
                    peritoneal_dialysis_output: row
                        .opt_f64("peritoneal_dialysis_output")
                        .map_err(RowError::Other)?,
                };
                let measure_name = row.get("vital_sign_measure_name").to_string();
                let value = row.get("meas_value").to_string();
                if measure_name.is_empty() && value.is_empty() && volumes.iter().next().is_none() {
                    return Err(RowError::Other("flowsheet row carries no measurement".into()));
                }
                Ok(FlowsheetEntry {
                    measure_name,
                    value,
                    recorded_at,
                    volumes,
                })
            })();
            match res {
                Ok(entry) => events.entry(pid).or_default().flowsheet.push(entry),
                Err(e) => out.report(&file, row.line, Some(&pid), None, e)?,
            }
        }
    }

    let encounters_file = paths.encounters.display().to_string();
    let mut patients = Vec::with_capacity(demographics.len());
    for (pid, ev) in events.iter() {
        if !demographics.contains_key(pid) {
            let message = format!("no demographics row for patient {pid}");
            if opts.strict {
                return Err(IngestError::MissingDemographics {
                    patient_id: pid.clone(),
                });
            }
            for (line, enc) in &ev.encounters {
                out.issues.push(RowIssue {
                    file: encounters_file.clone(),
                    line: *line,
                    patient_id: Some(pid.clone()),
                    encounter_id: Some(enc.encounter_id.clone()),
                    kind: IssueKind::MissingDemographics,
                    message: message.clone(),
                });
            }
        }
    }
    for (pid, (_, birth_date, sex, race, ethnicity)) in demographics {
        let ev = events.remove(&pid).unwrap_or_default();
        let mut p = PatientRecord::new(&pid, birth_date, sex, &race);
        p.ethnicity = ethnicity;
        p.encounters = ev.encounters.into_iter().map(|(_, e)| e).collect();
        p.labs = ev.labs;
        p.diagnoses = ev.diagnoses;
        p.procedures = ev.procedures;
        p.flowsheet = ev.flowsheet;
        p.normalize_order();
        patients.push(p);
    }
    Ok(ParsedCohort {
        patients,
        issues: out.issues,
    })
}

fn code_event(pid: &str, date: NaiveDate, code: &str, system: CodeSystem) -> Result<CodeEvent, RowError> {
    if pid.is_empty() {
        return Err(RowError::Other("empty patient_deiden_id".into()));
    }
    if code.is_empty() {
        return Err(RowError::Other("empty code".into()));
    }
    Ok(CodeEvent::new(date, code, system))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn umol_conversion() {
        let v = to_mg_dl(88.42, "µmol/L").unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(to_mg_dl(1.3, "MG/DL").unwrap(), 1.3);
        assert!(to_mg_dl(1.0, "mmol/L").is_err());
        assert!(to_mg_dl(1.0, "").is_err());
    }

    #[test]
    fn datetime_formats() {
        assert!(parse_datetime("2016-01-02T03:04:05").is_ok());
        assert!(parse_datetime("2016-01-02 03:04").is_ok());
        assert!(parse_datetime("2016-01-02").is_err());
        assert!(parse_datetime("").is_err());
        assert_eq!(
            parse_date("2016-01-02T10:00:00").unwrap(),
            NaiveDate::from_ymd_opt(2016, 1, 2).unwrap()
        );
    }

    #[test]
    fn code_type_aliases() {
        assert_eq!(diagnosis_system("ICD-9-CM").unwrap(), CodeSystem::Icd9Diag);
        assert_eq!(diagnosis_system("icd10").unwrap(), CodeSystem::Icd10Diag);
        assert_eq!(procedure_system("ICD9").unwrap(), CodeSystem::Icd9Proc);
        assert_eq!(procedure_system("ICD-10-PCS").unwrap(), CodeSystem::Icd10Pcs);
        assert_eq!(procedure_system("CPT").unwrap(), CodeSystem::Cpt);
        assert!(diagnosis_system("SNOMED").is_err());
    }
}
