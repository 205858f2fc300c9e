//! Command-line workflows: phenotype a cohort, validate against chart
//! review, generate a synthetic cohort, draw the review sample, check a code
//! table.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code_tables::{load_code_tables, Category, CodeTable};
use crate::engine::{config_fingerprint, CohortRun, Engine, EngineConfig, EncounterPhenotype, ENGINE_VERSION, PHENOTYPE_CSV_COLUMNS};
use crate::ingest::{parse_cohort, CohortPaths, ParseOptions, ParsedCohort};
use crate::synth::{generate, CohortPlan};
use crate::validation::{
    confusion, diagnostic_metrics, read_gold_labels, render_metrics_table, stratified_review_sample, ConfusionMatrix, DiagnosticMetrics,
    ReviewCandidate, ValidationError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

pub const PHENOTYPES_JSONL: &str = "phenotypes.jsonl";
pub const PHENOTYPES_CSV: &str = "phenotypes.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const EXCLUSIONS_CSV: &str = "exclusions.csv";
pub const ERRORS_CSV: &str = "errors.csv";
pub const RUN_CONFIG_JSON: &str = "run_config.json";
pub const VALIDATION_JSON: &str = "validation.json";
pub const REVIEW_SAMPLE_CSV: &str = "review_sample.csv";
pub const REVIEW_SAMPLE_JSON: &str = "review_sample.json";

pub const ERRORS_COLUMNS: [&str; 6] = ["scope", "file", "line", "patient_id", "encounter_id", "reason"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error("code table: {0}")]
    CodeTable(#[from] crate::code_tables::CodeTableError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "kidney-phenotype", version, about = "CKD and AKI phenotyping of inpatient encounters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Phenotype every included encounter of a cohort.
    Phenotype(PhenotypeArgs),
    /// Compare phenotypes with chart-review labels.
    Validate(ValidateArgs),
    /// Generate a synthetic cohort with planted labels.
    Synth(SynthArgs),
    /// Draw the stratified chart-review sample.
    Sample(SampleArgs),
    /// Load a code table and summarize it.
    CodesCheck(CodesCheckArgs),
}

#[derive(Debug, Args)]
pub struct PhenotypeArgs {
    /// Directory holding the cohort files under their standard names.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub labs: Option<PathBuf>,
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long)]
    pub demographics: Option<PathBuf>,
    #[arg(long)]
    pub diagnoses: Option<PathBuf>,
    #[arg(long)]
    pub procedures: Option<PathBuf>,
    #[arg(long)]
    pub flowsheet: Option<PathBuf>,
    /// Code table CSV; the shipped table when omitted.
    #[arg(long)]
    pub code_tables: Option<PathBuf>,
    /// Run configuration JSON, e.g. a previous run's run_config.json.
    /// Flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Abort on the first malformed input row.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads; 0 uses every available core.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// phenotypes.jsonl from a phenotype run.
    #[arg(long)]
    pub phenotypes: Option<PathBuf>,
    /// Output directory of a phenotype run; also where validation.json goes.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV with encounter_deiden_id, gold_ckd, gold_aki.
    #[arg(long)]
    pub gold: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Cohort plan JSON; missing fields take their defaults.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patients: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub phenotypes: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Encounters per tail of each stratum.
    #[arg(long, default_value_t = 25)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct CodesCheckArgs {
    #[arg(long)]
    pub code_tables: Option<PathBuf>,
}

/// Fully resolved settings of a phenotype run. Written next to the outputs
/// with the fingerprint filled in, and accepted back through `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub inputs: Option<CohortPaths>,
    /// `None` selects the shipped table.
    pub code_tables: Option<PathBuf>,
    pub engine: EngineConfig,
    pub parse: ParseOptions,
    pub parallelism: usize,
    pub out: PathBuf,
    pub engine_version: String,
    pub fingerprint: String,
}

impl RunConfig {
    /// Merge command-line flags over an optional config file.
    pub fn resolve(args: &PhenotypeArgs) -> Result<RunConfig, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                serde_json::from_str::<RunConfig>(&text).map_err(|e| CliError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => RunConfig::default(),
        };
        let mut inputs = match (&args.cohort, cfg.inputs.take()) {
            (Some(dir), _) => Some(CohortPaths::in_dir(dir)),
            (None, from_file) => from_file,
        };
        if let (Some(labs), Some(encounters), Some(demographics)) = (&args.labs, &args.encounters, &args.demographics) {
            if inputs.is_none() {
                inputs = Some(CohortPaths {
                    demographics: demographics.clone(),
                    encounters: encounters.clone(),
                    labs: labs.clone(),
                    diagnoses: None,
                    procedures: None,
                    flowsheet: None,
                });
            }
        }
        let Some(mut inputs) = inputs else {
            return Err(CliError::Usage(
                "no cohort given: pass --cohort DIR, or --labs, --encounters and --demographics".into(),
            ));
        };
        let set = |slot: &mut PathBuf, v: &Option<PathBuf>| {
            if let Some(p) = v {
                *slot = p.clone();
            }
        };
        set(&mut inputs.labs, &args.labs);
        set(&mut inputs.encounters, &args.encounters);
        set(&mut inputs.demographics, &args.demographics);
        for (slot, v) in [
            (&mut inputs.diagnoses, &args.diagnoses),
            (&mut inputs.procedures, &args.procedures),
            (&mut inputs.flowsheet, &args.flowsheet),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        cfg.inputs = Some(inputs);
        if args.code_tables.is_some() {
            cfg.code_tables.clone_from(&args.code_tables);
        }
        if args.strict {
            cfg.parse.strict = true;
        }
        if let Some(n) = args.parallelism {
            cfg.parallelism = n;
        }
        if cfg.parallelism == 0 {
            cfg.parallelism = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        }
        match &args.out {
            Some(out) => cfg.out = out.clone(),
            None if cfg.out.as_os_str().is_empty() => cfg.out = PathBuf::from("phenotype-out"),
            None => {}
        }
        Ok(cfg)
    }
}

/// Parse `args` (program name first) and run the subcommand. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Phenotype(a) => cmd_phenotype(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
        Command::CodesCheck(a) => cmd_codes_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}

fn load_table(path: &Option<PathBuf>) -> Result<CodeTable, CliError> {
    Ok(match path {
        Some(p) => load_code_tables(p)?,
        None => CodeTable::builtin(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Parse, phenotype and write every output of a run. Returns the exit code:
/// partial when rows were skipped or encounters quarantined.
pub fn cmd_phenotype(args: &PhenotypeArgs) -> Result<i32, CliError> {
    let mut cfg = RunConfig::resolve(args)?;
    let table = load_table(&cfg.code_tables)?;
    let fingerprint = config_fingerprint(&cfg.engine, &table);
    if !cfg.fingerprint.is_empty() && cfg.fingerprint != fingerprint {
        eprintln!("warning: configuration fingerprint changed from {} to {fingerprint}", cfg.fingerprint);
    }
    let engine = Engine::new(table, cfg.engine.clone())?;
    cfg.engine_version = ENGINE_VERSION.to_string();
    cfg.fingerprint = fingerprint;

    let inputs = cfg.inputs.clone().unwrap_or_else(|| CohortPaths::in_dir("."));
    let parsed = parse_cohort(&inputs, &cfg.parse)?;
    for issue in &parsed.issues {
        eprintln!("warning: {}:{}: {}", issue.file, issue.line, issue.message);
    }
    let run = engine.phenotype_cohort(&parsed.patients, cfg.parallelism)?;
    for q in &run.errors {
        eprintln!("warning: encounter {} quarantined: {}", q.encounter_id, q.reason);
    }
    write_run(&cfg, &parsed, &run)?;

    println!(
        "{} encounters screened, {} excluded, {} phenotyped, {} errors -> {}",
        run.tally.total,
        run.tally.excluded_total(),
        run.phenotypes.len(),
        parsed.issues.len() + run.errors.len(),
        cfg.out.display()
    );
    Ok(if parsed.issues.is_empty() && run.errors.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

/// Write the outputs of a run under `cfg.out`.
pub fn write_run(cfg: &RunConfig, parsed: &ParsedCohort, run: &CohortRun) -> Result<(), CliError> {
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let path = out.join(PHENOTYPES_JSONL);
    let mut w = create(&path)?;
    for p in &run.phenotypes {
        let line = serde_json::to_string(p).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = out.join(PHENOTYPES_CSV);
    let mut w = csv_writer(&path)?;
    w.write_record(PHENOTYPE_CSV_COLUMNS).map_err(csv_io(&path))?;
    for p in &run.phenotypes {
        w.write_record(p.csv_row()).map_err(csv_io(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = out.join(EXCLUSIONS_CSV);
    let mut w = csv_writer(&path)?;
    w.write_record(["patient_id", "encounter_id", "reason"]).map_err(csv_io(&path))?;
    for e in &run.exclusions {
        w.write_record([e.patient_id.as_str(), e.encounter_id.as_str(), e.reason.as_str()])
            .map_err(csv_io(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = out.join(ERRORS_CSV);
    let mut w = csv_writer(&path)?;
    w.write_record(ERRORS_COLUMNS).map_err(csv_io(&path))?;
    for i in &parsed.issues {
        let kind = serde_json::to_value(i.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let line = i.line.to_string();
        w.write_record([
            kind.as_str(),
            i.file.as_str(),
            line.as_str(),
            i.patient_id.as_deref().unwrap_or(""),
            i.encounter_id.as_deref().unwrap_or(""),
            i.message.as_str(),
        ])
        .map_err(csv_io(&path))?;
    }
    for q in &run.errors {
        w.write_record(["PHENOTYPE", "", "", q.patient_id.as_str(), q.encounter_id.as_str(), q.reason.as_str()])
            .map_err(csv_io(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = out.join(REPORT_TXT);
    fs::write(&path, run.report.render_text()).map_err(io_err(&path))?;
    write_json(&out.join(REPORT_JSON), &run.report)?;
    write_json(&out.join(RUN_CONFIG_JSON), cfg)
}

/// Read a phenotypes.jsonl file.
pub fn read_phenotypes(path: &Path) -> Result<Vec<EncounterPhenotype>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Io {
            path: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn phenotypes_path(phenotypes: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    match (phenotypes, out) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => Ok(dir.join(PHENOTYPES_JSONL)),
        (None, None) => Err(CliError::Usage("pass --phenotypes FILE or --out DIR".into())),
    }
}

fn out_dir(out: &Option<PathBuf>, phenotypes: &Path) -> PathBuf {
    out.clone()
        .unwrap_or_else(|| phenotypes.parent().map(Path::to_path_buf).unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub confusion: ConfusionMatrix,
    /// `None` when some denominator is zero.
    pub metrics: Option<DiagnosticMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub encounters: usize,
    pub ckd: MetricsTable,
    pub aki: MetricsTable,
    /// AKI read off in-stay diagnosis codes alone.
    pub aki_code_only: MetricsTable,
}

/// Confusion matrices for CKD, AKI and the code-only AKI baseline. Only
/// encounters with a gold label are scored; every gold id must have been
/// phenotyped.
pub fn validation_summary(phenotypes: &[EncounterPhenotype], gold: &crate::validation::GoldLabels) -> Result<ValidationSummary, ValidationError> {
    let pick = |f: &dyn Fn(&EncounterPhenotype) -> bool| -> BTreeMap<String, bool> {
        phenotypes
            .iter()
            .filter(|p| gold.ckd.contains_key(&p.encounter_id))
            .map(|p| (p.encounter_id.clone(), f(p)))
            .collect()
    };
    let table = |pred: BTreeMap<String, bool>, truth: &BTreeMap<String, bool>| -> Result<MetricsTable, ValidationError> {
        let cm = confusion(&pred, truth)?;
        Ok(MetricsTable {
            confusion: cm,
            metrics: diagnostic_metrics(&cm).ok(),
        })
    };
    Ok(ValidationSummary {
        encounters: gold.ckd.len(),
        ckd: table(pick(&|p| p.ckd.category.is_ckd()), &gold.ckd)?,
        aki: table(pick(&|p| p.aki_detected), &gold.aki)?,
        aki_code_only: table(pick(&|p| p.coded_aki), &gold.aki)?,
    })
}

fn render_table(title: &str, t: &MetricsTable) -> String {
    match &t.metrics {
        Some(m) => render_metrics_table(title, &t.confusion, m),
        None => {
            let cm = &t.confusion;
            format!(
                "{title}\nTP {} FP {} FN {} TN {}\nmetrics undefined: a denominator is zero\n",
                cm.tp, cm.fp, cm.fn_, cm.tn
            )
        }
    }
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32, CliError> {
    let path = phenotypes_path(&args.phenotypes, &args.out)?;
    let phenotypes = read_phenotypes(&path)?;
    let gold_file = File::open(&args.gold).map_err(io_err(&args.gold))?;
    let gold = read_gold_labels(gold_file)?;
    let summary = validation_summary(&phenotypes, &gold)?;

    println!("{}", render_table("CKD phenotype vs chart review", &summary.ckd));
    println!("{}", render_table("AKI phenotype vs chart review", &summary.aki));
    println!("{}", render_table("AKI diagnosis codes only vs chart review", &summary.aki_code_only));

    let dir = out_dir(&args.out, &path);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_json(&dir.join(VALIDATION_JSON), &summary)?;
    Ok(EXIT_OK)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32, CliError> {
    let mut plan = match &args.plan {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<CohortPlan>(&text).map_err(|e| CliError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => CohortPlan::default(),
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    if let Some(n) = args.patients {
        plan.patients = n;
    }
    let cohort = generate(&plan)?;
    cohort.write(&args.out)?;
    write_json(&args.out.join("plan.json"), &plan)?;
    let aki = cohort.labels.iter().filter(|l| l.truth.as_ref().is_some_and(|t| t.aki)).count();
    println!(
        "{} patients, {} encounters ({} with planted AKI) -> {}",
        cohort.patients.len(),
        cohort.encounter_count(),
        aki,
        args.out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_sample(args: &SampleArgs) -> Result<i32, CliError> {
    if args.k == 0 {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    let path = phenotypes_path(&args.phenotypes, &args.out)?;
    let phenotypes = read_phenotypes(&path)?;
    let candidates: Vec<ReviewCandidate> = phenotypes.iter().filter_map(ReviewCandidate::from_phenotype).collect();
    let sample = stratified_review_sample(&candidates, args.k);

    let dir = out_dir(&args.out, &path);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let csv_path = dir.join(REVIEW_SAMPLE_CSV);
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["encounter_id", "stratum", "tail", "reference_creatinine"])
        .map_err(csv_io(&csv_path))?;
    for p in &sample.picks {
        let tail = serde_json::to_value(p.tail).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        w.write_record([p.encounter_id.clone(), p.stratum.label(), tail, p.reference_creatinine.to_string()])
            .map_err(csv_io(&csv_path))?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    write_json(&dir.join(REVIEW_SAMPLE_JSON), &sample)?;

    for s in &sample.strata {
        println!(
            "{}\t{} of {}{}",
            s.stratum.label(),
            s.selected,
            s.members,
            if s.short { " (short)" } else { "" }
        );
    }
    println!("{} encounters sampled -> {}", sample.picks.len(), csv_path.display());
    Ok(EXIT_OK)
}

pub fn cmd_codes_check(args: &CodesCheckArgs) -> Result<i32, CliError> {
    let table = load_table(&args.code_tables)?;
    let mut by_category: BTreeMap<Category, usize> = BTreeMap::new();
    let mut nonspecific = 0;
    for e in table.entries() {
        *by_category.entry(e.category).or_default() += 1;
        nonspecific += usize::from(e.nonspecific);
    }
    for (c, n) in &by_category {
        println!("{c}\t{n}");
    }
    println!("{} entries ({nonspecific} nonspecific), 0 errors", table.len());
    Ok(EXIT_OK)
}
