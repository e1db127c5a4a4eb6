//! Subcommands behind the `wowbench` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ingest::{self, InputError, ReportFormat, RunManifest};
use crate::output::{self, ModelLine, Provenance, RunMetadata, RunSummary, ScoredRecord};
use crate::pipeline::{self, Inputs, LoadedRegistry, PipelineError, RawValue, SampleKey};
use crate::registry::FrozenParameters;

#[derive(Debug, Parser)]
#[command(
    name = "wowbench",
    version,
    about = "Deterministic world-model benchmark scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every input of a manifest and write the leaderboard.
    Score(CommonArgs),
    /// Select mapping parameters from human ratings and write frozen.json.
    Calibrate(CommonArgs),
    /// Trajectory distances only.
    Traj(CommonArgs),
    /// Plan scores only.
    Plan(CommonArgs),
    /// Regional consistency and PSNR/SSIM only.
    Consistency(CommonArgs),
    /// Render tables and plot series from a score output directory.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Registry TOML; overrides the manifest entry.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Run manifest (TOML), or the score output directory for `report`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
}

pub const FROZEN_FILE: &str = "frozen.json";

/// Result of a command: warnings to surface, exit status 0.
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
}

struct Prepared {
    manifest: RunManifest,
    registry: Option<LoadedRegistry>,
    warnings: Vec<String>,
}

fn prepare(args: &CommonArgs, need_registry: bool) -> Result<Prepared, InputError> {
    let mut manifest = RunManifest::load(&args.input)?;
    if let Some(r) = &args.registry {
        manifest.registry = Some(r.clone());
    }
    if let Some(seed) = args.seed {
        manifest.seed = seed;
    }
    if let Some(folds) = args.folds {
        manifest.folds = folds;
    }
    if let Some(format) = args.format {
        manifest.format = format;
    }
    if manifest.folds < 2 {
        return Err(InputError::new(&args.input, "folds must be at least 2").with_key("folds"));
    }
    let mut warnings = Vec::new();
    let registry = match &manifest.registry {
        Some(path) => Some(pipeline::load_registry(
            path,
            manifest.frozen.as_deref(),
            &mut warnings,
        )?),
        None if need_registry => {
            return Err(InputError::new(&args.input, "no registry given").with_key("registry"));
        }
        None => None,
    };
    Ok(Prepared {
        manifest,
        registry,
        warnings,
    })
}

fn provenance(prep: &Prepared) -> Provenance {
    Provenance {
        registry_hash: prep
            .registry
            .as_ref()
            .map_or_else(|| "none".into(), |r| r.hash.clone()),
        frozen_hash: prep
            .registry
            .as_ref()
            .map_or_else(|| "none".into(), LoadedRegistry::frozen_hash),
        seed: prep.manifest.seed,
        folds: prep.manifest.folds,
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn cmd_score(args: &CommonArgs) -> Result<Outcome, PipelineError> {
    let prep = prepare(args, true)?;
    let registry = prep.registry.as_ref().expect("registry required");
    let inputs = pipeline::load_inputs(&prep.manifest)?;
    let mut warnings = prep.warnings.clone();
    let table = pipeline::compute_measurements(
        &inputs,
        Some(&registry.config),
        prep.manifest.med_length,
        &mut warnings,
    )?;
    if table.is_empty() {
        warnings.push("no evaluation records; the leaderboard is empty".into());
    }
    let run = pipeline::score_measurements(&registry.config, &table)?;
    for m in &run.excluded_models {
        warnings.push(format!(
            "model `{m}` has no available group and is not ranked"
        ));
    }
    let summary = RunSummary {
        metadata: RunMetadata {
            generated_at_unix: now_unix(),
            engine_version: env!("CARGO_PKG_VERSION").into(),
        },
        provenance: provenance(&prep),
        aggregation: registry.config.aggregation,
        format: prep.manifest.format,
        group_ids: registry
            .config
            .groups
            .iter()
            .map(|g| g.id.clone())
            .collect(),
        models: run.models.len(),
        samples: run.samples.len(),
        excluded_models: run.excluded_models.clone(),
        warnings: warnings.clone(),
    };
    output::write_score_outputs(&args.out, &run, &summary)?;
    Ok(Outcome { warnings })
}

pub fn cmd_calibrate(args: &CommonArgs) -> Result<Outcome, PipelineError> {
    let prep = prepare(args, true)?;
    let registry = prep.registry.as_ref().expect("registry required");
    let ratings_path =
        prep.manifest.ratings.clone().ok_or_else(|| {
            InputError::new(&args.input, "no ratings file given").with_key("ratings")
        })?;
    let ratings = ingest::read_ratings(&ratings_path)?;
    let inputs = pipeline::load_inputs(&prep.manifest)?;
    let mut warnings = prep.warnings.clone();
    let table = pipeline::compute_measurements(
        &inputs,
        Some(&registry.config),
        prep.manifest.med_length,
        &mut warnings,
    )?;
    let results = pipeline::calibrate(
        &registry.config,
        &table,
        &ratings,
        &ratings_path,
        prep.manifest.folds,
        prep.manifest.seed,
        &mut warnings,
    )?;
    for r in &results {
        if r.skipped_folds > 0 {
            warnings.push(format!(
                "{}: {} degenerate fold(s) skipped",
                r.metric_id, r.skipped_folds
            ));
        }
    }
    let frozen = FrozenParameters {
        seed: prep.manifest.seed,
        folds: prep.manifest.folds,
        registry_hash: registry.hash.clone(),
        metrics: results.iter().map(|r| r.frozen()).collect(),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| InputError::new(&args.out, e))?;
    output::write_file(&args.out.join(FROZEN_FILE), &frozen.to_json())?;
    Ok(Outcome { warnings })
}

#[derive(Serialize)]
struct MeasurementLine<'a> {
    model_id: &'a str,
    sample_id: &'a str,
    measurements: BTreeMap<&'a str, RawValue>,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Traj,
    Plan,
    Consistency,
}

impl Stage {
    fn file(self) -> &'static str {
        match self {
            Stage::Traj => "traj.jsonl",
            Stage::Plan => "plan.jsonl",
            Stage::Consistency => "consistency.jsonl",
        }
    }

    fn keeps(self, metric: &str) -> bool {
        match self {
            Stage::Traj => metric.starts_with("traj_"),
            Stage::Plan => metric.starts_with("plan_"),
            Stage::Consistency => {
                metric.starts_with("consistency_") || metric == "psnr" || metric == "ssim"
            }
        }
    }

    /// Drops the inputs of other stages; returns the first missing required key.
    fn restrict(self, m: &mut RunManifest) -> Option<&'static str> {
        m.records = None;
        match self {
            Stage::Traj => {
                m.dags = None;
                m.plans = None;
                m.embeddings = None;
                m.frames = None;
                if m.reference_trajectories.is_none() {
                    return Some("reference_trajectories");
                }
                m.generated_trajectories
                    .is_none()
                    .then_some("generated_trajectories")
            }
            Stage::Plan => {
                m.reference_trajectories = None;
                m.generated_trajectories = None;
                m.embeddings = None;
                m.frames = None;
                if m.dags.is_none() {
                    return Some("dags");
                }
                m.plans.is_none().then_some("plans")
            }
            Stage::Consistency => {
                m.reference_trajectories = None;
                m.generated_trajectories = None;
                m.dags = None;
                m.plans = None;
                (m.embeddings.is_none() && m.frames.is_none()).then_some("embeddings")
            }
        }
    }
}

/// Runs one native-metric stage and writes its measurements as JSON lines.
fn cmd_stage(args: &CommonArgs, stage: Stage) -> Result<Outcome, PipelineError> {
    let prep = prepare(args, false)?;
    let mut only = prep.manifest.clone();
    if let Some(key) = stage.restrict(&mut only) {
        return Err(
            InputError::new(&args.input, format!("manifest lacks `{key}`"))
                .with_key(key)
                .into(),
        );
    }
    let inputs: Inputs = pipeline::load_inputs(&only)?;
    let mut warnings = prep.warnings.clone();
    let table = pipeline::compute_measurements(
        &inputs,
        prep.registry.as_ref().map(|r| &r.config),
        only.med_length,
        &mut warnings,
    )?;
    let p = provenance(&prep);
    let text: String = table
        .iter()
        .filter_map(|((model, sample), values): (&SampleKey, _)| {
            let measurements: BTreeMap<&str, RawValue> = values
                .iter()
                .filter(|(k, _)| stage.keeps(k))
                .map(|(k, v)| (k.as_str(), RawValue(*v)))
                .collect();
            (!measurements.is_empty()).then(|| {
                let mut s = serde_json::to_string(&MeasurementLine {
                    model_id: model,
                    sample_id: sample,
                    measurements,
                    provenance: &p,
                })
                .expect("measurements serialize");
                s.push('\n');
                s
            })
        })
        .collect();
    std::fs::create_dir_all(&args.out).map_err(|e| InputError::new(&args.out, e))?;
    output::write_file(&args.out.join(stage.file()), &text)?;
    Ok(Outcome { warnings })
}

pub fn cmd_traj(args: &CommonArgs) -> Result<Outcome, PipelineError> {
    cmd_stage(args, Stage::Traj)
}

pub fn cmd_plan(args: &CommonArgs) -> Result<Outcome, PipelineError> {
    cmd_stage(args, Stage::Plan)
}

pub fn cmd_consistency(args: &CommonArgs) -> Result<Outcome, PipelineError> {
    cmd_stage(args, Stage::Consistency)
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, InputError> {
    Ok(ingest::read_jsonl(path)?
        .into_iter()
        .map(|(_, v)| v)
        .collect())
}

/// Reads a score output directory and writes the leaderboard in the chosen
/// format, `report.md`, `group_bars.csv` and `metric_distribution.csv`.
pub fn cmd_report(args: &CommonArgs) -> Result<Outcome, PipelineError> {
    let dir = &args.input;
    let run_path = dir.join(output::RUN_FILE);
    let summary: RunSummary = serde_json::from_str(&ingest::read_text(&run_path)?)
        .map_err(|e| InputError::new(&run_path, e))?;
    let lines: Vec<ModelLine> = read_json_lines(&dir.join(output::MODEL_SCORES_FILE))?;
    let records: Vec<ScoredRecord> = read_json_lines(&dir.join(output::SCORED_FILE))?;
    let p = &summary.provenance;
    let table = output::table_from_lines(&lines, &summary.group_ids, p);
    let format = args.format.unwrap_or(summary.format);
    let out = &args.out;
    std::fs::create_dir_all(out).map_err(|e| InputError::new(out, e))?;
    output::write_file(
        &out.join(output::leaderboard_file(format)),
        &output::render(&table, format),
    )?;
    output::write_file(
        &out.join("report.md"),
        &output::report_markdown(&table, &lines, &summary),
    )?;
    output::write_file(
        &out.join("group_bars.csv"),
        &output::group_bars_csv(&lines, &summary.group_ids, p),
    )?;
    output::write_file(
        &out.join("metric_distribution.csv"),
        &output::metric_distribution_csv(&records, p),
    )?;
    Ok(Outcome::default())
}

pub fn dispatch(command: &Command) -> Result<Outcome, PipelineError> {
    match command {
        Command::Score(a) => cmd_score(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Traj(a) => cmd_traj(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Consistency(a) => cmd_consistency(a),
        Command::Report(a) => cmd_report(a),
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'static str,
    #[serde(flatten)]
    input: Option<&'a InputError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(outcome) => {
            for w in outcome.warnings {
                eprintln!("warning: {w}");
            }
            0
        }
        Err(err) => {
            let report = match &err {
                PipelineError::Input(e) => ErrorReport {
                    error: "input",
                    input: Some(e),
                    message: None,
                },
                PipelineError::Internal(m) => ErrorReport {
                    error: "internal",
                    input: None,
                    message: Some(m.clone()),
                },
            };
            eprintln!(
                "{}",
                serde_json::to_string(&report).expect("error report serializes")
            );
            err.exit_code()
        }
    }
}
