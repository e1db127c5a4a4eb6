//! Input file formats and the run manifest.
//!
//! Every record stream is UTF-8 JSON lines, one document per line. Blank
//! lines are ignored. Relative paths inside a manifest resolve against the
//! manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::consistency::{FrameSource, RegionEmbeddingSequence};
use crate::plan::{DagDocument, PlanDag};
use crate::registry::EvaluationRecord;
use crate::trajectory::Trajectory;

/// An input problem attributed to a file and, when known, a line and key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputError {
    pub file: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub message: String,
}

impl InputError {
    pub fn new(file: impl Into<PathBuf>, message: impl ToString) -> Self {
        InputError {
            file: file.into(),
            line: None,
            key: None,
            message: message.to_string(),
        }
    }

    pub fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.key = Some(key.into());
        self
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, " [{key}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for InputError {}

pub fn read_text(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|e| InputError::new(path, e))
}

/// Parses a JSON-lines file; each item carries its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, InputError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(line).map_err(|e| InputError::new(path, e).at_line(i + 1))?;
        out.push((i + 1, item));
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    model_id: String,
    sample_id: String,
    #[serde(default)]
    measurements: BTreeMap<String, Option<f64>>,
}

/// External measurements. `null` values are treated as absent.
pub fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>, InputError> {
    Ok(read_jsonl::<RawRecord>(path)?
        .into_iter()
        .map(|(_, r)| EvaluationRecord {
            model_id: r.model_id,
            sample_id: r.sample_id,
            measurements: r
                .measurements
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| (k, v)))
                .collect(),
        })
        .collect())
}

/// Tracks of one video. Ground-truth documents omit `model_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub sample_id: String,
    pub tracks: Vec<Trajectory>,
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackDocument>, InputError> {
    let docs = read_jsonl::<TrackDocument>(path)?;
    for (line, doc) in &docs {
        for t in &doc.tracks {
            t.validate().map_err(|e| {
                InputError::new(path, e)
                    .at_line(*line)
                    .with_key(t.track_id.clone())
            })?;
        }
    }
    Ok(docs.into_iter().map(|(_, d)| d).collect())
}

#[derive(Debug, Clone, Deserialize)]
struct RawDag {
    sample_id: String,
    #[serde(flatten)]
    dag: DagDocument,
}

/// Ground-truth DAGs by sample id, validated (acyclic, known endpoints).
pub fn read_dags(path: &Path) -> Result<BTreeMap<String, PlanDag>, InputError> {
    let mut out = BTreeMap::new();
    for (line, raw) in read_jsonl::<RawDag>(path)? {
        let dag = PlanDag::new(&raw.dag).map_err(|e| {
            InputError::new(path, e)
                .at_line(line)
                .with_key(raw.sample_id.clone())
        })?;
        if out.insert(raw.sample_id.clone(), dag).is_some() {
            return Err(InputError::new(path, "duplicate sample id")
                .at_line(line)
                .with_key(raw.sample_id));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDocument {
    pub model_id: String,
    pub sample_id: String,
    pub steps: Vec<String>,
}

pub fn read_plans(path: &Path) -> Result<Vec<PlanDocument>, InputError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, d)| d).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingDocument {
    pub model_id: String,
    pub sample_id: String,
    pub regions: Vec<RegionEmbeddingSequence>,
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingDocument>, InputError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, d)| d).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePairDocument {
    pub model_id: String,
    pub sample_id: String,
    pub reference: FrameSource,
    pub generated: FrameSource,
}

pub fn read_frame_pairs(path: &Path) -> Result<Vec<FramePairDocument>, InputError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, d)| d).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanRating {
    pub model_id: String,
    pub sample_id: String,
    pub metric_id: String,
    pub rating: f64,
}

pub fn read_ratings(path: &Path) -> Result<Vec<HumanRating>, InputError> {
    let rows = read_jsonl::<HumanRating>(path)?;
    for (line, r) in &rows {
        if !r.rating.is_finite() {
            return Err(InputError::new(path, "rating is not finite")
                .at_line(*line)
                .with_key(r.metric_id.clone()));
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    #[default]
    Markdown,
    JsonLines,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::JsonLines => "jsonl",
        }
    }
}

/// Paths of every input a run may consume, resolved to absolute locations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub registry: Option<PathBuf>,
    pub frozen: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub reference_trajectories: Option<PathBuf>,
    pub generated_trajectories: Option<PathBuf>,
    pub dags: Option<PathBuf>,
    pub plans: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub seed: u64,
    pub folds: usize,
    pub format: ReportFormat,
    pub med_length: Option<usize>,
}

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    registry: Option<PathBuf>,
    frozen: Option<PathBuf>,
    records: Option<PathBuf>,
    reference_trajectories: Option<PathBuf>,
    generated_trajectories: Option<PathBuf>,
    dags: Option<PathBuf>,
    plans: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    frames: Option<PathBuf>,
    ratings: Option<PathBuf>,
    seed: Option<u64>,
    folds: Option<usize>,
    format: Option<ReportFormat>,
    med_length: Option<usize>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = read_text(path)?;
        let raw: RawManifest = toml::from_str(&text).map_err(|e| InputError::new(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: Option<PathBuf>| p.map(|p| base.join(p));
        if raw.med_length.is_some_and(|n| n < 2) {
            return Err(
                InputError::new(path, "med_length must be at least 2").with_key("med_length")
            );
        }
        Ok(RunManifest {
            registry: resolve(raw.registry),
            frozen: resolve(raw.frozen),
            records: resolve(raw.records),
            reference_trajectories: resolve(raw.reference_trajectories),
            generated_trajectories: resolve(raw.generated_trajectories),
            dags: resolve(raw.dags),
            plans: resolve(raw.plans),
            embeddings: resolve(raw.embeddings),
            frames: resolve(raw.frames),
            ratings: resolve(raw.ratings),
            seed: raw.seed.unwrap_or(0),
            folds: raw.folds.unwrap_or(DEFAULT_FOLDS),
            format: raw.format.unwrap_or_default(),
            med_length: raw.med_length,
        })
    }

    /// Directory that relative paths inside frame documents resolve against.
    pub fn frames_base(&self) -> PathBuf {
        self.frames
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }
}
