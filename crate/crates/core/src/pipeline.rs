//! Batch composition: ingest → per-sample metrics → desirability → groups →
//! leaderboard, plus development-set calibration.
//!
//! Per-sample work runs on the rayon pool; results are always collected in
//! `(model_id, sample_id)` order so outputs never depend on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregation::{self, GroupScore, Leaderboard};
use crate::calibration::{self, CalibrationResult, CalibrationSample};
use crate::consistency::{self, ConsistencyMode, Region};
use crate::ingest::{
    self, EmbeddingDocument, FramePairDocument, InputError, PlanDocument, RunManifest,
    TrackDocument,
};
use crate::normalization::{self, clip};
use crate::plan::{self, PlanDag, PredictedPlan};
use crate::registry::{self, EvaluationRecord, FrozenParameters, RegistryConfig};
use crate::trajectory;

pub type SampleKey = (String, String);

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(#[from] InputError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 1,
            PipelineError::Internal(_) => 2,
        }
    }
}

/// Everything read from disk for one run.
#[derive(Debug, Default)]
pub struct Inputs {
    pub records: Vec<EvaluationRecord>,
    pub reference_tracks: Vec<TrackDocument>,
    pub generated_tracks: Vec<TrackDocument>,
    pub dags: BTreeMap<String, PlanDag>,
    pub plans: Vec<PlanDocument>,
    pub embeddings: Vec<EmbeddingDocument>,
    pub frame_pairs: Vec<FramePairDocument>,
    pub frames_base: PathBuf,
    /// Source file of each stream, for error attribution.
    pub sources: BTreeMap<&'static str, PathBuf>,
}

/// A registry ready for scoring. `hash` identifies the registry file as
/// written, before any frozen parameters are applied.
#[derive(Debug, Clone)]
pub struct LoadedRegistry {
    pub config: RegistryConfig,
    pub hash: String,
    pub frozen: Option<FrozenParameters>,
}

impl LoadedRegistry {
    pub fn frozen_hash(&self) -> String {
        self.frozen
            .as_ref()
            .map_or_else(|| "none".to_string(), FrozenParameters::hash)
    }
}

fn registry_input_error(path: &Path, e: registry::RegistryError) -> InputError {
    let mut err = InputError::new(path, &e);
    err.key = e.key().map(str::to_string);
    err
}

pub fn load_registry(
    path: &Path,
    frozen: Option<&Path>,
    warnings: &mut Vec<String>,
) -> Result<LoadedRegistry, InputError> {
    let text = ingest::read_text(path)?;
    let mut config = registry::load_registry(&text).map_err(|e| registry_input_error(path, e))?;
    let hash = config.hash();
    let frozen = match frozen {
        Some(fp) => {
            let params = FrozenParameters::from_json(&ingest::read_text(fp)?)
                .map_err(|e| InputError::new(fp, e))?;
            if params.registry_hash != hash {
                warnings.push(format!(
                    "{}: frozen parameters were calibrated against registry {}, applying to {}",
                    fp.display(),
                    params.registry_hash,
                    hash
                ));
            }
            config
                .apply_frozen(&params)
                .map_err(|e| registry_input_error(fp, e))?;
            Some(params)
        }
        None => None,
    };
    Ok(LoadedRegistry {
        config,
        hash,
        frozen,
    })
}

pub fn load_inputs(manifest: &RunManifest) -> Result<Inputs, InputError> {
    let mut inputs = Inputs {
        frames_base: manifest.frames_base(),
        ..Inputs::default()
    };
    let mut note = |name: &'static str, path: &Path| {
        inputs.sources.insert(name, path.to_path_buf());
    };
    if let Some(p) = &manifest.records {
        note("records", p);
    }
    if let Some(p) = &manifest.reference_trajectories {
        note("reference_trajectories", p);
    }
    if let Some(p) = &manifest.generated_trajectories {
        note("generated_trajectories", p);
    }
    if let Some(p) = &manifest.dags {
        note("dags", p);
    }
    if let Some(p) = &manifest.plans {
        note("plans", p);
    }
    if let Some(p) = &manifest.embeddings {
        note("embeddings", p);
    }
    if let Some(p) = &manifest.frames {
        note("frames", p);
    }
    if let Some(p) = &manifest.records {
        inputs.records = ingest::read_records(p)?;
    }
    if let Some(p) = &manifest.reference_trajectories {
        inputs.reference_tracks = ingest::read_tracks(p)?;
    }
    if let Some(p) = &manifest.generated_trajectories {
        inputs.generated_tracks = ingest::read_tracks(p)?;
        if let Some(doc) = inputs
            .generated_tracks
            .iter()
            .find(|d| d.model_id.is_none())
        {
            return Err(
                InputError::new(p, "generated track document without model_id")
                    .with_key(doc.sample_id.clone()),
            );
        }
    }
    if let Some(p) = &manifest.dags {
        inputs.dags = ingest::read_dags(p)?;
    }
    if let Some(p) = &manifest.plans {
        inputs.plans = ingest::read_plans(p)?;
    }
    if let Some(p) = &manifest.embeddings {
        inputs.embeddings = ingest::read_embeddings(p)?;
    }
    if let Some(p) = &manifest.frames {
        inputs.frame_pairs = ingest::read_frame_pairs(p)?;
    }
    Ok(inputs)
}

fn source(inputs: &Inputs, name: &'static str) -> PathBuf {
    inputs
        .sources
        .get(name)
        .cloned()
        .unwrap_or_else(|| PathBuf::from(name))
}

fn sample_key_str(model: &str, sample: &str) -> String {
    format!("{model}/{sample}")
}

/// Trajectory distances averaged over track ids present in both documents.
pub fn trajectory_measurements(
    generated: &TrackDocument,
    reference: &TrackDocument,
    med_length: Option<usize>,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<String, f64>, trajectory::TrajectoryError> {
    let model = generated.model_id.as_deref().unwrap_or("?");
    let mut sums = [0.0f64; 4];
    let mut matched = 0usize;
    for gen in &generated.tracks {
        let Some(gt) = reference.tracks.iter().find(|t| t.track_id == gen.track_id) else {
            warnings.push(format!(
                "{}: generated track `{}` has no ground-truth counterpart",
                sample_key_str(model, &generated.sample_id),
                gen.track_id
            ));
            continue;
        };
        let s = trajectory::score(gen, gt, med_length)?;
        for (acc, v) in sums
            .iter_mut()
            .zip([s.med, s.dtw_total, s.dtw_normalized, s.frechet])
        {
            *acc += v;
        }
        matched += 1;
    }
    for gt in &reference.tracks {
        if !generated.tracks.iter().any(|t| t.track_id == gt.track_id) {
            warnings.push(format!(
                "{}: ground-truth track `{}` missing from generated tracks",
                sample_key_str(model, &generated.sample_id),
                gt.track_id
            ));
        }
    }
    let mut out = BTreeMap::new();
    if matched > 0 {
        let n = matched as f64;
        for (id, v) in ["traj_med", "traj_dtw", "traj_dtw_norm", "traj_frechet"]
            .iter()
            .zip(sums)
        {
            out.insert(id.to_string(), v / n);
        }
    }
    Ok(out)
}

pub fn plan_measurements(score: &plan::PlanScore) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("plan_recall".to_string(), score.recall),
        ("plan_sequential".to_string(), score.sequential),
        ("plan_precision".to_string(), score.precision),
        ("plan_s_plan".to_string(), score.s_plan),
    ])
}

/// Per-region consistency under both modes, plus the unweighted mean over
/// the regions present.
pub fn consistency_measurements(
    doc: &EmbeddingDocument,
) -> Result<BTreeMap<String, f64>, (Region, consistency::ConsistencyError)> {
    let mut out = BTreeMap::new();
    let mut adjacent = Vec::new();
    let mut anchor = Vec::new();
    for seq in &doc.regions {
        let a = consistency::regional_consistency(seq, ConsistencyMode::Adjacent)
            .map_err(|e| (seq.region, e))?;
        let f = consistency::regional_consistency(seq, ConsistencyMode::AnchorFirst)
            .map_err(|e| (seq.region, e))?;
        out.insert(format!("consistency_{}", seq.region.name()), a);
        out.insert(format!("consistency_{}_anchor_first", seq.region.name()), f);
        adjacent.push(a);
        anchor.push(f);
    }
    if !adjacent.is_empty() {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.insert("consistency_mean".to_string(), mean(&adjacent));
        out.insert("consistency_mean_anchor_first".to_string(), mean(&anchor));
    }
    Ok(out)
}

/// Computes every native metric and merges it with the ingested records.
/// Non-finite ingested values are dropped with a warning.
pub fn compute_measurements(
    inputs: &Inputs,
    registry: Option<&RegistryConfig>,
    med_length: Option<usize>,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<SampleKey, BTreeMap<String, f64>>, PipelineError> {
    let mut table: BTreeMap<SampleKey, BTreeMap<String, f64>> = BTreeMap::new();

    for rec in &inputs.records {
        if let Some(registry) = registry {
            for w in registry::validate_record(rec, registry) {
                warnings.push(w.to_string());
            }
        }
        let entry = table
            .entry((rec.model_id.clone(), rec.sample_id.clone()))
            .or_default();
        for (k, v) in &rec.measurements {
            if v.is_finite() {
                entry.insert(k.clone(), *v);
            }
        }
    }

    let mut merge = |key: SampleKey, values: BTreeMap<String, f64>, warnings: &mut Vec<String>| {
        let entry = table.entry(key.clone()).or_default();
        for (k, v) in values {
            if entry.insert(k.clone(), v).is_some() {
                warnings.push(format!(
                    "{}: computed `{k}` replaces the ingested value",
                    sample_key_str(&key.0, &key.1)
                ));
            }
        }
    };

    // trajectories
    let reference: BTreeMap<&str, &TrackDocument> = inputs
        .reference_tracks
        .iter()
        .map(|d| (d.sample_id.as_str(), d))
        .collect();
    let mut gen_docs: Vec<&TrackDocument> = inputs.generated_tracks.iter().collect();
    gen_docs.sort_by(|a, b| (&a.model_id, &a.sample_id).cmp(&(&b.model_id, &b.sample_id)));
    let traj_results: Vec<_> = gen_docs
        .par_iter()
        .map(|doc| {
            let mut local = Vec::new();
            let res = match reference.get(doc.sample_id.as_str()) {
                Some(gt) => trajectory_measurements(doc, gt, med_length, &mut local).map(Some),
                None => {
                    local.push(format!(
                        "{}: no ground-truth trajectories for this sample",
                        sample_key_str(doc.model_id.as_deref().unwrap_or("?"), &doc.sample_id)
                    ));
                    Ok(None)
                }
            };
            (doc, res, local)
        })
        .collect();
    for (doc, res, local) in traj_results {
        warnings.extend(local);
        let model = doc.model_id.clone().unwrap_or_default();
        match res {
            Ok(Some(values)) => merge((model, doc.sample_id.clone()), values, warnings),
            Ok(None) => {}
            Err(e) => {
                return Err(InputError::new(source(inputs, "generated_trajectories"), e)
                    .with_key(sample_key_str(&model, &doc.sample_id))
                    .into())
            }
        }
    }

    // plans
    let mut plans: Vec<&PlanDocument> = inputs.plans.iter().collect();
    plans.sort_by(|a, b| (&a.model_id, &a.sample_id).cmp(&(&b.model_id, &b.sample_id)));
    let plan_results: Vec<_> = plans
        .par_iter()
        .map(|doc| {
            let res = inputs.dags.get(&doc.sample_id).map(|dag| {
                plan::score_plan(
                    &PredictedPlan {
                        steps: doc.steps.clone(),
                    },
                    dag,
                )
            });
            (doc, res)
        })
        .collect();
    for (doc, res) in plan_results {
        let key = (doc.model_id.clone(), doc.sample_id.clone());
        match res {
            Some(Ok(score)) => merge(key, plan_measurements(&score), warnings),
            Some(Err(e)) => {
                return Err(InputError::new(source(inputs, "plans"), e)
                    .with_key(sample_key_str(&key.0, &key.1))
                    .into())
            }
            None => warnings.push(format!(
                "{}: no ground-truth DAG for this sample",
                sample_key_str(&key.0, &key.1)
            )),
        }
    }

    // regional consistency
    let mut emb: Vec<&EmbeddingDocument> = inputs.embeddings.iter().collect();
    emb.sort_by(|a, b| (&a.model_id, &a.sample_id).cmp(&(&b.model_id, &b.sample_id)));
    let emb_results: Vec<_> = emb
        .par_iter()
        .map(|doc| (doc, consistency_measurements(doc)))
        .collect();
    for (doc, res) in emb_results {
        let key = (doc.model_id.clone(), doc.sample_id.clone());
        match res {
            Ok(values) => merge(key, values, warnings),
            Err((region, e)) => {
                return Err(InputError::new(source(inputs, "embeddings"), e)
                    .with_key(format!(
                        "{}/{}",
                        sample_key_str(&key.0, &key.1),
                        region.name()
                    ))
                    .into())
            }
        }
    }

    // frame quality
    let mut frames: Vec<&FramePairDocument> = inputs.frame_pairs.iter().collect();
    frames.sort_by(|a, b| (&a.model_id, &a.sample_id).cmp(&(&b.model_id, &b.sample_id)));
    let frame_results: Vec<_> = frames
        .par_iter()
        .map(|doc| {
            let run = || -> Result<BTreeMap<String, f64>, consistency::QualityError> {
                let r = consistency::load_frames(&doc.reference, &inputs.frames_base)?;
                let g = consistency::load_frames(&doc.generated, &inputs.frames_base)?;
                Ok(BTreeMap::from([
                    ("psnr".to_string(), consistency::psnr_sequence(&r, &g)?.db()),
                    ("ssim".to_string(), consistency::ssim_sequence(&r, &g)?),
                ]))
            };
            (doc, run())
        })
        .collect();
    for (doc, res) in frame_results {
        let key = (doc.model_id.clone(), doc.sample_id.clone());
        match res {
            Ok(values) => merge(key, values, warnings),
            Err(e) => {
                return Err(InputError::new(source(inputs, "frames"), e)
                    .with_key(sample_key_str(&key.0, &key.1))
                    .into())
            }
        }
    }

    Ok(table)
}

/// Measurement value that keeps the infinite PSNR sentinel through JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawValue(pub f64);

impl Serialize for RawValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSample {
    pub model_id: String,
    pub sample_id: String,
    pub measurements: BTreeMap<String, RawValue>,
    pub desirability: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMetric {
    /// Mean of the anchor-clipped per-sample values.
    pub raw: f64,
    pub desirability: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    pub model_id: String,
    pub metrics: BTreeMap<String, ModelMetric>,
    pub groups: Vec<GroupScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRun {
    pub samples: Vec<ScoredSample>,
    pub models: BTreeMap<String, ModelResult>,
    pub leaderboard: Leaderboard,
    pub excluded_models: Vec<String>,
}

fn internal(e: impl ToString) -> PipelineError {
    PipelineError::Internal(e.to_string())
}

/// Normalises and aggregates a measurement table.
///
/// A model's raw value for a metric is the mean over its samples of the
/// anchor-clipped measurement; the desirability mapping is applied to that
/// mean.
pub fn score_measurements(
    registry: &RegistryConfig,
    table: &BTreeMap<SampleKey, BTreeMap<String, f64>>,
) -> Result<ScoreRun, PipelineError> {
    let eps = registry.epsilon;
    let mut samples = Vec::with_capacity(table.len());
    let mut clipped: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for ((model, sample), values) in table {
        let mut desirability = BTreeMap::new();
        let per_model = clipped.entry(model.as_str()).or_default();
        for (metric_id, &x) in values {
            let Some(spec) = registry.metric(metric_id) else {
                continue;
            };
            if x.is_nan() {
                continue;
            }
            desirability.insert(
                metric_id.clone(),
                normalization::desirability(x, spec, eps)
                    .map_err(internal)?
                    .value,
            );
            per_model
                .entry(spec.id.as_str())
                .or_default()
                .push(clip(x, spec.low, spec.high).map_err(internal)?);
        }
        samples.push(ScoredSample {
            model_id: model.clone(),
            sample_id: sample.clone(),
            measurements: values
                .iter()
                .map(|(k, v)| (k.clone(), RawValue(*v)))
                .collect(),
            desirability,
        });
    }

    let mut models = BTreeMap::new();
    for (model, per_metric) in clipped {
        let mut metrics = BTreeMap::new();
        let mut scores = BTreeMap::new();
        for (metric_id, xs) in per_metric {
            let spec = registry.metric(metric_id).expect("filtered above");
            let raw = xs.iter().sum::<f64>() / xs.len() as f64;
            let d = normalization::desirability(raw, spec, eps)
                .map_err(internal)?
                .value;
            scores.insert(metric_id.to_string(), d);
            metrics.insert(
                metric_id.to_string(),
                ModelMetric {
                    raw,
                    desirability: d,
                    samples: xs.len(),
                },
            );
        }
        let groups = registry
            .groups
            .iter()
            .map(|g| aggregation::group_score(model, &scores, g))
            .collect();
        models.insert(
            model.to_string(),
            ModelResult {
                model_id: model.to_string(),
                metrics,
                groups,
            },
        );
    }

    let group_ids: Vec<String> = registry.groups.iter().map(|g| g.id.clone()).collect();
    let by_model: BTreeMap<String, Vec<GroupScore>> = models
        .iter()
        .map(|(k, m)| (k.clone(), m.groups.clone()))
        .collect();
    let (leaderboard, excluded_models) = aggregation::leaderboard(
        &by_model,
        &group_ids,
        &registry.weights(),
        registry.aggregation,
    )
    .map_err(internal)?;
    Ok(ScoreRun {
        samples,
        models,
        leaderboard,
        excluded_models,
    })
}

/// Pairs ratings with prescaled measurements and calibrates every rated
/// metric with its registry family and the default grid.
pub fn calibrate(
    registry: &RegistryConfig,
    table: &BTreeMap<SampleKey, BTreeMap<String, f64>>,
    ratings: &[ingest::HumanRating],
    ratings_path: &Path,
    folds: usize,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<Vec<CalibrationResult>, PipelineError> {
    let mut by_metric: BTreeMap<&str, Vec<CalibrationSample>> = BTreeMap::new();
    let mut rated: BTreeSet<&str> = BTreeSet::new();
    let mut unknown: BTreeSet<&str> = BTreeSet::new();
    for r in ratings {
        let Some(spec) = registry.metric(&r.metric_id) else {
            unknown.insert(&r.metric_id);
            continue;
        };
        rated.insert(&spec.id);
        let x = table
            .get(&(r.model_id.clone(), r.sample_id.clone()))
            .and_then(|m| m.get(&r.metric_id));
        if let Some(&x) = x {
            by_metric
                .entry(&spec.id)
                .or_default()
                .push(CalibrationSample {
                    prescaled: normalization::prescale(x, spec).map_err(internal)?,
                    rating: r.rating,
                });
        }
    }
    for m in unknown {
        warnings.push(format!("ratings for unregistered metric `{m}` ignored"));
    }
    if rated.is_empty() {
        return Err(InputError::new(ratings_path, "no ratings for any registered metric").into());
    }

    let mut insufficient = Vec::new();
    for &metric in &rated {
        let n = by_metric.get(metric).map_or(0, Vec::len);
        if n < 2 * folds {
            insufficient.push(format!("{metric} ({n} paired samples, need {})", 2 * folds));
        }
    }
    if !insufficient.is_empty() {
        return Err(InputError::new(
            ratings_path,
            format!(
                "insufficient samples for calibration: {}",
                insufficient.join(", ")
            ),
        )
        .with_key(
            insufficient[0]
                .split(' ')
                .next()
                .unwrap_or_default()
                .to_string(),
        )
        .into());
    }

    let metrics: Vec<&str> = rated.into_iter().collect();
    metrics
        .par_iter()
        .map(|&metric| {
            let spec = registry
                .metric(metric)
                .expect("rated metrics are registered");
            let grid = calibration::default_grid(spec.family);
            calibration::calibrate_metric(
                metric,
                &by_metric[metric],
                spec.family,
                &grid,
                folds,
                seed,
                registry.epsilon,
            )
            .map_err(|e| {
                InputError::new(ratings_path, e)
                    .with_key(metric.to_string())
                    .into()
            })
        })
        .collect()
}
