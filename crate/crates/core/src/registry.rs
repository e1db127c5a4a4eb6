//! Metric and group configuration, frozen calibration parameters, and the
//! evaluation record model consumed by every scoring stage.
//!
//! The registry is loaded from a TOML document:
//!
//! ```toml
//! epsilon = 1e-6                 # optional, default 1e-6
//! aggregation = "weighted_mean"  # weighted_mean | unweighted_mean | sum
//!
//! [[groups]]
//! id = "vq"
//! weight = 1.0
//!
//! [[metrics]]
//! id = "psnr"
//! group = "vq"
//! direction = "hib"   # hib | lib
//! low = 0.0
//! high = 50.0
//! family = "gamma"    # gamma | logit_t | tanh_kappa, default gamma
//! theta = 1.0         # default 1.0
//! ```
//!
//! Anchors and direction may be omitted for metrics with a known bounded
//! scale (see [`known_bounds`]) or when `scale = "likert5"` / `"unit"` /
//! `"signed_unit"` is given.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegistryError {
    #[error("registry parse error: {0}")]
    Parse(String),
    #[error("metric `{key}`: anchor violation, low {low} must be below high {high}")]
    AnchorViolation { key: String, low: f64, high: f64 },
    #[error("metric `{key}`: references unknown group `{group}`")]
    UnknownGroup { key: String, group: String },
    #[error("metric `{key}`: duplicate metric id")]
    DuplicateMetric { key: String },
    #[error("group `{key}`: duplicate group id")]
    DuplicateGroup { key: String },
    #[error("metric `{key}`: listed as a member of groups `{first}` and `{second}`")]
    MultiGroup {
        key: String,
        first: String,
        second: String,
    },
    #[error("group `{key}`: member `{member}` does not resolve to a metric of this group")]
    BadMember { key: String, member: String },
    #[error("metric `{key}`: theta must be positive and finite, got {theta}")]
    BadTheta { key: String, theta: f64 },
    #[error("group `{key}`: weight must be nonnegative and finite, got {weight}")]
    BadWeight { key: String, weight: f64 },
    #[error("epsilon must lie in (0, 0.5), got {0}")]
    BadEpsilon(f64),
    #[error("metric `{key}`: missing `{field}` and no default bounds are known for it")]
    MissingField { key: String, field: &'static str },
    #[error("metric `{key}`: unknown scale `{scale}`")]
    UnknownScale { key: String, scale: String },
    #[error("frozen parameters: metric `{key}` is not in the registry")]
    FrozenUnknownMetric { key: String },
}

impl RegistryError {
    /// Configuration key the error is attributed to, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            RegistryError::Parse(_) | RegistryError::BadEpsilon(_) => None,
            RegistryError::AnchorViolation { key, .. }
            | RegistryError::UnknownGroup { key, .. }
            | RegistryError::DuplicateMetric { key }
            | RegistryError::DuplicateGroup { key }
            | RegistryError::MultiGroup { key, .. }
            | RegistryError::BadMember { key, .. }
            | RegistryError::BadTheta { key, .. }
            | RegistryError::BadWeight { key, .. }
            | RegistryError::MissingField { key, .. }
            | RegistryError::UnknownScale { key, .. }
            | RegistryError::FrozenUnknownMetric { key } => Some(key),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Higher is better.
    Hib,
    /// Lower is better.
    Lib,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gamma,
    LogitT,
    TanhKappa,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gamma => "gamma",
            Family::LogitT => "logit_t",
            Family::TanhKappa => "tanh_kappa",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    WeightedMean,
    UnweightedMean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub id: String,
    pub group: String,
    pub direction: Direction,
    pub low: f64,
    pub high: f64,
    pub family: Family,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub id: String,
    pub weight: f64,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub epsilon: f64,
    pub aggregation: AggregationMode,
    pub groups: Vec<GroupSpec>,
    pub metrics: Vec<MetricSpec>,
}

/// Default direction and anchors for metrics whose scale is bounded by
/// construction.
pub fn known_bounds(metric_id: &str) -> Option<(Direction, f64, f64)> {
    match metric_id {
        "psnr" => Some((Direction::Hib, 0.0, 50.0)),
        "fvd" => Some((Direction::Lib, 0.0, 2000.0)),
        "ssim" => Some((Direction::Hib, -1.0, 1.0)),
        "plan_s_plan" | "plan_recall" | "plan_sequential" | "plan_precision" => {
            Some((Direction::Hib, 0.0, 1.0))
        }
        id if id.starts_with("consistency_") => Some((Direction::Hib, 0.0, 1.0)),
        _ => None,
    }
}

fn scale_bounds(scale: &str) -> Option<(Direction, f64, f64)> {
    match scale {
        "likert5" => Some((Direction::Hib, 1.0, 5.0)),
        "unit" => Some((Direction::Hib, 0.0, 1.0)),
        "signed_unit" => Some((Direction::Hib, -1.0, 1.0)),
        _ => None,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegistry {
    epsilon: Option<f64>,
    aggregation: Option<AggregationMode>,
    #[serde(default)]
    groups: Vec<RawGroup>,
    #[serde(default)]
    metrics: Vec<RawMetric>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    id: String,
    weight: Option<f64>,
    members: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetric {
    id: String,
    group: String,
    direction: Option<Direction>,
    low: Option<f64>,
    high: Option<f64>,
    scale: Option<String>,
    family: Option<Family>,
    theta: Option<f64>,
}

/// Parses and validates a registry document, applying defaults.
pub fn load_registry(text: &str) -> Result<RegistryConfig, RegistryError> {
    let raw: RawRegistry = toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;

    let epsilon = raw.epsilon.unwrap_or(DEFAULT_EPSILON);
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(RegistryError::BadEpsilon(epsilon));
    }

    let mut group_ids = BTreeSet::new();
    for g in &raw.groups {
        if !group_ids.insert(g.id.as_str()) {
            return Err(RegistryError::DuplicateGroup { key: g.id.clone() });
        }
        let weight = g.weight.unwrap_or(1.0);
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(RegistryError::BadWeight {
                key: g.id.clone(),
                weight,
            });
        }
    }

    let mut metrics = Vec::with_capacity(raw.metrics.len());
    let mut seen = BTreeSet::new();
    for m in raw.metrics {
        if !seen.insert(m.id.clone()) {
            return Err(RegistryError::DuplicateMetric { key: m.id });
        }
        if !group_ids.contains(m.group.as_str()) {
            return Err(RegistryError::UnknownGroup {
                key: m.id,
                group: m.group,
            });
        }
        let defaults = match &m.scale {
            Some(scale) => {
                Some(
                    scale_bounds(scale).ok_or_else(|| RegistryError::UnknownScale {
                        key: m.id.clone(),
                        scale: scale.clone(),
                    })?,
                )
            }
            None => known_bounds(&m.id),
        };
        let missing = |field| RegistryError::MissingField {
            key: m.id.clone(),
            field,
        };
        let direction = m
            .direction
            .or(defaults.map(|d| d.0))
            .ok_or_else(|| missing("direction"))?;
        let low = m
            .low
            .or(defaults.map(|d| d.1))
            .ok_or_else(|| missing("low"))?;
        let high = m
            .high
            .or(defaults.map(|d| d.2))
            .ok_or_else(|| missing("high"))?;
        let spec = MetricSpec {
            id: m.id,
            group: m.group,
            direction,
            low,
            high,
            family: m.family.unwrap_or(Family::Gamma),
            theta: m.theta.unwrap_or(1.0),
        };
        spec.check()?;
        metrics.push(spec);
    }

    let mut member_of: BTreeMap<&str, &str> = BTreeMap::new();
    let mut groups = Vec::with_capacity(raw.groups.len());
    for g in &raw.groups {
        let derived: Vec<String> = metrics
            .iter()
            .filter(|m| m.group == g.id)
            .map(|m| m.id.clone())
            .collect();
        if let Some(listed) = &g.members {
            for member in listed {
                if let Some(prev) = member_of.insert(member, &g.id) {
                    return Err(RegistryError::MultiGroup {
                        key: member.clone(),
                        first: prev.to_string(),
                        second: g.id.clone(),
                    });
                }
            }
            for member in listed {
                if !derived.contains(member) {
                    // Listed here but declared under another group (or unknown).
                    let other = metrics.iter().find(|m| &m.id == member);
                    return Err(match other {
                        Some(m) => RegistryError::MultiGroup {
                            key: member.clone(),
                            first: m.group.clone(),
                            second: g.id.clone(),
                        },
                        None => RegistryError::BadMember {
                            key: g.id.clone(),
                            member: member.clone(),
                        },
                    });
                }
            }
            if let Some(missing) = derived.iter().find(|d| !listed.contains(d)) {
                return Err(RegistryError::BadMember {
                    key: g.id.clone(),
                    member: missing.clone(),
                });
            }
        }
        groups.push(GroupSpec {
            id: g.id.clone(),
            weight: g.weight.unwrap_or(1.0),
            members: derived,
        });
    }

    Ok(RegistryConfig {
        epsilon,
        aggregation: raw.aggregation.unwrap_or_default(),
        groups,
        metrics,
    })
}

impl MetricSpec {
    pub fn check(&self) -> Result<(), RegistryError> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(RegistryError::AnchorViolation {
                key: self.id.clone(),
                low: self.low,
                high: self.high,
            });
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(RegistryError::BadTheta {
                key: self.id.clone(),
                theta: self.theta,
            });
        }
        Ok(())
    }
}

impl RegistryConfig {
    pub fn metric(&self, id: &str) -> Option<&MetricSpec> {
        self.metrics.iter().find(|m| m.id == id)
    }

    pub fn group(&self, id: &str) -> Option<&GroupSpec> {
        self.groups.iter().find(|g| g.id == id)
    }

    /// Canonical TOML rendering; reloading it yields an equal registry.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("registry is always representable as TOML")
    }

    /// SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Replaces family and θ for every metric named in `frozen`.
    pub fn apply_frozen(&mut self, frozen: &FrozenParameters) -> Result<(), RegistryError> {
        for entry in &frozen.metrics {
            let spec = self
                .metrics
                .iter_mut()
                .find(|m| m.id == entry.metric_id)
                .ok_or_else(|| RegistryError::FrozenUnknownMetric {
                    key: entry.metric_id.clone(),
                })?;
            spec.family = entry.family;
            spec.theta = entry.theta;
            spec.check()?;
        }
        Ok(())
    }

    pub fn weights(&self) -> BTreeMap<String, f64> {
        self.groups
            .iter()
            .map(|g| (g.id.clone(), g.weight))
            .collect()
    }
}

/// One frozen calibration outcome as persisted in the frozen-parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenMetric {
    pub metric_id: String,
    pub family: Family,
    pub theta: f64,
    pub cv_fisher_z_mean: f64,
    pub spearman: f64,
    pub folds: usize,
    pub skipped_folds: usize,
    pub samples: usize,
    pub stratified: bool,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenParameters {
    pub seed: u64,
    pub folds: usize,
    pub registry_hash: String,
    pub metrics: Vec<FrozenMetric>,
}

impl FrozenParameters {
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        serde_json::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("frozen parameters serialize");
        s.push('\n');
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Raw measurements for one (model, sample). Absent metrics are simply not
/// keys of the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub model_id: String,
    pub sample_id: String,
    #[serde(default)]
    pub measurements: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordWarning {
    UnknownMetric {
        model_id: String,
        sample_id: String,
        metric_id: String,
    },
    NonFinite {
        model_id: String,
        sample_id: String,
        metric_id: String,
    },
}

impl fmt::Display for RecordWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordWarning::UnknownMetric {
                model_id,
                sample_id,
                metric_id,
            } => write!(f, "{model_id}/{sample_id}: unknown metric `{metric_id}`"),
            RecordWarning::NonFinite {
                model_id,
                sample_id,
                metric_id,
            } => write!(
                f,
                "{model_id}/{sample_id}: non-finite value for `{metric_id}`"
            ),
        }
    }
}

pub fn validate_record(record: &EvaluationRecord, registry: &RegistryConfig) -> Vec<RecordWarning> {
    let mut warnings = Vec::new();
    for (metric_id, value) in &record.measurements {
        if registry.metric(metric_id).is_none() {
            warnings.push(RecordWarning::UnknownMetric {
                model_id: record.model_id.clone(),
                sample_id: record.sample_id.clone(),
                metric_id: metric_id.clone(),
            });
        }
        if !value.is_finite() {
            warnings.push(RecordWarning::NonFinite {
                model_id: record.model_id.clone(),
                sample_id: record.sample_id.clone(),
                metric_id: metric_id.clone(),
            });
        }
    }
    warnings
}
