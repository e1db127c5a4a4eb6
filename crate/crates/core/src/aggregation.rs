//! Group means and overall leaderboard scores.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::registry::{AggregationMode, GroupSpec};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AggregationError {
    #[error("model `{0}` has no available groups")]
    NoAvailableGroups(String),
    #[error("group `{group}` has negative or non-finite weight {weight}")]
    BadWeight { group: String, weight: f64 },
    #[error("available groups of model `{0}` have zero total weight")]
    ZeroWeight(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupScore {
    pub model_id: String,
    pub group_id: String,
    /// `None` when no member metric is available.
    pub value: Option<f64>,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverallScore {
    pub model_id: String,
    pub value: f64,
    pub effective_weights: BTreeMap<String, f64>,
}

/// Arithmetic mean of the group members present in `scores`.
pub fn group_score(
    model_id: &str,
    scores: &BTreeMap<String, f64>,
    group: &GroupSpec,
) -> GroupScore {
    let values: Vec<f64> = group
        .members
        .iter()
        .filter_map(|m| scores.get(m).copied())
        .collect();
    let available = values.len();
    GroupScore {
        model_id: model_id.to_string(),
        group_id: group.id.clone(),
        value: (available > 0).then(|| values.iter().sum::<f64>() / available as f64),
        available,
    }
}

/// Combines one model's group scores. Groups missing from `weights` get
/// weight 1.
pub fn overall_score(
    model_id: &str,
    groups: &[GroupScore],
    weights: &BTreeMap<String, f64>,
    mode: AggregationMode,
) -> Result<OverallScore, AggregationError> {
    for (group, &weight) in weights {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(AggregationError::BadWeight {
                group: group.clone(),
                weight,
            });
        }
    }
    let available: Vec<(&str, f64)> = groups
        .iter()
        .filter_map(|g| g.value.map(|v| (g.group_id.as_str(), v)))
        .collect();
    if available.is_empty() {
        return Err(AggregationError::NoAvailableGroups(model_id.to_string()));
    }
    let raw_weight = |g: &str| match mode {
        AggregationMode::WeightedMean => weights.get(g).copied().unwrap_or(1.0),
        AggregationMode::UnweightedMean | AggregationMode::Sum => 1.0,
    };
    let (value, effective_weights) = match mode {
        AggregationMode::Sum => (
            available.iter().map(|(_, v)| v).sum(),
            available
                .iter()
                .map(|(g, _)| (g.to_string(), 1.0))
                .collect(),
        ),
        AggregationMode::WeightedMean | AggregationMode::UnweightedMean => {
            let total: f64 = available.iter().map(|(g, _)| raw_weight(g)).sum();
            if total <= 0.0 {
                return Err(AggregationError::ZeroWeight(model_id.to_string()));
            }
            let eff: BTreeMap<String, f64> = available
                .iter()
                .map(|(g, _)| (g.to_string(), raw_weight(g) / total))
                .collect();
            let value = available.iter().map(|(g, v)| eff[*g] * v).sum();
            (value, eff)
        }
    };
    Ok(OverallScore {
        model_id: model_id.to_string(),
        value,
        effective_weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub model_id: String,
    pub overall: f64,
    pub groups: Vec<GroupScore>,
    pub effective_weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leaderboard {
    pub mode: AggregationMode,
    pub group_ids: Vec<String>,
    pub rows: Vec<LeaderboardRow>,
}

/// Ranks models by overall score (descending, full precision); equal scores
/// are ordered by model id. Models without any available group are left out
/// and returned separately.
pub fn leaderboard(
    models: &BTreeMap<String, Vec<GroupScore>>,
    group_ids: &[String],
    weights: &BTreeMap<String, f64>,
    mode: AggregationMode,
) -> Result<(Leaderboard, Vec<String>), AggregationError> {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (model_id, groups) in models {
        match overall_score(model_id, groups, weights, mode) {
            Ok(o) => rows.push(LeaderboardRow {
                rank: 0,
                model_id: model_id.clone(),
                overall: o.value,
                groups: groups.clone(),
                effective_weights: o.effective_weights,
            }),
            Err(AggregationError::NoAvailableGroups(m)) => excluded.push(m),
            Err(e) => return Err(e),
        }
    }
    rows.sort_by(|a, b| {
        b.overall
            .partial_cmp(&a.overall)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok((
        Leaderboard {
            mode,
            group_ids: group_ids.to_vec(),
            rows,
        },
        excluded,
    ))
}
