//! Output files: record streams, leaderboards and plot series.
//!
//! Every row or file carries the [`Provenance`] block. The only
//! non-deterministic value anywhere is `metadata.generated_at_unix` in
//! `run.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{InputError, ReportFormat};
use crate::pipeline::{RawValue, ScoreRun};
use crate::registry::AggregationMode;

pub const SCORED_FILE: &str = "scored.jsonl";
pub const MODEL_SCORES_FILE: &str = "model_scores.jsonl";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub registry_hash: String,
    pub frozen_hash: String,
    pub seed: u64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub generated_at_unix: u64,
    pub engine_version: String,
}

/// Summary written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub metadata: RunMetadata,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub aggregation: AggregationMode,
    pub format: ReportFormat,
    pub group_ids: Vec<String>,
    pub models: usize,
    pub samples: usize,
    pub excluded_models: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct ScoredLine<'a> {
    model_id: &'a str,
    sample_id: &'a str,
    measurements: &'a BTreeMap<String, RawValue>,
    desirability: &'a BTreeMap<String, f64>,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

/// One line of `model_scores.jsonl`; also the input of the report command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLine {
    pub model_id: String,
    pub rank: Option<usize>,
    pub overall: Option<f64>,
    pub groups: BTreeMap<String, Option<f64>>,
    pub effective_weights: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, MetricLine>,
    #[serde(flatten)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub raw: f64,
    pub desirability: f64,
    pub samples: usize,
}

/// Leaderboard in presentation form.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub group_ids: Vec<String>,
    pub rows: Vec<TableRow>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub rank: usize,
    pub model_id: String,
    pub groups: Vec<Option<f64>>,
    pub overall: f64,
}

pub fn model_lines(run: &ScoreRun, provenance: &Provenance) -> Vec<ModelLine> {
    let ranked: BTreeMap<&str, _> = run
        .leaderboard
        .rows
        .iter()
        .map(|r| (r.model_id.as_str(), r))
        .collect();
    run.models
        .values()
        .map(|m| {
            let row = ranked.get(m.model_id.as_str());
            ModelLine {
                model_id: m.model_id.clone(),
                rank: row.map(|r| r.rank),
                overall: row.map(|r| r.overall),
                groups: m
                    .groups
                    .iter()
                    .map(|g| (g.group_id.clone(), g.value))
                    .collect(),
                effective_weights: row.map(|r| r.effective_weights.clone()).unwrap_or_default(),
                metrics: m
                    .metrics
                    .iter()
                    .map(|(k, v)| {
                        (
                            k.clone(),
                            MetricLine {
                                raw: v.raw,
                                desirability: v.desirability,
                                samples: v.samples,
                            },
                        )
                    })
                    .collect(),
                provenance: provenance.clone(),
            }
        })
        .collect()
}

/// Builds the ranked table from model lines; unranked models are skipped.
pub fn table_from_lines(
    lines: &[ModelLine],
    group_ids: &[String],
    provenance: &Provenance,
) -> Table {
    let mut rows: Vec<TableRow> = lines
        .iter()
        .filter_map(|l| {
            Some(TableRow {
                rank: l.rank?,
                model_id: l.model_id.clone(),
                groups: group_ids
                    .iter()
                    .map(|g| l.groups.get(g).copied().flatten())
                    .collect(),
                overall: l.overall?,
            })
        })
        .collect();
    rows.sort_by_key(|r| r.rank);
    Table {
        group_ids: group_ids.to_vec(),
        rows,
        provenance: provenance.clone(),
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("output rows serialize");
    s.push('\n');
    s
}

fn column_best(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values
        .flatten()
        .fold(None, |best, v| Some(best.map_or(v, |b: f64| b.max(v))))
}

fn cell(value: Option<f64>, best: Option<f64>) -> String {
    match value {
        None => "n/a".to_string(),
        Some(v) if Some(v) == best => format!("**{v:.2}**"),
        Some(v) => format!("{v:.2}"),
    }
}

pub fn provenance_footer(p: &Provenance) -> String {
    format!(
        "registry_hash: `{}` · frozen_hash: `{}` · seed: {} · folds: {}\n",
        p.registry_hash, p.frozen_hash, p.seed, p.folds
    )
}

/// Markdown table; the best value of every numeric column is bolded.
pub fn render_markdown(table: &Table) -> String {
    let mut out = String::new();
    out.push_str("| Rank | Model |");
    for g in &table.group_ids {
        out.push_str(&format!(" {g} |"));
    }
    out.push_str(" Overall |\n|---:|---|");
    for _ in &table.group_ids {
        out.push_str("---:|");
    }
    out.push_str("---:|\n");
    let bests: Vec<Option<f64>> = (0..table.group_ids.len())
        .map(|i| column_best(table.rows.iter().map(|r| r.groups[i])))
        .collect();
    let best_overall = column_best(table.rows.iter().map(|r| Some(r.overall)));
    for row in &table.rows {
        out.push_str(&format!("| {} | {} |", row.rank, row.model_id));
        for (v, best) in row.groups.iter().zip(&bests) {
            out.push_str(&format!(" {} |", cell(*v, *best)));
        }
        out.push_str(&format!(" {} |\n", cell(Some(row.overall), best_overall)));
    }
    out.push('\n');
    out.push_str(&provenance_footer(&table.provenance));
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn provenance_cells(p: &Provenance) -> [String; 4] {
    [
        p.registry_hash.clone(),
        p.frozen_hash.clone(),
        p.seed.to_string(),
        p.folds.to_string(),
    ]
}

const PROVENANCE_COLUMNS: [&str; 4] = ["registry_hash", "frozen_hash", "seed", "folds"];

fn write_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Full-precision CSV leaderboard.
pub fn render_csv(table: &Table) -> String {
    let mut header = vec!["rank".to_string(), "model_id".to_string()];
    header.extend(table.group_ids.iter().cloned());
    header.push("overall".into());
    header.extend(PROVENANCE_COLUMNS.map(String::from));
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.rank.to_string(), r.model_id.clone()];
            row.extend(r.groups.iter().map(|v| fmt_opt(*v)));
            row.push(r.overall.to_string());
            row.extend(provenance_cells(&table.provenance));
            row
        })
        .collect();
    write_csv(header, rows)
}

#[derive(Serialize)]
struct JsonRow<'a> {
    rank: usize,
    model_id: &'a str,
    groups: BTreeMap<&'a str, Option<f64>>,
    overall: f64,
    #[serde(flatten)]
    provenance: &'a Provenance,
}

pub fn render_json_lines(table: &Table) -> String {
    table
        .rows
        .iter()
        .map(|r| {
            json_line(&JsonRow {
                rank: r.rank,
                model_id: &r.model_id,
                groups: table
                    .group_ids
                    .iter()
                    .map(String::as_str)
                    .zip(r.groups.iter().copied())
                    .collect(),
                overall: r.overall,
                provenance: &table.provenance,
            })
        })
        .collect()
}

pub fn render(table: &Table, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(table),
        ReportFormat::Markdown => render_markdown(table),
        ReportFormat::JsonLines => render_json_lines(table),
    }
}

pub fn leaderboard_file(format: ReportFormat) -> String {
    format!("leaderboard.{}", format.extension())
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), InputError> {
    fs::write(path, contents).map_err(|e| InputError::new(path, e))
}

/// Writes `scored.jsonl`, `model_scores.jsonl`, the leaderboard and
/// `run.json` into `out`.
pub fn write_score_outputs(
    out: &Path,
    run: &ScoreRun,
    summary: &RunSummary,
) -> Result<(), InputError> {
    fs::create_dir_all(out).map_err(|e| InputError::new(out, e))?;
    let p = &summary.provenance;
    let scored: String = run
        .samples
        .iter()
        .map(|s| {
            json_line(&ScoredLine {
                model_id: &s.model_id,
                sample_id: &s.sample_id,
                measurements: &s.measurements,
                desirability: &s.desirability,
                provenance: p,
            })
        })
        .collect();
    write_file(&out.join(SCORED_FILE), &scored)?;
    let lines = model_lines(run, p);
    let models: String = lines.iter().map(json_line).collect();
    write_file(&out.join(MODEL_SCORES_FILE), &models)?;
    let table = table_from_lines(&lines, &summary.group_ids, p);
    write_file(
        &out.join(leaderboard_file(summary.format)),
        &render(&table, summary.format),
    )?;
    let mut run_json = serde_json::to_string_pretty(summary).expect("run summary serializes");
    run_json.push('\n');
    write_file(&out.join(RUN_FILE), &run_json)
}

/// One `(metric, model, sample)` measurement for the distribution series.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScoredRecord {
    pub model_id: String,
    pub sample_id: String,
    pub measurements: BTreeMap<String, serde_json::Value>,
    pub desirability: BTreeMap<String, f64>,
}

fn raw_cell(v: Option<&serde_json::Value>) -> String {
    match v {
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(serde_json::Value::String(s)) => s.clone(),
        _ => String::new(),
    }
}

pub fn group_bars_csv(lines: &[ModelLine], group_ids: &[String], p: &Provenance) -> String {
    let mut header = vec![
        "model_id".to_string(),
        "group_id".to_string(),
        "value".to_string(),
    ];
    header.extend(PROVENANCE_COLUMNS.map(String::from));
    let mut rows = Vec::new();
    for l in lines {
        for g in group_ids {
            let mut row = vec![
                l.model_id.clone(),
                g.clone(),
                fmt_opt(l.groups.get(g).copied().flatten()),
            ];
            row.extend(provenance_cells(p));
            rows.push(row);
        }
    }
    write_csv(header, rows)
}

pub fn metric_distribution_csv(records: &[ScoredRecord], p: &Provenance) -> String {
    let mut header: Vec<String> = ["metric_id", "model_id", "sample_id", "raw", "desirability"]
        .map(String::from)
        .to_vec();
    header.extend(PROVENANCE_COLUMNS.map(String::from));
    let mut rows = Vec::new();
    let mut metrics: Vec<&String> = records.iter().flat_map(|r| r.desirability.keys()).collect();
    metrics.sort();
    metrics.dedup();
    for m in metrics {
        for r in records {
            if let Some(d) = r.desirability.get(m) {
                let mut row = vec![
                    m.clone(),
                    r.model_id.clone(),
                    r.sample_id.clone(),
                    raw_cell(r.measurements.get(m)),
                    d.to_string(),
                ];
                row.extend(provenance_cells(p));
                rows.push(row);
            }
        }
    }
    write_csv(header, rows)
}

/// Human-readable report: the leaderboard followed by per-metric model
/// desirability.
pub fn report_markdown(table: &Table, lines: &[ModelLine], summary: &RunSummary) -> String {
    let mut out = String::from("# Leaderboard\n\n");
    if table.rows.is_empty() {
        out.push_str("No ranked models.\n\n");
    }
    out.push_str(&render_markdown(table));
    let mut metrics: Vec<&String> = lines.iter().flat_map(|l| l.metrics.keys()).collect();
    metrics.sort();
    metrics.dedup();
    if !metrics.is_empty() {
        out.push_str("\n## Metric desirability\n\n| Model |");
        for m in &metrics {
            out.push_str(&format!(" {m} |"));
        }
        out.push_str("\n|---|");
        for _ in &metrics {
            out.push_str("---:|");
        }
        out.push('\n');
        let bests: Vec<Option<f64>> = metrics
            .iter()
            .map(|m| {
                column_best(
                    lines
                        .iter()
                        .map(|l| l.metrics.get(*m).map(|v| v.desirability)),
                )
            })
            .collect();
        for l in lines {
            out.push_str(&format!("| {} |", l.model_id));
            for (m, best) in metrics.iter().zip(&bests) {
                out.push_str(&format!(
                    " {} |",
                    cell(l.metrics.get(*m).map(|v| v.desirability), *best)
                ));
            }
            out.push('\n');
        }
    }
    if !summary.excluded_models.is_empty() {
        out.push_str(&format!(
            "\nExcluded (no available group): {}\n",
            summary.excluded_models.join(", ")
        ));
    }
    if !summary.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for w in &summary.warnings {
            out.push_str(&format!("- {w}\n"));
        }
    }
    out
}
