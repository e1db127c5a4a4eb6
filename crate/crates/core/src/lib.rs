//! Deterministic scoring engine for embodied world-model video benchmarks.
//!
//! Raw per-sample measurements (ingested judge scores, trajectory distances,
//! plan scores, regional consistency, PSNR/SSIM) are normalised into
//! desirability scores, averaged per metric group and combined into a ranked
//! leaderboard.

pub mod aggregation;
pub mod calibration;
pub mod cli;
pub mod consistency;
pub mod ingest;
pub mod normalization;
pub mod output;
pub mod pipeline;
pub mod plan;
pub mod registry;
pub mod trajectory;
