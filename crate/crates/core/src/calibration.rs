//! Grid-search calibration of the mapping parameter θ against human ratings.
//!
//! For every candidate θ the mapped development scores are correlated with
//! the ratings on each held-out fold; fold correlations are averaged in
//! Fisher-z space and the best candidate is frozen. Exact ties fall back to
//! the full-set Spearman correlation, then to the smaller θ.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::normalization::{apply_family, NormalizationError};
use crate::registry::{Family, FrozenMetric};

/// Correlations at or beyond this magnitude are clamped before `atanh`.
pub const CORRELATION_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CalibrationError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("correlation undefined for a constant sequence")]
    Constant,
    #[error("need at least {needed} samples for {folds}-fold calibration, got {got}")]
    TooFewSamples {
        needed: usize,
        folds: usize,
        got: usize,
    },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("empty candidate grid")]
    EmptyGrid,
    #[error("{skipped} of {folds} folds are degenerate (constant held-out values)")]
    DegenerateFolds { skipped: usize, folds: usize },
    #[error("calibration sample has non-finite value or prescaled value outside [0, 1]")]
    BadSample,
    #[error(transparent)]
    Mapping(#[from] NormalizationError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub prescaled: f64,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub theta: f64,
    pub fisher_z_mean: f64,
    pub spearman: f64,
    pub skipped_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub metric_id: String,
    pub family: Family,
    pub theta_star: f64,
    pub cv_fisher_z_mean: f64,
    pub spearman: f64,
    pub folds: usize,
    pub skipped_folds: usize,
    pub samples: usize,
    /// Folds are never stratified by model identity.
    pub stratified: bool,
    pub grid: Vec<f64>,
    pub candidates: Vec<CandidateScore>,
}

impl CalibrationResult {
    pub fn frozen(&self) -> FrozenMetric {
        FrozenMetric {
            metric_id: self.metric_id.clone(),
            family: self.family,
            theta: self.theta_star,
            cv_fisher_z_mean: self.cv_fisher_z_mean,
            spearman: self.spearman,
            folds: self.folds,
            skipped_folds: self.skipped_folds,
            samples: self.samples,
            stratified: self.stratified,
            grid: self.grid.clone(),
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), CalibrationError> {
    if x.len() != y.len() {
        return Err(CalibrationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CalibrationError::TooShort(x.len()));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CalibrationError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CalibrationError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, CalibrationError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherZ {
    pub mean: f64,
    /// Number of inputs that had to be clamped away from ±1.
    pub clamped: usize,
}

/// Mean of `atanh(r)`; not transformed back to correlation scale.
pub fn fisher_z_mean(correlations: &[f64]) -> FisherZ {
    let mut clamped = 0;
    let mut sum = 0.0;
    for &r in correlations {
        let r = if r.abs() >= CORRELATION_CLAMP {
            clamped += 1;
            CORRELATION_CLAMP.copysign(r)
        } else {
            r
        };
        sum += r.atanh();
    }
    FisherZ {
        mean: if correlations.is_empty() {
            f64::NAN
        } else {
            sum / correlations.len() as f64
        },
        clamped,
    }
}

/// `count` log-spaced points from `low` to `high` inclusive.
pub fn log_grid(low: f64, high: f64, count: usize) -> Vec<f64> {
    let (a, b) = (low.log2(), high.log2());
    (0..count)
        .map(|i| {
            let t = a + (b - a) * i as f64 / (count - 1) as f64;
            t.exp2()
        })
        .collect()
}

pub fn default_grid(family: Family) -> Vec<f64> {
    match family {
        Family::Gamma | Family::LogitT => log_grid(0.25, 4.0, 17),
        Family::TanhKappa => log_grid(0.5, 4.0, 15),
    }
}

/// Seeded shuffle split into `k` near-equal folds; the first `n % k` folds
/// hold one extra index.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    folds
}

fn compare_candidates(a: &CandidateScore, b: &CandidateScore) -> Ordering {
    a.fisher_z_mean
        .total_cmp(&b.fisher_z_mean)
        .then(a.spearman.total_cmp(&b.spearman))
        .then(b.theta.total_cmp(&a.theta))
}

pub fn calibrate_metric(
    metric_id: &str,
    samples: &[CalibrationSample],
    family: Family,
    grid: &[f64],
    folds: usize,
    seed: u64,
    epsilon: f64,
) -> Result<CalibrationResult, CalibrationError> {
    if folds < 2 {
        return Err(CalibrationError::BadFoldCount(folds));
    }
    if grid.is_empty() {
        return Err(CalibrationError::EmptyGrid);
    }
    if samples.len() < 2 * folds {
        return Err(CalibrationError::TooFewSamples {
            needed: 2 * folds,
            folds,
            got: samples.len(),
        });
    }
    if samples
        .iter()
        .any(|s| !s.rating.is_finite() || !(0.0..=1.0).contains(&s.prescaled))
    {
        return Err(CalibrationError::BadSample);
    }

    let assignment = fold_assignment(samples.len(), folds, seed);
    let ratings: Vec<f64> = samples.iter().map(|s| s.rating).collect();

    let mut candidates = Vec::with_capacity(grid.len());
    for &theta in grid {
        let mapped = samples
            .iter()
            .map(|s| apply_family(s.prescaled, family, theta, epsilon))
            .collect::<Result<Vec<_>, _>>()?;
        let mut fold_r = Vec::with_capacity(folds);
        let mut skipped = 0;
        for fold in &assignment {
            let xs: Vec<f64> = fold.iter().map(|&i| mapped[i]).collect();
            let ys: Vec<f64> = fold.iter().map(|&i| ratings[i]).collect();
            match pearson(&xs, &ys) {
                Ok(r) => fold_r.push(r),
                Err(CalibrationError::Constant) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if 2 * skipped > folds {
            return Err(CalibrationError::DegenerateFolds { skipped, folds });
        }
        let spearman = spearman(&mapped, &ratings).unwrap_or(f64::NEG_INFINITY);
        candidates.push(CandidateScore {
            theta,
            fisher_z_mean: fisher_z_mean(&fold_r).mean,
            spearman,
            skipped_folds: skipped,
        });
    }

    let best = candidates
        .iter()
        .max_by(|a, b| compare_candidates(a, b))
        .expect("grid is nonempty")
        .clone();

    Ok(CalibrationResult {
        metric_id: metric_id.to_string(),
        family,
        theta_star: best.theta,
        cv_fisher_z_mean: best.fisher_z_mean,
        spearman: best.spearman,
        folds,
        skipped_folds: best.skipped_folds,
        samples: samples.len(),
        stratified: false,
        grid: grid.to_vec(),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Covariance / variance from the textbook two-pass formula with
    /// population normalisation, written independently of `pearson`.
    fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 1.0, 4.0, 9.0];
        // centred sums: sxy = 15, sxx = 5, syy = 49
        let expected = textbook_pearson(&x, &y);
        assert!((expected - 15.0 / 245f64.sqrt()).abs() < 1e-12);
        assert!((pearson(&x, &y).unwrap() - expected).abs() < 1e-12);
        assert_eq!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(CalibrationError::Constant)
        );
        assert_eq!(pearson(&[1.0], &[1.0]), Err(CalibrationError::TooShort(1)));
    }

    fn rank_formula_spearman(x: &[f64], y: &[f64]) -> f64 {
        // valid only without ties
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| 1.0 + v.iter().filter(|b| *b < a).count() as f64)
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        assert!((rank_formula_spearman(&x, &y) - 0.8).abs() < 1e-15);
        assert!((spearman(&x, &y).unwrap() - 0.8).abs() < 1e-12);
        let inc: Vec<f64> = x.iter().map(|v| v * v * v + 10.0).collect();
        assert!((spearman(&x, &inc).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[2.0; 4]), Err(CalibrationError::Constant));
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn fisher_z_cases() {
        assert_eq!(fisher_z_mean(&[0.0, 0.0, 0.0]).mean, 0.0);
        let r: f64 = 0.3;
        assert!((fisher_z_mean(&[r, r]).mean - r.atanh()).abs() < 1e-15);
        let direct = (0.5f64.atanh() + 0.8f64.atanh()) / 2.0;
        // 0.5*(ln 3) and 0.5*(ln 9): mean = 0.5*ln(27)/2
        assert!((direct - 0.25 * 27f64.ln()).abs() < 1e-12);
        assert!((fisher_z_mean(&[0.5, 0.8]).mean - direct).abs() < 1e-15);
        let z = fisher_z_mean(&[1.0, -1.0, 0.2]);
        assert_eq!(z.clamped, 2);
        assert!(z.mean.is_finite());
    }

    #[test]
    fn grids() {
        let g = default_grid(Family::Gamma);
        assert_eq!(g.len(), 17);
        assert_eq!(g[0], 0.25);
        assert_eq!(g[8], 1.0);
        assert_eq!(g[12], 2.0);
        assert_eq!(g[16], 4.0);
        let k = default_grid(Family::TanhKappa);
        assert_eq!(k.len(), 15);
        assert_eq!((k[0], k[14]), (0.5, 4.0));
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 2f64.powf(0.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_are_near_equal_and_cover() {
        let folds = fold_assignment(23, 5, 9);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(folds, fold_assignment(23, 5, 9));
    }

    fn synthetic(n: usize, rating: impl Fn(f64) -> f64) -> Vec<CalibrationSample> {
        (0..n)
            .map(|i| {
                // deterministic, non-uniform spread over [0, 1]
                let x = ((i * 37 + 11) % n) as f64 / (n - 1) as f64;
                CalibrationSample {
                    prescaled: x,
                    rating: rating(x),
                }
            })
            .collect()
    }

    #[test]
    fn recovers_quadratic_and_linear() {
        let grid = default_grid(Family::Gamma);
        let quad = synthetic(40, |x| 100.0 * x * x);
        let res = calibrate_metric("m", &quad, Family::Gamma, &grid, 5, 1, 1e-6).unwrap();
        assert_eq!(res.theta_star, 2.0);
        let lin = synthetic(40, |x| 100.0 * x);
        let res = calibrate_metric("m", &lin, Family::Gamma, &[0.5, 1.0, 2.0], 5, 1, 1e-6).unwrap();
        assert_eq!(res.theta_star, 1.0);
    }

    #[test]
    fn affine_ratings_keep_theta() {
        let grid = default_grid(Family::Gamma);
        let a = synthetic(30, |x| 100.0 * x.powf(1.5) + (x * 13.0).sin());
        let b: Vec<_> = a
            .iter()
            .map(|s| CalibrationSample {
                prescaled: s.prescaled,
                rating: 2.0 * s.rating + 3.0,
            })
            .collect();
        let ra = calibrate_metric("m", &a, Family::Gamma, &grid, 5, 3, 1e-6).unwrap();
        let rb = calibrate_metric("m", &b, Family::Gamma, &grid, 5, 3, 1e-6).unwrap();
        assert_eq!(ra.theta_star, rb.theta_star);
    }

    #[test]
    fn tie_break_prefers_smaller_theta() {
        // Two-valued inputs: every θ yields fold correlations of exactly 1
        // and a full-set Spearman of 1, so only the θ rule can decide.
        let samples: Vec<_> = (0..20)
            .map(|i| {
                let x = (i % 2) as f64;
                CalibrationSample {
                    prescaled: x,
                    rating: x,
                }
            })
            .collect();
        let folds = fold_assignment(20, 2, 0);
        // both folds must contain both classes for the correlation to exist
        assert!(folds
            .iter()
            .all(|f| f.iter().any(|i| i % 2 == 0) && f.iter().any(|i| i % 2 == 1)));
        let res = calibrate_metric(
            "m",
            &samples,
            Family::TanhKappa,
            &[2.0, 0.5, 1.0],
            2,
            0,
            1e-6,
        )
        .unwrap();
        assert_eq!(res.theta_star, 0.5);
    }

    #[test]
    fn error_paths() {
        let s = synthetic(6, |x| x);
        assert!(matches!(
            calibrate_metric("m", &s, Family::Gamma, &[1.0], 5, 0, 1e-6),
            Err(CalibrationError::TooFewSamples { .. })
        ));
        assert_eq!(
            calibrate_metric("m", &s, Family::Gamma, &[], 2, 0, 1e-6),
            Err(CalibrationError::EmptyGrid)
        );
        let flat: Vec<_> = (0..10)
            .map(|i| CalibrationSample {
                prescaled: i as f64 / 9.0,
                rating: 3.0,
            })
            .collect();
        assert!(matches!(
            calibrate_metric("m", &flat, Family::Gamma, &[1.0], 2, 0, 1e-6),
            Err(CalibrationError::DegenerateFolds { .. })
        ));
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_increasing_maps(
            xs in proptest::collection::vec(-50.0f64..50.0, 3..20),
            ys in proptest::collection::vec(-50.0f64..50.0, 3..20),
        ) {
            let n = xs.len().min(ys.len());
            let (x, y) = (&xs[..n], &ys[..n]);
            if let Ok(base) = spearman(x, y) {
                let tx: Vec<f64> = x.iter().map(|v| (v / 10.0).sinh() * 3.0 + 1.0).collect();
                let ty: Vec<f64> = y.iter().map(|v| v.powi(3)).collect();
                let t = spearman(&tx, &ty).unwrap();
                prop_assert!((base - t).abs() < 1e-12);
            }
        }

        #[test]
        fn selection_matches_back_transformed_selection(
            rs in proptest::collection::vec(
                proptest::collection::vec(-0.99f64..0.99, 5), 2..8)
        ) {
            let means: Vec<f64> = rs.iter().map(|c| fisher_z_mean(c).mean).collect();
            let back: Vec<f64> = means.iter().map(|m| m.tanh()).collect();
            let argmax = |v: &[f64]| {
                v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap()
            };
            prop_assert_eq!(argmax(&means), argmax(&back));
        }

        #[test]
        fn calibration_is_deterministic(seed in 0u64..1000) {
            let s = synthetic(25, |x| (x * 7.0).sin() + x);
            let grid = default_grid(Family::LogitT);
            let a = calibrate_metric("m", &s, Family::LogitT, &grid, 5, seed, 1e-6).unwrap();
            let b = calibrate_metric("m", &s, Family::LogitT, &grid, 5, seed, 1e-6).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
