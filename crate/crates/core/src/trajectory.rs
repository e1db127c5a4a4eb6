//! Similarity between a generated and a ground-truth tracked 2D path.
//!
//! Three complementary distances are reported, all in pixels:
//!
//! * mean Euclidean distance (MED) between index-resampled paths,
//! * dynamic time warping (DTW) with the symmetric three-move step pattern,
//!   both as a total cost and divided by the number of aligned pairs,
//! * the discrete Fréchet distance, the smallest achievable worst-case gap
//!   over all monotone couplings.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory `{0}` has no points")]
    Empty(String),
    #[error("trajectory `{0}` has a non-finite coordinate")]
    NonFinite(String),
    #[error("resample length must be at least 2, got {0}")]
    BadLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    EndEffector,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub track_id: String,
    pub entity: Entity,
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn new(track_id: impl Into<String>, entity: Entity, points: Vec<Point>) -> Self {
        Trajectory {
            track_id: track_id.into(),
            entity,
            points,
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.points.is_empty() {
            return Err(TrajectoryError::Empty(self.track_id.clone()));
        }
        if self
            .points
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(TrajectoryError::NonFinite(self.track_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryScore {
    pub med: f64,
    pub dtw_total: f64,
    pub dtw_normalized: f64,
    pub frechet: f64,
}

/// Piecewise-linear resampling at `n` uniformly spaced index positions.
pub fn resample(traj: &Trajectory, n: usize) -> Result<Trajectory, TrajectoryError> {
    if n < 2 {
        return Err(TrajectoryError::BadLength(n));
    }
    traj.validate()?;
    let pts = &traj.points;
    let last = pts.len() - 1;
    let points = (0..n)
        .map(|k| {
            if last == 0 {
                return pts[0];
            }
            if k == n - 1 {
                return pts[last];
            }
            let pos = k as f64 * last as f64 / (n - 1) as f64;
            let i = (pos.floor() as usize).min(last - 1);
            let t = pos - i as f64;
            let (a, b) = (pts[i], pts[i + 1]);
            Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        })
        .collect();
    Ok(Trajectory {
        track_id: traj.track_id.clone(),
        entity: traj.entity,
        points,
    })
}

pub fn med(a: &Trajectory, b: &Trajectory, n: usize) -> Result<f64, TrajectoryError> {
    let ra = resample(a, n)?;
    let rb = resample(b, n)?;
    let sum: f64 = ra
        .points
        .iter()
        .zip(&rb.points)
        .map(|(p, q)| p.distance(q))
        .sum();
    Ok(sum / n as f64)
}

/// Resample length used when none is given: the longer input, at least 2.
pub fn default_med_length(a: &Trajectory, b: &Trajectory) -> usize {
    a.points.len().max(b.points.len()).max(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwResult {
    pub total: f64,
    /// Number of aligned pairs on the optimal path.
    pub steps: usize,
    pub normalized: f64,
}

/// Classic DTW. Among optimal-cost paths the one with fewest aligned pairs
/// determines the normalisation.
pub fn dtw(a: &Trajectory, b: &Trajectory) -> Result<DtwResult, TrajectoryError> {
    a.validate()?;
    b.validate()?;
    let (n, m) = (a.points.len(), b.points.len());
    // (cost, steps) per cell, row-major
    let mut table = vec![(f64::INFINITY, usize::MAX); n * m];
    for i in 0..n {
        for j in 0..m {
            let local = a.points[i].distance(&b.points[j]);
            let prev = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                let mut consider = |c: (f64, usize)| {
                    if c.0 < best.0 || (c.0 == best.0 && c.1 < best.1) {
                        best = c;
                    }
                };
                if i > 0 && j > 0 {
                    consider(table[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    consider(table[(i - 1) * m + j]);
                }
                if j > 0 {
                    consider(table[i * m + j - 1]);
                }
                best
            };
            table[i * m + j] = (prev.0 + local, prev.1 + 1);
        }
    }
    let (total, steps) = table[n * m - 1];
    Ok(DtwResult {
        total,
        steps,
        normalized: total / steps as f64,
    })
}

pub fn frechet(a: &Trajectory, b: &Trajectory) -> Result<f64, TrajectoryError> {
    a.validate()?;
    b.validate()?;
    let (n, m) = (a.points.len(), b.points.len());
    let mut c = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = a.points[i].distance(&b.points[j]);
            let reach = match (i, j) {
                (0, 0) => d,
                (0, _) => c[j - 1],
                (_, 0) => c[(i - 1) * m],
                _ => c[(i - 1) * m + j]
                    .min(c[i * m + j - 1])
                    .min(c[(i - 1) * m + j - 1]),
            };
            c[i * m + j] = d.max(reach);
        }
    }
    Ok(c[n * m - 1])
}

/// All three distances; `med_length` defaults to [`default_med_length`].
pub fn score(
    generated: &Trajectory,
    reference: &Trajectory,
    med_length: Option<usize>,
) -> Result<TrajectoryScore, TrajectoryError> {
    let n = med_length.unwrap_or_else(|| default_med_length(generated, reference));
    let d = dtw(generated, reference)?;
    Ok(TrajectoryScore {
        med: med(generated, reference, n)?,
        dtw_total: d.total,
        dtw_normalized: d.normalized,
        frechet: frechet(generated, reference)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(pts: &[(f64, f64)]) -> Trajectory {
        Trajectory::new(
            "t",
            Entity::Object,
            pts.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        )
    }

    #[test]
    fn resample_cases() {
        let r = resample(&traj(&[(0.0, 0.0), (2.0, 0.0)]), 3).unwrap();
        assert_eq!(r.points, traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]).points);

        let t = traj(&[(1.0, 2.0), (3.0, -1.0), (4.0, 4.0)]);
        assert_eq!(resample(&t, 3).unwrap().points, t.points);

        // index positions 0, .5, 1, 1.5, 2 evaluated by hand
        let r = resample(&traj(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]), 5).unwrap();
        assert_eq!(
            r.points,
            traj(&[(0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (1.0, 0.5), (1.0, 1.0)]).points
        );

        let single = resample(&traj(&[(3.0, 3.0)]), 4).unwrap();
        assert_eq!(single.points, vec![Point::new(3.0, 3.0); 4]);
        assert_eq!(resample(&t, 1), Err(TrajectoryError::BadLength(1)));
        assert!(matches!(
            resample(&traj(&[]), 3),
            Err(TrajectoryError::Empty(_))
        ));
    }

    #[test]
    fn med_cases() {
        let a = traj(&[(0.0, 0.0), (2.0, 0.0)]);
        let b = traj(&[(0.0, 1.0), (2.0, 1.0)]);
        assert_eq!(med(&a, &a, 2).unwrap(), 0.0);
        assert_eq!(med(&a, &b, 2).unwrap(), 1.0);
        assert!(med(&a, &b, 0).is_err());
    }

    #[test]
    fn dtw_cases() {
        let a = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let r = dtw(&a, &b).unwrap();
        assert_eq!(r.total, 1.0);
        assert_eq!(r.steps, 3);
        let same = dtw(&b, &b).unwrap();
        assert_eq!((same.total, same.normalized), (0.0, 0.0));
    }

    #[test]
    fn frechet_cases() {
        assert_eq!(
            frechet(&traj(&[(0.0, 0.0)]), &traj(&[(3.0, 4.0)])).unwrap(),
            5.0
        );
        let a = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = traj(&[(0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(frechet(&a, &b).unwrap(), 1.0);
        assert_eq!(frechet(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let bad = traj(&[(0.0, f64::NAN)]);
        assert!(matches!(
            dtw(&bad, &bad),
            Err(TrajectoryError::NonFinite(_))
        ));
    }

    fn arb_traj(max: usize) -> impl Strategy<Value = Trajectory> {
        proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..=max)
            .prop_map(|v| traj(&v))
    }

    proptest! {
        #[test]
        fn symmetric(a in arb_traj(12), b in arb_traj(12)) {
            prop_assert_eq!(dtw(&a, &b).unwrap().total, dtw(&b, &a).unwrap().total);
            prop_assert_eq!(frechet(&a, &b).unwrap(), frechet(&b, &a).unwrap());
        }

        #[test]
        fn translation_invariant(a in arb_traj(10), b in arb_traj(10), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let shift = |t: &Trajectory| traj(&t.points.iter().map(|p| (p.x + dx, p.y + dy)).collect::<Vec<_>>());
            let (s0, s1) = (score(&a, &b, None).unwrap(), score(&shift(&a), &shift(&b), None).unwrap());
            prop_assert!((s0.med - s1.med).abs() < 1e-9);
            prop_assert!((s0.dtw_total - s1.dtw_total).abs() < 1e-9);
            prop_assert!((s0.frechet - s1.frechet).abs() < 1e-9);
        }

        #[test]
        fn identity_gives_zero(a in arb_traj(10)) {
            let s = score(&a, &a, None).unwrap();
            prop_assert_eq!((s.med, s.dtw_total, s.dtw_normalized, s.frechet), (0.0, 0.0, 0.0, 0.0));
        }

        #[test]
        fn resample_identity(a in arb_traj(10)) {
            prop_assume!(a.points.len() >= 2);
            let r = resample(&a, a.points.len()).unwrap();
            for (p, q) in r.points.iter().zip(&a.points) {
                prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
            }
        }
    }
}
