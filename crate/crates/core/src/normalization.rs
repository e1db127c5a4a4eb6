//! Raw measurement → desirability score in [0, 100].
//!
//! A raw value is clamped to the metric's anchors, mapped linearly onto
//! [0, 1] (flipped for lower-is-better metrics), passed through one of three
//! single-parameter increasing maps, and scaled by 100.

use serde::Serialize;

use crate::registry::{Direction, Family, MetricSpec};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NormalizationError {
    #[error("clip bounds out of order: {low} > {high}")]
    InvertedBounds { low: f64, high: f64 },
    #[error("mapping parameter must be positive and finite, got {0}")]
    NonPositiveTheta(f64),
    #[error("epsilon must lie in (0, 0.5), got {0}")]
    BadEpsilon(f64),
    #[error("measurement is NaN")]
    NotANumber,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesirabilityScore {
    pub metric_id: String,
    pub value: f64,
}

pub fn clip(u: f64, low: f64, high: f64) -> Result<f64, NormalizationError> {
    if low > high {
        return Err(NormalizationError::InvertedBounds { low, high });
    }
    Ok(u.max(low).min(high))
}

/// Anchored pre-scale onto [0, 1]. Infinite inputs saturate at the anchors.
pub fn prescale(x: f64, spec: &MetricSpec) -> Result<f64, NormalizationError> {
    if x.is_nan() {
        return Err(NormalizationError::NotANumber);
    }
    let clipped = clip(x, spec.low, spec.high)?;
    let unit = (clipped - spec.low) / (spec.high - spec.low);
    Ok(match spec.direction {
        Direction::Hib => unit,
        Direction::Lib => 1.0 - unit,
    })
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

/// Applies the monotone family with parameter `theta` to a pre-scaled value.
/// `epsilon` only matters for the logit-temperature family, where the input
/// is clamped to `[epsilon, 1 - epsilon]` inside the logit.
pub fn apply_family(
    xhat: f64,
    family: Family,
    theta: f64,
    epsilon: f64,
) -> Result<f64, NormalizationError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(NormalizationError::NonPositiveTheta(theta));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(NormalizationError::BadEpsilon(epsilon));
    }
    Ok(match family {
        Family::Gamma => xhat.powf(theta),
        Family::LogitT => {
            let inner = clip(xhat, epsilon, 1.0 - epsilon)?;
            sigmoid(logit(inner) / theta)
        }
        Family::TanhKappa => 0.5 * ((theta * (2.0 * xhat - 1.0)).tanh() + 1.0),
    })
}

pub fn desirability(
    x: f64,
    spec: &MetricSpec,
    epsilon: f64,
) -> Result<DesirabilityScore, NormalizationError> {
    let xhat = prescale(x, spec)?;
    let mapped = apply_family(xhat, spec.family, spec.theta, epsilon)?;
    Ok(DesirabilityScore {
        metric_id: spec.id.clone(),
        value: 100.0 * mapped,
    })
}
