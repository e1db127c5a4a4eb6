use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConsistencyError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {frame} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        frame: usize,
        expected: usize,
        got: usize,
    },
    #[error("frame {0} is a zero vector")]
    ZeroVector(usize),
    #[error("frame {0} has a non-finite component")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Arm,
    Object,
    Background,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Arm, Region::Object, Region::Background];

    pub fn name(&self) -> &'static str {
        match self {
            Region::Arm => "arm",
            Region::Object => "object",
            Region::Background => "background",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// Mean cosine between consecutive frames.
    Adjacent,
    /// Mean cosine between the first frame and every later frame.
    AnchorFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEmbeddingSequence {
    pub region: Region,
    pub frames: Vec<Vec<f32>>,
}

impl RegionEmbeddingSequence {
    fn validate(&self) -> Result<(), ConsistencyError> {
        if self.frames.len() < 2 {
            return Err(ConsistencyError::TooFewFrames(self.frames.len()));
        }
        let dim = self.frames[0].len();
        for (t, v) in self.frames.iter().enumerate() {
            if v.len() != dim {
                return Err(ConsistencyError::DimensionMismatch {
                    frame: t,
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(ConsistencyError::NonFinite(t));
            }
            if v.iter().all(|&c| c == 0.0) {
                return Err(ConsistencyError::ZeroVector(t));
            }
        }
        Ok(())
    }
}

/// Cosine similarity accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn regional_consistency(
    seq: &RegionEmbeddingSequence,
    mode: ConsistencyMode,
) -> Result<f64, ConsistencyError> {
    seq.validate()?;
    let frames = &seq.frames;
    let sims: Vec<f64> = match mode {
        ConsistencyMode::Adjacent => frames.windows(2).map(|w| cosine(&w[0], &w[1])).collect(),
        ConsistencyMode::AnchorFirst => frames[1..].iter().map(|v| cosine(&frames[0], v)).collect(),
    };
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}
