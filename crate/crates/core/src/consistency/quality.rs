//! PSNR and single-scale SSIM on 8-bit frames.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("frame size mismatch: {0}x{1}x{2} vs {3}x{4}x{5}")]
    SizeMismatch(usize, usize, usize, usize, usize, usize),
    #[error("frame {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("frame buffer holds {got} bytes, expected {expected}")]
    BadBuffer { expected: usize, got: usize },
    #[error("frame sequences differ in length: {0} vs {1}")]
    SequenceLength(usize, usize),
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Interleaved 8-bit frame (`channels` values per pixel, row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, QualityError> {
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(QualityError::BadBuffer {
                expected,
                got: data.len(),
            });
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Frame {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    fn plane(&self, channel: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .map(|&v| f64::from(v))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub reference: &'a Frame,
    pub test: &'a Frame,
}

impl FramePair<'_> {
    fn check(&self) -> Result<(), QualityError> {
        let (a, b) = (self.reference.dims(), self.test.dims());
        if a != b {
            return Err(QualityError::SizeMismatch(a.0, a.1, a.2, b.0, b.1, b.2));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// Zero mean squared error.
    Infinite,
}

impl Psnr {
    fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Finite(10.0 * (PEAK * PEAK / mse).log10())
        }
    }

    /// Decibel value; the infinite sentinel becomes `f64::INFINITY`, which the
    /// anchored pre-scale truncates to the upper anchor.
    pub fn db(&self) -> f64 {
        match self {
            Psnr::Finite(v) => *v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

fn squared_error(pair: &FramePair<'_>) -> f64 {
    pair.reference
        .data
        .iter()
        .zip(&pair.test.data)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum()
}

pub fn psnr(pair: FramePair<'_>) -> Result<Psnr, QualityError> {
    pair.check()?;
    let n = pair.reference.data.len() as f64;
    Ok(Psnr::from_mse(squared_error(&pair) / n))
}

/// PSNR of a whole clip from the mean squared error pooled over every frame.
pub fn psnr_sequence(reference: &[Frame], test: &[Frame]) -> Result<Psnr, QualityError> {
    if reference.len() != test.len() {
        return Err(QualityError::SequenceLength(reference.len(), test.len()));
    }
    if reference.is_empty() {
        return Err(QualityError::EmptySequence);
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for (r, t) in reference.iter().zip(test) {
        let pair = FramePair {
            reference: r,
            test: t,
        };
        pair.check()?;
        sse += squared_error(&pair);
        count += r.data.len();
    }
    Ok(Psnr::from_mse(sse / count as f64))
}

/// Normalised 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable "valid" Gaussian filtering of a plane.
fn filter_valid(plane: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (width - k + 1, height - k + 1);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let line = &plane[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], width: usize, height: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let product =
        |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(a, width, height, taps);
    let mu_b = filter_valid(b, width, height, taps);
    let aa = filter_valid(&product(a, a), width, height, taps);
    let bb = filter_valid(&product(b, b), width, height, taps);
    let ab = filter_valid(&product(a, b), width, height, taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / n as f64
}

/// Mean SSIM over all valid 11×11 windows, averaged over channels.
pub fn ssim(pair: FramePair<'_>) -> Result<f64, QualityError> {
    pair.check()?;
    let f = pair.reference;
    if f.width < SSIM_WINDOW || f.height < SSIM_WINDOW {
        return Err(QualityError::TooSmall {
            width: f.width,
            height: f.height,
            window: SSIM_WINDOW,
        });
    }
    let taps = gaussian_window();
    let sum: f64 = (0..f.channels)
        .map(|c| ssim_plane(&f.plane(c), &pair.test.plane(c), f.width, f.height, &taps))
        .sum();
    Ok(sum / f.channels as f64)
}

/// Mean per-frame SSIM of a clip.
pub fn ssim_sequence(reference: &[Frame], test: &[Frame]) -> Result<f64, QualityError> {
    if reference.len() != test.len() {
        return Err(QualityError::SequenceLength(reference.len(), test.len()));
    }
    if reference.is_empty() {
        return Err(QualityError::EmptySequence);
    }
    let mut sum = 0.0;
    for (r, t) in reference.iter().zip(test) {
        sum += ssim(FramePair {
            reference: r,
            test: t,
        })?;
    }
    Ok(sum / reference.len() as f64)
}

/// Sidecar header for a raw planar dump: `frames` frames, each stored as
/// `channels` consecutive `width × height` planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default = "three")]
    pub channels: usize,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    /// Lossless image sequence, one file per frame.
    Png(Vec<PathBuf>),
    /// Raw planar dump; the header is read from `<path>.json`.
    Raw(PathBuf),
}

fn io_err(path: &Path, e: impl ToString) -> QualityError {
    QualityError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads a clip. Relative paths are resolved against `base`.
pub fn load_frames(source: &FrameSource, base: &Path) -> Result<Vec<Frame>, QualityError> {
    match source {
        FrameSource::Png(paths) => paths
            .iter()
            .map(|p| {
                let path = base.join(p);
                let img = image::open(&path).map_err(|e| io_err(&path, e))?.to_rgb8();
                let (w, h) = img.dimensions();
                Frame::new(w as usize, h as usize, 3, img.into_raw())
            })
            .collect(),
        FrameSource::Raw(p) => {
            let path = base.join(p);
            let mut header_path = path.clone().into_os_string();
            header_path.push(".json");
            let header_path = PathBuf::from(header_path);
            let text = fs::read_to_string(&header_path).map_err(|e| io_err(&header_path, e))?;
            let header: RawHeader =
                serde_json::from_str(&text).map_err(|e| io_err(&header_path, e))?;
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            let plane = header.width * header.height;
            let per_frame = plane * header.channels;
            if bytes.len() != per_frame * header.frames {
                return Err(io_err(
                    &path,
                    format!(
                        "expected {} bytes for {} frames, found {}",
                        per_frame * header.frames,
                        header.frames,
                        bytes.len()
                    ),
                ));
            }
            Ok(bytes
                .chunks_exact(per_frame)
                .map(|chunk| {
                    let mut data = vec![0u8; per_frame];
                    for c in 0..header.channels {
                        for i in 0..plane {
                            data[i * header.channels + c] = chunk[c * plane + i];
                        }
                    }
                    Frame {
                        width: header.width,
                        height: header.height,
                        channels: header.channels,
                        data,
                    }
                })
                .collect())
        }
    }
}
