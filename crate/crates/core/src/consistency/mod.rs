//! Temporal consistency of masked regions and native frame-quality metrics.

mod quality;
mod regional;

pub use quality::{
    gaussian_window, load_frames, psnr, psnr_sequence, ssim, ssim_sequence, Frame, FramePair,
    FrameSource, Psnr, QualityError, RawHeader, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use regional::{
    cosine, regional_consistency, ConsistencyError, ConsistencyMode, Region,
    RegionEmbeddingSequence,
};
