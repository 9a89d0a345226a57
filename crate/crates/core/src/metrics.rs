//! Desk-scale video quality analogs: subject consistency and temporal flicker.
//!
//! These mirror the shape of the usual video-benchmark metrics but use the block-pooled features
//! of [`crate::reward`], so they are analogs, not drop-in replacements.

use crate::reward::FeatureExtractor;
use crate::{Error, Result, Scalar, Video};

fn require_two<T: Scalar>(video: &Video<T>) -> Result<()> {
    if video.frames() < 2 {
        return Err(Error::InvalidArgument("metric needs at least two frames".into()));
    }
    Ok(())
}

/// Mean over frames `i ≥ 2` of `(⟨d_1, d_i⟩ + ⟨d_{i−1}, d_i⟩)/2`, mapped from `[−1, 1]` to `[0, 1]`.
pub fn subject_consistency<T: Scalar>(video: &Video<T>) -> Result<f64> {
    require_two(video)?;
    let feats = FeatureExtractor::default().extract_clip(video)?;
    let total: f64 = (1..feats.len())
        .map(|i| (feats[0].cosine(&feats[i]) + feats[i - 1].cosine(&feats[i])).to_f64_lossy() / 2.0)
        .sum();
    let mean = total / (feats.len() - 1) as f64;
    Ok((mean + 1.0) / 2.0)
}

/// `1 − mean |v_i − v_{i−1}|` over all pixels of adjacent frames, clamped to `[0, 1]`.
pub fn temporal_flicker<T: Scalar>(video: &Video<T>) -> Result<f64> {
    require_two(video)?;
    let n = video.frame_len();
    let mut total = 0.0;
    for f in 1..video.frames() {
        total += video
            .frame_slice(f)
            .iter()
            .zip(video.frame_slice(f - 1))
            .map(|(&a, &b)| (a - b).abs().to_f64_lossy())
            .sum::<f64>();
    }
    let mean = total / ((video.frames() - 1) * n) as f64;
    Ok((1.0 - mean).clamp(0.0, 1.0))
}
