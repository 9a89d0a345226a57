//! Frame features and the consistency rewards used to rank candidate noises.
//!
//! Features are block-pooled intensities: an 8×8 grid of block means, centred and normalized to
//! unit length. Cosine similarity between two frames is then a plain dot product.

use serde::{Deserialize, Serialize};

use crate::{Clip, Error, Frame, Result, Scalar};

pub const DEFAULT_GRID: usize = 8;

/// Unit-norm frame embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVec<T> {
    values: Vec<T>,
    degenerate: bool,
}

impl<T: Scalar> FeatureVec<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// True when the frame had no spatial variation and the vector is the fixed fallback axis.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn cosine(&self, other: &FeatureVec<T>) -> T {
        if self.values == other.values {
            return T::one();
        }
        let dot: T = self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum();
        dot.max(-T::one()).min(T::one())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureExtractor {
    pub grid: usize,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self { grid: DEFAULT_GRID }
    }
}

impl FeatureExtractor {
    pub fn extract<T: Scalar>(&self, frame: &Frame<T>) -> Result<FeatureVec<T>> {
        self.extract_slice(frame.data(), frame.height(), frame.width())
    }

    pub fn extract_slice<T: Scalar>(&self, data: &[T], height: usize, width: usize) -> Result<FeatureVec<T>> {
        let g = self.grid;
        if g == 0 || height < g || width < g {
            return Err(Error::Shape(format!("a {height}x{width} frame cannot be pooled on a {g}x{g} grid")));
        }
        let mut pooled = Vec::with_capacity(g * g);
        for bi in 0..g {
            let (r0, r1) = (bi * height / g, (bi + 1) * height / g);
            for bj in 0..g {
                let (c0, c1) = (bj * width / g, (bj + 1) * width / g);
                let mut sum = T::zero();
                for r in r0..r1 {
                    sum = sum + data[r * width + c0..r * width + c1].iter().copied().sum::<T>();
                }
                pooled.push(sum / T::from_usize((r1 - r0) * (c1 - c0)).unwrap());
            }
        }
        let d = T::from_usize(pooled.len()).unwrap();
        let mean = pooled.iter().copied().sum::<T>() / d;
        let scale = pooled.iter().fold(T::zero(), |m, &p| m.max(p.abs()));
        pooled.iter_mut().for_each(|p| *p = *p - mean);
        let norm = pooled.iter().map(|&p| p * p).sum::<T>().sqrt();
        if !(norm > T::epsilon() * d * scale) {
            let mut axis = vec![T::zero(); pooled.len()];
            axis[0] = T::one();
            return Ok(FeatureVec { values: axis, degenerate: true });
        }
        pooled.iter_mut().for_each(|p| *p = *p / norm);
        Ok(FeatureVec { values: pooled, degenerate: false })
    }

    pub fn extract_clip<T: Scalar>(&self, clip: &Clip<T>) -> Result<Vec<FeatureVec<T>>> {
        (0..clip.frames()).map(|f| self.extract_slice(clip.frame_slice(f), clip.height(), clip.width())).collect()
    }
}

pub fn extract_features<T: Scalar>(frame: &Frame<T>) -> Result<FeatureVec<T>> {
    FeatureExtractor::default().extract(frame)
}

fn require_frames<T: Scalar>(clip: &Clip<T>, min: usize) -> Result<()> {
    if clip.frames() < min {
        return Err(Error::InvalidArgument(format!("reward needs at least {min} frames, got {}", clip.frames())));
    }
    Ok(())
}

/// Anchored consistency reward: `1/(2M) Σ_{i=1..M} (⟨d_a, d_i⟩ + ⟨d_i, d_{i−1}⟩)` with `d_0 = d_a`.
pub fn reward_full<T: Scalar>(anchor: &Frame<T>, predicted: &Clip<T>) -> Result<T> {
    require_frames(predicted, 1)?;
    let ex = FeatureExtractor::default();
    let da = ex.extract(anchor)?;
    let feats = ex.extract_clip(predicted)?;
    let mut total = T::zero();
    let mut prev = &da;
    for d in &feats {
        total = total + da.cosine(d) + d.cosine(prev);
        prev = d;
    }
    Ok(total / T::from_usize(2 * feats.len()).unwrap())
}

/// Mean adjacent-frame cosine within the predicted clip.
pub fn reward_local<T: Scalar>(predicted: &Clip<T>) -> Result<T> {
    require_frames(predicted, 2)?;
    let feats = FeatureExtractor::default().extract_clip(predicted)?;
    let total: T = feats.windows(2).map(|w| w[1].cosine(&w[0])).sum();
    Ok(total / T::from_usize(feats.len() - 1).unwrap())
}

/// Cosine between the anchor and the last predicted frame.
pub fn reward_anchor<T: Scalar>(anchor: &Frame<T>, predicted: &Clip<T>) -> Result<T> {
    require_frames(predicted, 1)?;
    let ex = FeatureExtractor::default();
    let da = ex.extract(anchor)?;
    let last = ex.extract_slice(predicted.frame_slice(predicted.frames() - 1), predicted.height(), predicted.width())?;
    Ok(da.cosine(&last))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    #[default]
    Full,
    Local,
    Anchor,
}

impl RewardVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Local => "local",
            Self::Anchor => "anchor",
        }
    }

    pub fn score<T: Scalar>(&self, anchor: &Frame<T>, predicted: &Clip<T>) -> Result<T> {
        match self {
            Self::Full => reward_full(anchor, predicted),
            Self::Local => reward_local(predicted),
            Self::Anchor => reward_anchor(anchor, predicted),
        }
    }
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "local" => Ok(Self::Local),
            "anchor" => Ok(Self::Anchor),
            other => Err(Error::InvalidArgument(format!("unknown reward variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
