//! A moving-shape world and two noise predictors whose posteriors are known in closed form.
//!
//! Frames use a standardized encoding: background near −1, subject near +1. The reference
//! corpus contains "families" of clips that share a subject and its motion; all but one clip of
//! each family switch to a different subject partway through, which gives the corpus-trained
//! model the same failure mode long-video generators show: the subject silently changes.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{Purpose, StreamKey};
use crate::sampler::NoisePredictor;
use crate::{Clip, ClipShape, Error, Frame, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Disc,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Self::Square),
            "disc" => Ok(Self::Disc),
            other => Err(Error::Subject(format!("unknown shape kind {other:?}"))),
        }
    }
}

/// What to draw and how it moves. Positions are the top-left corner of the subject's bounding
/// box, in pixels; velocities are pixels per frame. Positions wrap around the frame edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub shape: ShapeKind,
    pub size: usize,
    pub intensity: f64,
    pub position: (f64, f64),
    pub velocity: (f64, f64),
    pub background: f64,
}

impl Default for SubjectSpec {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Square,
            size: 3,
            intensity: 1.0,
            position: (2.0, 2.0),
            velocity: (0.0, 0.5),
            background: -1.0,
        }
    }
}

impl SubjectSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.size == 0 || self.size > height || self.size > width {
            return Err(Error::Subject(format!("size {} does not fit a {height}x{width} frame", self.size)));
        }
        if !(self.intensity.is_finite() && self.background.is_finite()) {
            return Err(Error::Subject("intensities must be finite".into()));
        }
        let (r, c) = self.position;
        let (dr, dc) = self.velocity;
        if ![r, c, dr, dc].iter().all(|x| x.is_finite()) {
            return Err(Error::Subject("position and velocity must be finite".into()));
        }
        if dr.abs() >= height as f64 / 2.0 || dc.abs() >= width as f64 / 2.0 {
            return Err(Error::Subject("per-frame displacement must stay below half the frame".into()));
        }
        Ok(())
    }

    /// Top-left corner at frame `f`, rounded to the pixel grid and wrapped.
    pub fn corner_at(&self, f: usize, height: usize, width: usize) -> (usize, usize) {
        let wrap = |p: f64, n: usize| (p.round() as i64).rem_euclid(n as i64) as usize;
        let r = self.position.0 + f as f64 * self.velocity.0;
        let c = self.position.1 + f as f64 * self.velocity.1;
        (wrap(r, height), wrap(c, width))
    }

    fn covers(&self, dr: usize, dc: usize) -> bool {
        match self.shape {
            ShapeKind::Square => true,
            ShapeKind::Disc => {
                let centre = (self.size as f64 - 1.0) / 2.0;
                let radius = self.size as f64 / 2.0;
                let (y, x) = (dr as f64 - centre, dc as f64 - centre);
                y * y + x * x <= radius * radius
            }
        }
    }

    pub fn render_frame<T: Scalar>(&self, f: usize, height: usize, width: usize) -> Frame<T> {
        let mut frame = Frame::filled(height, width, T::lit(self.background));
        let (r0, c0) = self.corner_at(f, height, width);
        let fg = T::lit(self.intensity);
        for dr in 0..self.size {
            for dc in 0..self.size {
                if self.covers(dr, dc) {
                    let (r, c) = ((r0 + dr) % height, (c0 + dc) % width);
                    frame.data_mut()[r * width + c] = fg;
                }
            }
        }
        frame
    }
}

/// Optional i.i.d. Gaussian pixel noise added on top of the rendered frames.
#[derive(Clone, Copy, Debug)]
pub struct PixelNoise {
    pub std: f64,
    pub key: StreamKey,
}

/// Renders `frames` frames of `spec` moving at constant velocity.
pub fn gen_clip<T: Scalar>(
    spec: &SubjectSpec,
    frames: usize,
    height: usize,
    width: usize,
    pixel_noise: Option<PixelNoise>,
) -> Result<Clip<T>> {
    gen_switch_clip(spec, None, frames, height, width, pixel_noise)
}

/// Like [`gen_clip`], but while the frame index is in `switch.1` the subject is replaced by `switch.0`.
pub fn gen_switch_clip<T: Scalar>(
    spec: &SubjectSpec,
    switch: Option<(&SubjectSpec, std::ops::Range<usize>)>,
    frames: usize,
    height: usize,
    width: usize,
    pixel_noise: Option<PixelNoise>,
) -> Result<Clip<T>> {
    if frames == 0 {
        return Err(Error::Shape("a clip needs at least one frame".into()));
    }
    spec.validate(height, width)?;
    if let Some((alt, _)) = &switch {
        alt.validate(height, width)?;
    }
    let mut clip = Clip::empty(height, width);
    for f in 0..frames {
        let active = match &switch {
            Some((alt, span)) if span.contains(&f) => alt,
            _ => spec,
        };
        clip.push_frame(&active.render_frame(f, height, width))?;
    }
    if let Some(noise) = pixel_noise.filter(|n| n.std > 0.0) {
        let eps: Vec<T> = noise.key.normals(clip.data().len());
        let std = T::lit(noise.std);
        clip.data_mut().iter_mut().zip(eps).for_each(|(x, e)| *x = *x + std * e);
    }
    Ok(clip)
}

/// Draws a random subject that fits a `height`×`width` frame.
pub fn random_subject(height: usize, width: usize, key: StreamKey) -> SubjectSpec {
    let mut rng = key.rng();
    let max_size = (height.min(width) / 2).max(2);
    let speeds = [-0.25, 0.0, 0.25];
    SubjectSpec {
        shape: if rng.random_bool(0.5) { ShapeKind::Square } else { ShapeKind::Disc },
        size: rng.random_range(2..=max_size),
        intensity: 1.0,
        position: (rng.random_range(0..height) as f64, rng.random_range(0..width) as f64),
        velocity: (speeds[rng.random_range(0..speeds.len())], speeds[rng.random_range(0..speeds.len())]),
        background: -1.0,
    }
}

/// A different subject that takes over the scene: new look, new place, same velocity.
fn alternate_subject(base: &SubjectSpec, height: usize, width: usize, rng: &mut impl Rng) -> SubjectSpec {
    let max_size = (height.min(width) / 2).max(2);
    loop {
        let alt = SubjectSpec {
            shape: if rng.random_bool(0.5) { ShapeKind::Square } else { ShapeKind::Disc },
            size: rng.random_range(1..=max_size),
            position: (rng.random_range(0..height) as f64, rng.random_range(0..width) as f64),
            ..*base
        };
        if alt.render_frame::<f64>(0, height, width) != base.render_frame::<f64>(0, height, width) {
            return alt;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub families: usize,
    /// Clips per family; the first keeps its subject, the rest switch to another one for a while.
    pub variants: usize,
    pub clip_frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { families: 12, variants: 8, clip_frames: 128, height: 16, width: 16, seed: 2024 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus<T> {
    /// Family-major: the clips of family `f` are `clips[f·variants..(f+1)·variants]`.
    pub clips: Vec<Clip<T>>,
    /// The subject each family starts with, indexed by family.
    pub subjects: Vec<SubjectSpec>,
    pub variants: usize,
}

impl<T: Scalar> Corpus<T> {
    pub fn families(&self) -> usize {
        self.subjects.len()
    }

    pub fn family(&self, f: usize) -> &[Clip<T>] {
        &self.clips[f * self.variants..(f + 1) * self.variants]
    }
}

fn check_spec(spec: &CorpusSpec) -> Result<()> {
    if spec.families == 0 || spec.variants == 0 || spec.clip_frames < 2 {
        return Err(Error::InvalidArgument("corpus needs families, variants and at least two frames".into()));
    }
    Ok(())
}

/// The variants of one family. Variant 0 keeps `subject` throughout; odd variants switch to
/// another subject for good at a random frame, even ones glitch for 2–8 frames and recover.
pub fn build_family<T: Scalar>(subject: &SubjectSpec, spec: &CorpusSpec, family: usize) -> Result<Vec<Clip<T>>> {
    check_spec(spec)?;
    let (h, w, len) = (spec.height, spec.width, spec.clip_frames);
    let base_key = StreamKey::new(spec.seed, Purpose::Corpus);
    let mut clips = Vec::with_capacity(spec.variants);
    for v in 0..spec.variants {
        let clip = if v == 0 {
            gen_clip(subject, len, h, w, None)?
        } else {
            let mut rng = base_key.at(family as u64, v as u64, 1).rng();
            let alt = alternate_subject(subject, h, w, &mut rng);
            let at = rng.random_range(1..len);
            let end = if v % 2 == 1 { len } else { (at + rng.random_range(2..=8)).min(len) };
            gen_switch_clip(subject, Some((&alt, at..end)), len, h, w, None)?
        };
        clips.push(clip);
    }
    Ok(clips)
}

pub fn build_corpus<T: Scalar>(spec: &CorpusSpec) -> Result<Corpus<T>> {
    check_spec(spec)?;
    let base_key = StreamKey::new(spec.seed, Purpose::Corpus);
    let mut clips = Vec::with_capacity(spec.families * spec.variants);
    let mut subjects = Vec::with_capacity(spec.families);
    for fam in 0..spec.families {
        let subject = random_subject(spec.height, spec.width, base_key.at(fam as u64, 0, 0));
        clips.extend(build_family(&subject, spec, fam)?);
        subjects.push(subject);
    }
    Ok(Corpus { clips, subjects, variants: spec.variants })
}

/// Exact noise prediction for a Gaussian data prior `x ~ N(μ, s²·I)`.
#[derive(Clone, Debug)]
pub struct GaussianDenoiser<T> {
    mean: Clip<T>,
    prior_std: T,
}

impl<T: Scalar> GaussianDenoiser<T> {
    /// `mean` is either a full clip or a single frame broadcast over every input frame.
    pub fn new(mean: Clip<T>, prior_std: T) -> Result<Self> {
        if !(prior_std > T::zero()) {
            return Err(Error::Model("prior std must be positive".into()));
        }
        Ok(Self { mean, prior_std })
    }

    fn mean_frame(&self, f: usize) -> &[T] {
        if self.mean.frames() == 1 {
            self.mean.frame_slice(0)
        } else {
            self.mean.frame_slice(f)
        }
    }

    /// Posterior mean `μ + α s²/(α² s² + σ²)·(v − α μ)`, per frame.
    pub fn posterior_mean(&self, noisy: &Clip<T>, coeffs: &[(T, T)]) -> Result<Clip<T>> {
        let mean_ok = self.mean.frames() == 1 || self.mean.frames() == noisy.frames();
        if !mean_ok || self.mean.frame_len() != noisy.frame_len() || coeffs.len() != noisy.frames() {
            return Err(Error::Shape("gaussian prior mean does not match the input".into()));
        }
        let s2 = self.prior_std * self.prior_std;
        let mut out = noisy.clone();
        for (f, &(a, s)) in coeffs.iter().enumerate() {
            let gain = a * s2 / (a * a * s2 + s * s);
            let mu = self.mean_frame(f);
            for (o, &m) in out.frame_slice_mut(f).iter_mut().zip(mu) {
                *o = m + gain * (*o - a * m);
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> NoisePredictor<T> for GaussianDenoiser<T> {
    fn predict_noise(&self, noisy: &Clip<T>, coeffs: &[(T, T)]) -> Result<Clip<T>> {
        let m = self.posterior_mean(noisy, coeffs)?;
        Ok(eps_from_mean(noisy, &m, coeffs))
    }
}

// ε̂ = (v − α·m)/σ per frame, zero where σ = 0.
fn eps_from_mean<T: Scalar>(noisy: &Clip<T>, mean: &Clip<T>, coeffs: &[(T, T)]) -> Clip<T> {
    let mut eps = Clip::zeros(noisy.shape());
    for (f, &(a, s)) in coeffs.iter().enumerate() {
        if s == T::zero() {
            continue;
        }
        let (v, m) = (noisy.frame_slice(f), mean.frame_slice(f));
        for ((e, &v), &m) in eps.frame_slice_mut(f).iter_mut().zip(v).zip(m) {
            *e = (v - a * m) / s;
        }
    }
    eps
}

/// Exact noise prediction for the empirical distribution of a reference corpus.
///
/// An input of `F` frames is compared against every window of `F` consecutive frames of every
/// corpus clip, so one corpus serves single frames, chunks and whole FIFO queues alike. Frames
/// whose `σ` is zero carry no likelihood term.
#[derive(Clone, Debug)]
pub struct MixtureDenoiser<T> {
    corpus: Vec<Clip<T>>,
}

// Weights below this fraction of the largest are dropped from the posterior mean.
const NEGLIGIBLE_WEIGHT: f64 = 1e-20;

impl<T: Scalar> MixtureDenoiser<T> {
    pub fn new(corpus: Vec<Clip<T>>) -> Result<Self> {
        let first = corpus.first().ok_or_else(|| Error::Model("empty reference corpus".into()))?;
        let (h, w) = (first.height(), first.width());
        if corpus.iter().any(|c| c.height() != h || c.width() != w || c.is_empty()) {
            return Err(Error::Model("corpus clips must share a frame size".into()));
        }
        Ok(Self { corpus })
    }

    pub fn corpus(&self) -> &[Clip<T>] {
        &self.corpus
    }

    /// `(clip, first frame)` of every window matching an `frames`-frame input.
    pub fn windows(&self, frames: usize) -> Vec<(usize, usize)> {
        self.corpus
            .iter()
            .enumerate()
            .filter(|(_, c)| c.frames() >= frames)
            .flat_map(|(j, c)| (0..=c.frames() - frames).map(move |o| (j, o)))
            .collect()
    }

    fn window(&self, (j, o): (usize, usize), frames: usize) -> &[T] {
        let clip = &self.corpus[j];
        let n = clip.frame_len();
        &clip.data()[o * n..(o + frames) * n]
    }

    /// Posterior weights over [`Self::windows`], via a log-sum-exp over
    /// `−Σ_f ‖v_f − α_f·x_f‖² / (2σ_f²)`.
    pub fn posterior_weights(&self, noisy: &Clip<T>, coeffs: &[(T, T)]) -> Result<Vec<T>> {
        let first = &self.corpus[0];
        if noisy.height() != first.height() || noisy.width() != first.width() || coeffs.len() != noisy.frames() {
            return Err(Error::Shape("input does not match the corpus frame size".into()));
        }
        let windows = self.windows(noisy.frames());
        if windows.is_empty() {
            return Err(Error::Model(format!("no corpus clip has {} frames", noisy.frames())));
        }
        let two = T::lit(2.0);
        let inv: Vec<T> =
            coeffs.iter().map(|&(_, s)| if s > T::zero() { T::one() / (two * s * s) } else { T::zero() }).collect();
        let n = noisy.frame_len();
        let energies: Vec<T> = windows
            .par_iter()
            .map(|&w| {
                let x = self.window(w, noisy.frames());
                let mut total = T::zero();
                for (f, &(a, _)) in coeffs.iter().enumerate() {
                    if inv[f] == T::zero() {
                        continue;
                    }
                    let sq: T = noisy
                        .frame_slice(f)
                        .iter()
                        .zip(&x[f * n..(f + 1) * n])
                        .map(|(&v, &x)| {
                            let d = v - a * x;
                            d * d
                        })
                        .sum();
                    total = total + sq * inv[f];
                }
                total
            })
            .collect();
        let min = energies.iter().copied().fold(T::infinity(), T::min);
        let unnorm: Vec<T> = energies.iter().map(|&e| (min - e).exp()).collect();
        let z: T = unnorm.iter().copied().sum();
        Ok(unnorm.into_iter().map(|u| u / z).collect())
    }

    pub fn posterior_mean(&self, noisy: &Clip<T>, coeffs: &[(T, T)]) -> Result<Clip<T>> {
        let weights = self.posterior_weights(noisy, coeffs)?;
        let windows = self.windows(noisy.frames());
        let cutoff = weights.iter().copied().fold(T::zero(), T::max) * T::lit(NEGLIGIBLE_WEIGHT);
        let mut mean = Clip::zeros(noisy.shape());
        for (&w, &win) in weights.iter().zip(&windows) {
            if w <= cutoff {
                continue;
            }
            let x = self.window(win, noisy.frames());
            mean.data_mut().iter_mut().zip(x).for_each(|(m, &x)| *m = *m + w * x);
        }
        Ok(mean)
    }
}

impl<T: Scalar> NoisePredictor<T> for MixtureDenoiser<T> {
    fn predict_noise(&self, noisy: &Clip<T>, coeffs: &[(T, T)]) -> Result<Clip<T>> {
        if coeffs.iter().all(|&(_, s)| s == T::zero()) {
            return Ok(Clip::zeros(noisy.shape()));
        }
        let m = self.posterior_mean(noisy, coeffs)?;
        Ok(eps_from_mean(noisy, &m, coeffs))
    }
}

/// Shape of the clip a denoiser sees for `frames` frames of an `h`×`w` world.
pub fn shape_of(frames: usize, height: usize, width: usize) -> ClipShape {
    ClipShape::new(frames, height, width)
}
