//! Candidate initial noises drawn from four tilted distributions (A1–A4) and pool assembly.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::rng::{Purpose, StreamKey};
use crate::sampler::{ddim_invert, DenoiserFn};
use crate::{Clip, ClipShape, Error, NoiseSchedule, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Plain Gaussian noise.
    A1,
    /// Low band of the re-noised previous frames over the high band of fresh noise.
    A2,
    /// DDIM inversion of the previous frames.
    A3,
    /// Spherical resample around the inversion.
    A4,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Self::A1, Self::A2, Self::A3, Self::A4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn needs_context(self) -> bool {
        self != Self::A1
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "A{}", self.index() + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate<T> {
    pub noise: Clip<T>,
    pub strategy: Strategy,
    pub slot: usize,
    pub index: usize,
    pub key: StreamKey,
    pub score: Option<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FftMode {
    /// Per-frame 2D transform over (row, col).
    #[default]
    Spatial,
    /// One 3D transform over (frame, row, col).
    Spatiotemporal,
}

impl std::str::FromStr for FftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" | "spatial" => Ok(Self::Spatial),
            "3d" | "spatiotemporal" => Ok(Self::Spatiotemporal),
            other => Err(Error::InvalidArgument(format!("unknown fft mode {other:?}"))),
        }
    }
}

/// Strategy weights in A1..A4 order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolMix(pub [f64; 4]);

impl Default for PoolMix {
    fn default() -> Self {
        Self([0.25; 4])
    }
}

impl PoolMix {
    /// Scales the weights to sum to one; weights already summing to one within 1e-12 are kept.
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!("mix weights must be non-negative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("mix weights are all zero".into()));
        }
        if (total - 1.0).abs() <= 1e-12 {
            return Ok(Self(weights));
        }
        Ok(Self(weights.map(|w| w / total)))
    }

    pub fn only(strategy: Strategy) -> Self {
        let mut w = [0.0; 4];
        w[strategy.index()] = 1.0;
        Self(w)
    }

    pub fn uses_inversion(&self) -> bool {
        self.0[2] > 0.0 || self.0[3] > 0.0
    }

    /// Largest-remainder split of `n` slots; ties go to the earlier strategy.
    pub fn allocate(&self, n: usize) -> [usize; 4] {
        let total: f64 = self.0.iter().sum();
        let quotas = self.0.map(|w| w / total * n as f64);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        let assigned: usize = counts.iter().sum();
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

impl std::str::FromStr for PoolMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bad mix {s:?}: {e}")))?;
        let weights: [f64; 4] =
            parts.try_into().map_err(|_| Error::InvalidArgument(format!("mix needs four weights: {s:?}")))?;
        Self::new(weights)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolParams {
    pub mix: PoolMix,
    pub fft_cutoff: f64,
    pub fft_mode: FftMode,
    pub delta: f64,
}

impl Default for PoolParams {
    fn default() -> Self {
        Self { mix: PoolMix::default(), fft_cutoff: 0.25, fft_mode: FftMode::Spatial, delta: 0.3 }
    }
}

impl PoolParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fft_cutoff) {
            return Err(Error::InvalidArgument(format!("fft cutoff {} outside [0, 1]", self.fft_cutoff)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!("delta {} outside [0, 1)", self.delta)));
        }
        Ok(())
    }
}

pub fn sample_random<T: Scalar>(shape: ClipShape, key: StreamKey) -> Clip<T> {
    Clip::new(shape, key.normals(shape.len())).expect("length matches shape")
}

fn rms_normalize<T: Scalar>(clip: Clip<T>) -> Clip<T> {
    let rms = clip.mean_square().sqrt();
    if rms > T::zero() {
        clip.map(|x| x / rms)
    } else {
        clip
    }
}

// Signed frequency of bin k on an axis of length n, in cycles per sample.
fn bin_freq(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

fn fft_axis<T: Scalar>(planner: &mut FftPlanner<T>, buf: &mut [Complex<T>], dims: [usize; 3], axis: usize, inverse: bool) {
    let n = dims[axis];
    if n <= 1 {
        return;
    }
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let strides = [dims[1] * dims[2], dims[2], 1];
    let stride = strides[axis];
    let mut line = vec![Complex::new(T::zero(), T::zero()); n];
    for start in 0..buf.len() {
        if !(start / stride).is_multiple_of(n) {
            continue;
        }
        for (i, c) in line.iter_mut().enumerate() {
            *c = buf[start + i * stride];
        }
        fft.process(&mut line);
        for (i, c) in line.iter().enumerate() {
            buf[start + i * stride] = *c;
        }
    }
}

/// A2: `F⁻¹(low_r(F(prev)) + high_r(F(η)))`, RMS-normalized. A bin is low iff its radial
/// frequency, normalized to 1 at the corner of the transformed axes, is below `cutoff`;
/// `cutoff = 1` keeps every bin.
pub fn sample_fft_blend<T: Scalar>(prev: &Clip<T>, cutoff: f64, key: StreamKey, mode: FftMode) -> Result<Clip<T>> {
    if prev.is_empty() {
        return Err(Error::InvalidArgument("fft blend needs previous frames".into()));
    }
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::InvalidArgument(format!("fft cutoff {cutoff} outside [0, 1]")));
    }
    let dims = [prev.frames(), prev.height(), prev.width()];
    let axes: &[usize] = match mode {
        FftMode::Spatial => &[1, 2],
        FftMode::Spatiotemporal => &[0, 1, 2],
    };
    let eta: Vec<T> = key.normals(prev.data().len());
    let to_complex = |d: &[T]| d.iter().map(|&x| Complex::new(x, T::zero())).collect::<Vec<_>>();
    let (mut lo, mut hi) = (to_complex(prev.data()), to_complex(&eta));
    let mut planner = FftPlanner::new();
    for &a in axes {
        fft_axis(&mut planner, &mut lo, dims, a, false);
        fft_axis(&mut planner, &mut hi, dims, a, false);
    }
    let corner = (axes.iter().filter(|&&a| dims[a] > 1).count() as f64 * 0.25).sqrt();
    let mut mixed = lo;
    for (idx, (m, h)) in mixed.iter_mut().zip(&hi).enumerate() {
        let coord = [idx / (dims[1] * dims[2]), (idx / dims[2]) % dims[1], idx % dims[2]];
        let r2: f64 = axes.iter().map(|&a| bin_freq(coord[a], dims[a]).powi(2)).sum();
        let rho = if corner > 0.0 { r2.sqrt() / corner } else { 0.0 };
        let low = cutoff >= 1.0 || rho < cutoff;
        if !low {
            *m = *h;
        }
    }
    for &a in axes {
        fft_axis(&mut planner, &mut mixed, dims, a, true);
    }
    let scale = T::one() / T::lit(axes.iter().map(|&a| dims[a]).product::<usize>() as f64);
    let data = mixed.iter().map(|c| c.re * scale).collect();
    Ok(rms_normalize(Clip::new(prev.shape(), data)?))
}

/// A3: inversion of clean frames from `τ₀` up to `level`.
pub fn sample_inversion_to<T: Scalar>(
    prev: &Clip<T>,
    level: usize,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    ddim_invert(prev, schedule.time(0), level, denoiser, schedule)
}

/// A3 with the top remapped level `τ_S` as target.
pub fn sample_inversion<T: Scalar>(prev: &Clip<T>, denoiser: &DenoiserFn<'_, T>, schedule: &NoiseSchedule<T>) -> Result<Clip<T>> {
    sample_inversion_to(prev, schedule.top(), denoiser, schedule)
}

/// `√(1−δ²)·inv + δ·η`.
pub fn resample_around<T: Scalar>(inverted: &Clip<T>, delta: f64, key: StreamKey) -> Result<Clip<T>> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside [0, 1)")));
    }
    let eta = Clip::new(inverted.shape(), key.normals(inverted.data().len()))?;
    let (keep, d) = (T::lit((1.0 - delta * delta).sqrt()), T::lit(delta));
    inverted.zip_map(&eta, |v, e| keep * v + d * e)
}

/// A4: inversion to `τ_S` followed by a spherical resample of radius `δ`.
pub fn sample_inversion_resample<T: Scalar>(
    prev: &Clip<T>,
    delta: f64,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
    key: StreamKey,
) -> Result<Clip<T>> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside [0, 1)")));
    }
    resample_around(&sample_inversion(prev, denoiser, schedule)?, delta, key)
}

/// Builds `n` candidates for one beam slot. `context` holds clean frames already shaped like the
/// noise (`None` for an empty trajectory); `entry` is the level the noise enters at. `key` fixes
/// seed, step and slot; candidate `c` draws from sub-streams with `candidate = c`. The context is
/// inverted at most once and only when A3 or A4 receive candidates.
#[allow(clippy::too_many_arguments)]
pub fn build_pool<T: Scalar>(
    n: usize,
    context: Option<&Clip<T>>,
    shape: ClipShape,
    entry: usize,
    params: &PoolParams,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
    key: StreamKey,
) -> Result<Vec<Candidate<T>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("pool size must be at least 1".into()));
    }
    params.validate()?;
    if let Some(ctx) = context {
        if ctx.shape() != shape {
            return Err(Error::Shape(format!("context {:?} does not match noise shape {shape:?}", ctx.shape())));
        }
    }
    let counts = match context {
        Some(_) => params.mix.allocate(n),
        None => [n, 0, 0, 0],
    };
    let inverted = match context {
        Some(ctx) if counts[2] + counts[3] > 0 => Some(sample_inversion_to(ctx, entry, denoiser, schedule)?),
        _ => None,
    };
    let (alpha, sigma) = schedule.signal_noise(entry)?;
    let mut pool = Vec::with_capacity(n);
    for strategy in Strategy::ALL {
        for _ in 0..counts[strategy.index()] {
            let c = pool.len();
            let ck = key.at(key.step, key.slot, c as u64);
            let noise = match (strategy, context, &inverted) {
                (Strategy::A2, Some(ctx), _) => {
                    let eps = Clip::new(shape, ck.with_purpose(Purpose::Renoise).normals(shape.len()))?;
                    let noised = ctx.zip_map(&eps, |x, e| alpha * x + sigma * e)?;
                    sample_fft_blend(&noised, params.fft_cutoff, ck.with_purpose(Purpose::FftNoise), params.fft_mode)?
                }
                (Strategy::A3, _, Some(inv)) => inv.clone(),
                (Strategy::A4, _, Some(inv)) => resample_around(inv, params.delta, ck.with_purpose(Purpose::ResampleNoise))?,
                _ => sample_random(shape, ck.with_purpose(Purpose::CandidateNoise)),
            };
            pool.push(Candidate { noise, strategy, slot: key.slot as usize, index: c, key: ck, score: None });
        }
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::make_schedule;
    use crate::sampler::full_denoise;
    use crate::sampler::testing::ZeroNoise;
    use crate::toyworld::{tests::small_corpus, MixtureDenoiser};
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest};
    use super::Strategy;

    fn key(seed: u64) -> StreamKey {
        StreamKey::new(seed, Purpose::Test)
    }

    fn moments(data: &[f64]) -> (f64, f64) {
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn random_noise_is_seeded_and_separated() {
        let shape = ClipShape::new(2, 8, 8);
        let a: Clip<f64> = sample_random(shape, key(1));
        assert_eq!(a, sample_random(shape, key(1)));
        assert_ne!(a, sample_random(shape, key(1).at(0, 0, 1)));
    }

    #[test]
    fn random_noise_moments() {
        let n = 1_000_000;
        let a: Clip<f64> = sample_random(ClipShape::new(n / 64, 8, 8), key(2));
        let (mean, var) = moments(a.data());
        // SE of the mean is 1/√n, of the variance √(2/n).
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn fft_extremes() {
        let prev: Clip<f64> = sample_random(ClipShape::new(3, 8, 8), key(3)).map(|x| 3.0 * x + 0.5);
        for mode in [FftMode::Spatial, FftMode::Spatiotemporal] {
            let pure = sample_fft_blend(&prev, 0.0, key(4), mode).unwrap();
            let eta = rms_normalize(sample_random(prev.shape(), key(4)));
            assert!(pure.rel_l2(&eta) < 1e-12);
            let full = sample_fft_blend(&prev, 1.0, key(4), mode).unwrap();
            assert!(full.rel_l2(&rms_normalize(prev.clone())) < 1e-12);
        }
    }

    #[test]
    fn fft_mask_by_hand() {
        // A 1×4 frame: bin frequencies 0, 1/4, −1/2, −1/4 over a corner radius of 1/2.
        let prev = Clip::new(ClipShape::new(1, 1, 4), vec![1.0, 2.0, 0.0, -1.0]).unwrap();
        let out = sample_fft_blend(&prev, 0.6, key(5), FftMode::Spatial).unwrap();
        // Bins 0, 1, 3 (ρ = 0, 0.5, 0.5) come from prev, bin 2 (ρ = 1) from η.
        let eta: Vec<f64> = key(5).normals(4);
        let nyq = |d: &[f64]| (d[0] - d[1] + d[2] - d[3]) / 4.0;
        let want: Vec<f64> = (0..4)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                prev.data()[i] - sign * nyq(prev.data()) + sign * nyq(&eta)
            })
            .collect();
        let want = rms_normalize(Clip::new(prev.shape(), want).unwrap());
        assert!(out.rel_l2(&want) < 1e-12);
    }

    #[test]
    fn fft_energy_is_unit() {
        let prev: Clip<f64> = sample_random(ClipShape::new(4, 8, 8), key(6));
        let mut total = 0.0;
        for i in 0..100 {
            let out = sample_fft_blend(&prev, 0.25, key(7).at(0, 0, i), FftMode::Spatial).unwrap();
            // Parseval: the spectrum energy over N equals the time-domain energy.
            let spec_energy = {
                let mut buf: Vec<Complex<f64>> = out.data().iter().map(|&x| Complex::new(x, 0.0)).collect();
                let mut planner = FftPlanner::new();
                for a in [1, 2] {
                    fft_axis(&mut planner, &mut buf, [4, 8, 8], a, false);
                }
                buf.iter().map(|c| c.norm_sqr()).sum::<f64>() / 64.0
            };
            assert!((spec_energy - out.norm().powi(2)).abs() < 1e-9);
            total += out.mean_square();
        }
        assert!((total / 100.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn fft_rejects_bad_input() {
        let prev: Clip<f64> = sample_random(ClipShape::new(1, 8, 8), key(3));
        assert!(sample_fft_blend(&prev, 1.5, key(1), FftMode::Spatial).is_err());
        assert!(sample_fft_blend(&Clip::<f64>::empty(8, 8), 0.5, key(1), FftMode::Spatial).is_err());
    }

    #[test]
    fn inversion_zero_prediction() {
        let s = make_schedule::<f64>(1000, 10, 1e-4, 0.02).unwrap();
        let den = DenoiserFn::new(&ZeroNoise);
        let x: Clip<f64> = sample_random(ClipShape::new(2, 8, 8), key(8));
        let out = sample_inversion(&x, &den, &s).unwrap();
        let ratio = s.signal_noise(s.top()).unwrap().0 / s.signal_noise(s.time(0)).unwrap().0;
        assert!(out.rel_l2(&x.map(|v| v * ratio)) < 1e-12);
    }

    #[test]
    fn inversion_roundtrip_and_purity() {
        let s = make_schedule::<f64>(1000, 50, 1e-4, 0.02).unwrap();
        let corpus = small_corpus(6, 3, 8, 8);
        let model = MixtureDenoiser::new(corpus.clone()).unwrap();
        let den = DenoiserFn::new(&model);
        let x = corpus[1].sub_clip(2, 5);
        let inv = sample_inversion(&x, &den, &s).unwrap();
        assert_eq!(inv, sample_inversion(&x, &den, &s).unwrap());
        let back = full_denoise(&inv, &den, &s).unwrap();
        assert!(back.rel_l2(&x) < 0.05, "roundtrip {}", back.rel_l2(&x));
    }

    #[test]
    fn resample_limits_and_variance() {
        let s = make_schedule::<f64>(1000, 10, 1e-4, 0.02).unwrap();
        let den = DenoiserFn::new(&ZeroNoise);
        let x: Clip<f64> = sample_random(ClipShape::new(1, 8, 8), key(9));
        let inv = sample_inversion(&x, &den, &s).unwrap();
        assert_eq!(sample_inversion_resample(&x, 0.0, &den, &s, key(1)).unwrap(), inv);
        assert!(sample_inversion_resample(&x, 1.0, &den, &s, key(1)).is_err());
        let near = resample_around(&inv, 0.999_999, key(2)).unwrap();
        assert!(near.rel_l2(&sample_random(inv.shape(), key(2))) < 1e-2);

        let unit: Clip<f64> = sample_random(ClipShape::new(4, 8, 8), key(10));
        let mut total = 0.0;
        for i in 0..100 {
            total += resample_around(&unit, 0.5, key(11).at(0, 0, i)).unwrap().mean_square();
        }
        assert!((total / 100.0 - unit.mean_square()).abs() < 0.05);
    }

    #[test]
    fn allocation_oracle() {
        assert_eq!(PoolMix::default().allocate(4), [1, 1, 1, 1]);
        assert_eq!(PoolMix::new([0.4, 0.2, 0.2, 0.2]).unwrap().allocate(5), [2, 1, 1, 1]);
        assert_eq!(PoolMix::default().allocate(6), [2, 2, 1, 1]);
        assert_eq!(PoolMix::only(Strategy::A3).allocate(3), [0, 0, 3, 0]);
        assert!(PoolMix::new([0.0; 4]).is_err());
        assert!("1,2,3".parse::<PoolMix>().is_err());
        assert_eq!("1,1,0,0".parse::<PoolMix>().unwrap().0, [0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn pool_fallback_and_tags() {
        let s = make_schedule::<f64>(1000, 8, 1e-4, 0.02).unwrap();
        let den = DenoiserFn::new(&ZeroNoise);
        let shape = ClipShape::new(1, 8, 8);
        let params = PoolParams::default();
        let k = StreamKey::new(1, Purpose::CandidateNoise).at(3, 1, 0);
        let empty = build_pool(4, None, shape, s.top(), &params, &den, &s, k).unwrap();
        assert!(empty.iter().all(|c| c.strategy == Strategy::A1));
        assert_eq!(den.calls(), 0);

        let ctx: Clip<f64> = sample_random(shape, key(12));
        let pool = build_pool(4, Some(&ctx), shape, s.top(), &params, &den, &s, k).unwrap();
        let tags: Vec<_> = pool.iter().map(|c| c.strategy).collect();
        assert_eq!(tags, Strategy::ALL);
        assert!(pool.iter().all(|c| c.noise.shape() == shape && c.slot == 1));
        assert_eq!(den.calls(), 8);
        assert_eq!(pool, build_pool(4, Some(&ctx), shape, s.top(), &params, &den, &s, k).unwrap());
        let other = build_pool(4, Some(&ctx), shape, s.top(), &params, &den, &s, k.at(3, 2, 0)).unwrap();
        assert_ne!(pool[0].noise, other[0].noise);
    }

    #[test]
    fn pool_without_inversion_is_free() {
        let s = make_schedule::<f64>(1000, 8, 1e-4, 0.02).unwrap();
        let den = DenoiserFn::new(&ZeroNoise);
        let shape = ClipShape::new(2, 8, 8);
        let ctx: Clip<f64> = sample_random(shape, key(13));
        let params = PoolParams { mix: "1,1,0,0".parse().unwrap(), ..Default::default() };
        let k = StreamKey::new(1, Purpose::CandidateNoise);
        build_pool(6, Some(&ctx), shape, s.top(), &params, &den, &s, k).unwrap();
        assert_eq!(den.calls(), 0);
        assert!(build_pool(0, Some(&ctx), shape, s.top(), &params, &den, &s, k).is_err());
        assert!(build_pool(2, Some(&ctx), ClipShape::new(1, 8, 8), s.top(), &params, &den, &s, k).is_err());
    }

    proptest! {
        #[test]
        fn allocation_sums_to_n(w in proptest::array::uniform4(0.0f64..1.0), n in 1usize..40) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let mix = PoolMix::new(w).unwrap();
            let counts = mix.allocate(n);
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            for i in 0..4 {
                let quota = mix.0[i] * n as f64;
                prop_assert!((counts[i] as f64 - quota).abs() < 1.0 + 1e-9);
            }
        }
    }
}
