//! Deterministic DDIM (η = 0): reverse steps, one-step x₀ prediction, inversion and full
//! trajectories.
//!
//! Every operation accepts per-frame noise levels so that a diagonal (FIFO) queue, whose frames
//! sit at different heights, runs through the same code path as a uniformly noised chunk.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Clip, Error, NoiseSchedule, Result, Scalar};

/// A noise-prediction network `ε_θ`.
///
/// `coeffs[f]` holds `(α, σ)` for frame `f` of `noisy`. Implementations must be pure and return
/// zero noise for frames whose `σ` is zero.
pub trait NoisePredictor<T: Scalar>: Send + Sync {
    fn predict_noise(&self, noisy: &Clip<T>, coeffs: &[(T, T)]) -> Result<Clip<T>>;
}

impl<T: Scalar, P: NoisePredictor<T> + ?Sized> NoisePredictor<T> for &P {
    fn predict_noise(&self, noisy: &Clip<T>, coeffs: &[(T, T)]) -> Result<Clip<T>> {
        (**self).predict_noise(noisy, coeffs)
    }
}

/// A predictor bound to a call counter. The counter is atomic, so concurrent evaluations never
/// lose counts.
pub struct DenoiserFn<'m, T> {
    model: &'m dyn NoisePredictor<T>,
    calls: AtomicU64,
}

impl<'m, T: Scalar> DenoiserFn<'m, T> {
    pub fn new(model: &'m dyn NoisePredictor<T>) -> Self {
        Self { model, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn model(&self) -> &'m dyn NoisePredictor<T> {
        self.model
    }

    /// Predicts the noise in `noisy`, whose frame `f` sits at schedule index `levels[f]`.
    pub fn eval(&self, noisy: &Clip<T>, levels: &[usize], schedule: &NoiseSchedule<T>) -> Result<Clip<T>> {
        let coeffs = frame_coeffs(noisy, levels, schedule)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.model.predict_noise(noisy, &coeffs)
    }
}

fn frame_coeffs<T: Scalar>(clip: &Clip<T>, levels: &[usize], schedule: &NoiseSchedule<T>) -> Result<Vec<(T, T)>> {
    if levels.len() != clip.frames() {
        return Err(Error::Shape(format!("{} levels for {} frames", levels.len(), clip.frames())));
    }
    levels.iter().map(|&t| schedule.signal_noise(t)).collect()
}

fn check_remapped<T: Scalar>(schedule: &NoiseSchedule<T>, levels: &[usize]) -> Result<()> {
    levels.iter().try_for_each(|&t| schedule.position(t).map(|_| ()))
}

/// One reverse DDIM update from `from` to `to`, per frame:
/// `α_to·(v − σ_from·ε̂)/α_from + σ_to·ε̂` with `ε̂ = ε_θ(v, from)`.
pub fn ddim_step_levels<T: Scalar>(
    v: &Clip<T>,
    from: &[usize],
    to: &[usize],
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    if from.len() != to.len() {
        return Err(Error::Shape("from/to level lists differ in length".into()));
    }
    check_remapped(schedule, from)?;
    check_remapped(schedule, to)?;
    if let Some((&f, &t)) = from.iter().zip(to).find(|(f, t)| f <= t) {
        return Err(Error::Ordering { from: f, to: t });
    }
    let eps = denoiser.eval(v, from, schedule)?;
    transport(v, &eps, from, to, schedule)
}

// Moves `v` from `from` to `to` along the deterministic DDIM path anchored at `eps`.
fn transport<T: Scalar>(
    v: &Clip<T>,
    eps: &Clip<T>,
    from: &[usize],
    to: &[usize],
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    let mut out = v.clone();
    for f in 0..v.frames() {
        let (a_from, s_from) = schedule.signal_noise(from[f])?;
        let (a_to, s_to) = schedule.signal_noise(to[f])?;
        let e = eps.frame_slice(f);
        for (o, (&x, &e)) in out.frame_slice_mut(f).iter_mut().zip(v.frame_slice(f).iter().zip(e)) {
            *o = a_to * ((x - s_from * e) / a_from) + s_to * e;
        }
    }
    Ok(out)
}

/// Uniform-level reverse step.
pub fn ddim_step<T: Scalar>(
    v: &Clip<T>,
    t_from: usize,
    t_to: usize,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    let n = v.frames();
    ddim_step_levels(v, &vec![t_from; n], &vec![t_to; n], denoiser, schedule)
}

/// One-step clean estimate `(v − σ·ε̂)/α` at per-frame levels. Costs exactly one denoiser call,
/// or none when every frame is already clean.
pub fn predict_x0_levels<T: Scalar>(
    v: &Clip<T>,
    levels: &[usize],
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    check_remapped(schedule, levels)?;
    let coeffs = frame_coeffs(v, levels, schedule)?;
    if coeffs.iter().all(|&(_, s)| s == T::zero()) {
        return Ok(v.clone());
    }
    let eps = denoiser.eval(v, levels, schedule)?;
    let mut out = v.clone();
    for (f, &(a, s)) in coeffs.iter().enumerate() {
        let e = eps.frame_slice(f);
        for (o, &e) in out.frame_slice_mut(f).iter_mut().zip(e) {
            *o = (*o - s * e) / a;
        }
    }
    Ok(out)
}

pub fn predict_x0<T: Scalar>(
    v: &Clip<T>,
    t: usize,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    predict_x0_levels(v, &vec![t; v.frames()], denoiser, schedule)
}

/// DDIM inversion from `t_from` up to `t_to`, walking every remapped interval. At each interval
/// the noise estimate is anchored at the current (lower) level:
/// `v' = α_next·(v − σ_cur·ε̂)/α_cur + σ_next·ε̂`, `ε̂ = ε_θ(v, cur)`.
pub fn ddim_invert<T: Scalar>(
    v: &Clip<T>,
    t_from: usize,
    t_to: usize,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    let start = schedule.position(t_from)?;
    let end = schedule.position(t_to)?;
    if start >= end {
        return Err(Error::Ordering { from: t_from, to: t_to });
    }
    let n = v.frames();
    let mut cur = v.clone();
    for i in start..end {
        let lo = vec![schedule.time(i); n];
        let hi = vec![schedule.time(i + 1); n];
        let eps = denoiser.eval(&cur, &lo, schedule)?;
        cur = transport(&cur, &eps, &lo, &hi, schedule)?;
    }
    Ok(cur)
}

/// Denoises from `τ_S` to `τ₀` through every remapped time; exactly `S` denoiser calls.
pub fn full_denoise<T: Scalar>(
    init_noise: &Clip<T>,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    let mut v = init_noise.clone();
    for i in (0..schedule.ddim_steps()).rev() {
        v = ddim_step(&v, schedule.time(i + 1), schedule.time(i), denoiser, schedule)?;
    }
    Ok(v)
}
