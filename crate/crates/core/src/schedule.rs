//! Variance-preserving noise schedule and the DDIM time remapping.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Parameters of a linear-β schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub total_steps: usize,
    pub ddim_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { total_steps: 1000, ddim_steps: 50, beta_min: 1e-4, beta_max: 0.02 }
    }
}

impl ScheduleParams {
    pub fn build<T: Scalar>(&self) -> Result<NoiseSchedule<T>> {
        make_schedule(self.total_steps, self.ddim_steps, self.beta_min, self.beta_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<T> {
    alpha_bar: Vec<T>,
    ddim_times: Vec<usize>,
}

/// Cumulative signal variances `ᾱ_t = ∏_{s≤t} (1 − β_s)` of a linear β ramp.
pub fn linear_alpha_bar<T: Scalar>(total_steps: usize, beta_min: f64, beta_max: f64) -> Vec<T> {
    let denom = (total_steps.max(2) - 1) as f64;
    let mut acc = 1.0f64;
    (0..total_steps)
        .map(|t| {
            let beta = beta_min + (beta_max - beta_min) * t as f64 / denom;
            acc *= 1.0 - beta;
            T::lit(acc)
        })
        .collect()
}

/// Linear-β schedule over `total_steps` DDPM steps with `ddim_steps + 1` evenly spaced remapped
/// times, both endpoints included.
pub fn make_schedule<T: Scalar>(
    total_steps: usize,
    ddim_steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule<T>> {
    if ddim_steps < 1 {
        return Err(Error::Schedule("need at least one DDIM step".into()));
    }
    if total_steps < ddim_steps + 1 {
        return Err(Error::Schedule(format!(
            "{total_steps} DDPM steps cannot hold {} distinct DDIM times",
            ddim_steps + 1
        )));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Schedule(format!("need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")));
    }
    let last = total_steps - 1;
    let ddim_times = (0..=ddim_steps).map(|i| (i * last + ddim_steps / 2) / ddim_steps).collect();
    NoiseSchedule::from_parts(linear_alpha_bar(total_steps, beta_min, beta_max), ddim_times)
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Builds a schedule from explicit `ᾱ` values and remapped times, checking every invariant.
    pub fn from_parts(alpha_bar: Vec<T>, ddim_times: Vec<usize>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::Schedule("empty alpha_bar".into()));
        }
        if alpha_bar.iter().any(|&a| !(a > T::zero() && a <= T::one())) {
            return Err(Error::Schedule("alpha_bar values must lie in (0, 1]".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Schedule("alpha_bar must be strictly decreasing".into()));
        }
        if ddim_times.len() < 2 || ddim_times[0] != 0 {
            return Err(Error::Schedule("ddim_times must start at 0 and hold at least two times".into()));
        }
        if ddim_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Schedule("ddim_times must be strictly increasing".into()));
        }
        if *ddim_times.last().unwrap() >= alpha_bar.len() {
            return Err(Error::Schedule("ddim_times exceed the schedule length".into()));
        }
        Ok(Self { alpha_bar, ddim_times })
    }

    pub fn total_steps(&self) -> usize {
        self.alpha_bar.len()
    }

    /// Number of DDIM steps `S`; there are `S + 1` remapped times.
    pub fn ddim_steps(&self) -> usize {
        self.ddim_times.len() - 1
    }

    pub fn ddim_times(&self) -> &[usize] {
        &self.ddim_times
    }

    pub fn alpha_bar(&self) -> &[T] {
        &self.alpha_bar
    }

    /// Remapped time `τ_i`.
    pub fn time(&self, i: usize) -> usize {
        self.ddim_times[i]
    }

    /// `τ_S`, the pure-noise end of the remapped chain.
    pub fn top(&self) -> usize {
        *self.ddim_times.last().unwrap()
    }

    /// Position of `t` in the remapped chain.
    pub fn position(&self, t: usize) -> Result<usize> {
        self.ddim_times.binary_search(&t).map_err(|_| Error::NotRemapped(t))
    }

    /// `(α_t, σ_t) = (√ᾱ_t, √(1 − ᾱ_t))`.
    pub fn signal_noise(&self, t: usize) -> Result<(T, T)> {
        let a = *self
            .alpha_bar
            .get(t)
            .ok_or(Error::TimeOutOfRange { t, total: self.alpha_bar.len() })?;
        Ok((a.sqrt(), (T::one() - a).sqrt()))
    }

    /// Forward map `α_t·x + σ_t·ε`.
    pub fn forward_noise(&self, x: &[T], eps: &[T], t: usize) -> Result<Vec<T>> {
        let (a, s) = self.signal_noise(t)?;
        Ok(x.iter().zip(eps).map(|(&x, &e)| a * x + s * e).collect())
    }
}
