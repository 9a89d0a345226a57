//! Beam search over initial noises, with greedy and best-of-N baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::subject_consistency;
use crate::noisepool::{build_pool, Candidate, PoolMix, PoolParams, Strategy};
use crate::paradigms::{chunk_step, fifo_init, fifo_step, pin_tail, Paradigm, ParadigmState, Trajectory};
use crate::reward::{reward_local, RewardVariant};
use crate::rng::{Purpose, StreamKey};
use crate::sampler::{predict_x0, predict_x0_levels, DenoiserFn};
use crate::{Clip, ClipShape, Error, Frame, NoiseSchedule, Result, Scalar, Video};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub paradigm: Paradigm,
    /// Beam size `k`.
    pub beam: usize,
    /// Candidates per slot `n`.
    pub candidates: usize,
    pub steps: usize,
    pub reward: RewardVariant,
    pub pool: PoolParams,
    pub anchor_lag: usize,
    /// Chunk overlap in frames.
    pub overlap: usize,
    /// Frames per model window `M`.
    pub window: usize,
    /// FIFO partitions `P`.
    pub partitions: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::Fifo,
            beam: 2,
            candidates: 5,
            steps: 16,
            reward: RewardVariant::Full,
            pool: PoolParams::default(),
            anchor_lag: 0,
            overlap: 1,
            window: 4,
            partitions: 2,
            height: 16,
            width: 16,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate<T: Scalar>(&self, schedule: &NoiseSchedule<T>) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.beam == 0 || self.candidates == 0 {
            return bad(format!("beam {} and candidates {} must be at least 1", self.beam, self.candidates));
        }
        if self.steps == 0 || self.window == 0 || self.partitions == 0 {
            return bad("steps, window and partitions must be at least 1".into());
        }
        self.pool.validate()?;
        match self.paradigm {
            Paradigm::Chunk if self.overlap >= self.window => {
                bad(format!("overlap {} must be smaller than the window {}", self.overlap, self.window))
            }
            Paradigm::Fifo if self.queue_len() > schedule.ddim_steps() => bad(format!(
                "a FIFO queue of {} frames needs at least {} DDIM steps, schedule has {}",
                self.queue_len(),
                self.queue_len(),
                schedule.ddim_steps()
            )),
            _ => Ok(()),
        }
    }

    pub fn queue_len(&self) -> usize {
        self.window * self.partitions
    }

    /// The no-search baseline: one A1 candidate per step.
    pub fn greedy(&self) -> Self {
        Self { beam: 1, candidates: 1, pool: PoolParams { mix: PoolMix::only(Strategy::A1), ..self.pool }, ..*self }
    }

    fn noise_frames(&self) -> usize {
        match self.paradigm {
            Paradigm::Chunk => self.window,
            Paradigm::Fifo => 1,
        }
    }

    fn entry_level<T: Scalar>(&self, schedule: &NoiseSchedule<T>) -> usize {
        match self.paradigm {
            Paradigm::Chunk => schedule.top(),
            Paradigm::Fifo => schedule.time(self.queue_len()),
        }
    }
}

/// Exact denoiser-call count of [`beam_search_generate`] for `cfg`.
pub fn predicted_calls<T: Scalar>(cfg: &SearchConfig, schedule: &NoiseSchedule<T>) -> u64 {
    let (k, n, steps, s) = (cfg.beam as u64, cfg.candidates as u64, cfg.steps as u64, schedule.ddim_steps() as u64);
    let counts = cfg.pool.mix.allocate(cfg.candidates);
    let inverting = counts[2] + counts[3] > 0;
    match cfg.paradigm {
        Paradigm::Chunk => {
            // The first chunk has no context, so its pool falls back to A1 and inverts nothing.
            let inversion = if inverting { (steps - 1) * k * s } else { 0 };
            steps * k * (n + s) + inversion
        }
        Paradigm::Fifo => {
            let inversion = if inverting { cfg.queue_len() as u64 } else { 0 };
            s + steps * k * (n + 1 + inversion)
        }
    }
}

/// Exact denoiser-call count of [`greedy_generate`].
pub fn predicted_greedy_calls<T: Scalar>(cfg: &SearchConfig, schedule: &NoiseSchedule<T>) -> u64 {
    let g = cfg.greedy();
    predicted_calls(&g, schedule) - (g.steps as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub slot: usize,
    pub candidate: usize,
    pub strategy: Strategy,
    pub score: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    pub records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn step(&self, step: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.step == step)
    }
}

/// `k` trajectories advanced in lock step.
#[derive(Clone, Debug, PartialEq)]
pub struct Beam<T> {
    pub slots: Vec<Trajectory<T>>,
    pub step: usize,
    pub seed: u64,
}

impl<T: Scalar> Beam<T> {
    /// Initial beam: `k` copies of one fresh trajectory.
    pub fn init(cfg: &SearchConfig, denoiser: &DenoiserFn<'_, T>, schedule: &NoiseSchedule<T>) -> Result<Self> {
        cfg.validate(schedule)?;
        let root = match cfg.paradigm {
            Paradigm::Chunk => Trajectory::chunk(cfg.height, cfg.width),
            Paradigm::Fifo => {
                let key = StreamKey::new(cfg.seed, Purpose::WarmUp);
                let queue = fifo_init(cfg.height, cfg.width, denoiser, schedule, cfg.window, cfg.partitions, key)?;
                let mut t = Trajectory::fifo(queue);
                t.refresh_anchor(cfg.anchor_lag);
                t
            }
        };
        Ok(Self { slots: vec![root; cfg.beam], step: 0, seed: cfg.seed })
    }
}

// Evaluation clip for a candidate: the one-step prediction of the state it would commit to.
fn predict_candidate<T: Scalar>(
    cfg: &SearchConfig,
    traj: &Trajectory<T>,
    noise: &Clip<T>,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    match traj.state() {
        ParadigmState::Chunk => {
            let video = traj.video();
            let overlap = cfg.overlap.min(video.frames());
            let tail = video.sub_clip(video.frames() - overlap, video.frames());
            let mut v = noise.clone();
            pin_tail(&mut v, &tail, noise, schedule.top(), schedule)?;
            predict_x0(&v, schedule.top(), denoiser, schedule)
        }
        ParadigmState::Fifo(queue) => {
            let (state, levels) = queue.advanced_state(&noise.frame(0), schedule)?;
            predict_x0_levels(&state, &levels, denoiser, schedule)
        }
    }
}

fn score_prediction<T: Scalar>(reward: RewardVariant, anchor: Option<&Frame<T>>, predicted: &Clip<T>) -> Result<T> {
    match anchor {
        Some(a) => reward.score(a, predicted),
        None => reward_local(predicted),
    }
}

/// Scores every candidate against its slot's anchor with one denoiser call each.
pub fn score_candidates<T: Scalar>(
    cands: &mut [Candidate<T>],
    beam: &Beam<T>,
    cfg: &SearchConfig,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<()> {
    cands.par_iter_mut().try_for_each(|c| {
        let traj = beam
            .slots
            .get(c.slot)
            .ok_or_else(|| Error::InvalidArgument(format!("candidate bound to missing slot {}", c.slot)))?;
        let predicted = predict_candidate(cfg, traj, &c.noise, denoiser, schedule)?;
        let anchor = traj.anchor().cloned().or_else(|| traj.video().iter_frames().next());
        c.score = Some(score_prediction(cfg.reward, anchor.as_ref(), &predicted)?);
        Ok(())
    })
}

/// Indices of the `k` best candidates, best first; ties go to the lower (slot, candidate).
pub fn select_top_k<T: Scalar>(scored: &[Candidate<T>], k: usize) -> Result<Vec<usize>> {
    if scored.len() < k {
        return Err(Error::InvalidArgument(format!("cannot select {k} of {} candidates", scored.len())));
    }
    let mut keyed = Vec::with_capacity(scored.len());
    for (i, c) in scored.iter().enumerate() {
        match c.score {
            Some(s) if !s.is_nan() => keyed.push((s, c.slot, c.index, i)),
            _ => return Err(Error::InvalidArgument(format!("candidate {i} has no score"))),
        }
    }
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(keyed.into_iter().take(k).map(|e| e.3).collect())
}

fn commit<T: Scalar>(
    cfg: &SearchConfig,
    source: &Trajectory<T>,
    noise: &Clip<T>,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Trajectory<T>> {
    let mut next = source.clone();
    match source.state() {
        ParadigmState::Chunk => {
            let overlap = cfg.overlap.min(source.video().frames());
            let chunk = chunk_step(source.video(), noise, denoiser, schedule, overlap)?;
            next.commit_chunk(&chunk, overlap)?;
        }
        ParadigmState::Fifo(queue) => {
            let (queue, emitted) = fifo_step(queue, &noise.frame(0), denoiser, schedule)?;
            next.commit_fifo(queue, &emitted)?;
        }
    }
    next.refresh_anchor(cfg.anchor_lag);
    Ok(next)
}

fn run<T: Scalar>(
    cfg: &SearchConfig,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
    trace: &mut TraceLog,
    scoring: bool,
) -> Result<Video<T>> {
    let mut beam = Beam::init(cfg, denoiser, schedule)?;
    let shape = ClipShape::new(cfg.noise_frames(), cfg.height, cfg.width);
    let entry = cfg.entry_level(schedule);
    for step in 0..cfg.steps {
        let pools = beam
            .slots
            .par_iter()
            .enumerate()
            .map(|(slot, traj)| {
                let context = traj.context_clip(shape.frames);
                let key = StreamKey::new(cfg.seed, Purpose::CandidateNoise).at(step as u64, slot as u64, 0);
                build_pool(cfg.candidates, context.as_ref(), shape, entry, &cfg.pool, denoiser, schedule, key)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cands: Vec<Candidate<T>> = pools.into_iter().flatten().collect();
        if scoring {
            score_candidates(&mut cands, &beam, cfg, denoiser, schedule)?;
        } else {
            cands.iter_mut().for_each(|c| c.score = Some(T::zero()));
        }
        let winners = select_top_k(&cands, cfg.beam)?;
        for (i, c) in cands.iter().enumerate() {
            trace.records.push(TraceRecord {
                step,
                slot: c.slot,
                candidate: c.index,
                strategy: c.strategy,
                score: c.score.map_or(f64::NAN, |s| s.to_f64_lossy()),
                selected: winners.contains(&i),
            });
        }
        let slots = winners
            .par_iter()
            .map(|&w| commit(cfg, &beam.slots[cands[w].slot], &cands[w].noise, denoiser, schedule))
            .collect::<Result<Vec<_>>>()?;
        beam = Beam { slots, step: step + 1, seed: cfg.seed };
    }
    Ok(beam.slots.swap_remove(0).into_video())
}

/// Beam search: per step, `n` candidates per slot are scored by one-step prediction, the best
/// `k` overall are fully committed, and each inherits its source slot's trajectory. Returns the
/// video of the best final trajectory; `trace` keeps every record written before any error.
pub fn beam_search_generate<T: Scalar>(
    cfg: &SearchConfig,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
    trace: &mut TraceLog,
) -> Result<Video<T>> {
    run(cfg, denoiser, schedule, trace, true)
}

/// One A1 noise per step, committed without scoring.
pub fn greedy_generate<T: Scalar>(
    cfg: &SearchConfig,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Video<T>> {
    run(&cfg.greedy(), denoiser, schedule, &mut TraceLog::default(), false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestOfN<T> {
    pub video: Video<T>,
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Seed of best-of-N run `i`; run 0 uses the configured seed.
pub fn run_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// `n_total` greedy videos with seeds `seed + i`; returns the one with the highest subject
/// consistency (first on ties).
pub fn best_of_n<T: Scalar>(
    cfg: &SearchConfig,
    n_total: usize,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<BestOfN<T>> {
    if n_total == 0 {
        return Err(Error::InvalidArgument("best-of-N needs at least one run".into()));
    }
    let mut best: Option<BestOfN<T>> = None;
    let mut scores = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let run_cfg = SearchConfig { seed: run_seed(cfg.seed, i), ..*cfg };
        let video = greedy_generate(&run_cfg, denoiser, schedule)?;
        let score = subject_consistency(&video)?;
        scores.push(score);
        if best.as_ref().is_none_or(|b| score > b.scores[b.index]) {
            best = Some(BestOfN { video, index: i, scores: Vec::new() });
        }
        if let Some(b) = best.as_mut() {
            b.scores.clone_from(&scores);
        }
    }
    Ok(best.expect("n_total ≥ 1"))
}
