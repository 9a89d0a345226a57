//! Long-video generation paradigms: chunk-by-chunk sliding windows and the FIFO diagonal queue.

use serde::{Deserialize, Serialize};

use crate::rng::{Purpose, StreamKey};
use crate::sampler::{ddim_step, ddim_step_levels, full_denoise, DenoiserFn};
use crate::{Clip, Error, Frame, NoiseSchedule, Result, Scalar, Video};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Chunk,
    #[default]
    Fifo,
}

impl Paradigm {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Chunk => "chunk",
            Self::Fifo => "fifo",
        }
    }
}

impl std::str::FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chunk" => Ok(Self::Chunk),
            "fifo" => Ok(Self::Fifo),
            other => Err(Error::InvalidArgument(format!("unknown paradigm {other:?}"))),
        }
    }
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Overwrites the first `tail.frames()` frames of `v` with the tail forward-noised to level `t`,
/// reusing the matching frames of `noise` as the forward-map noise.
pub fn pin_tail<T: Scalar>(v: &mut Clip<T>, tail: &Clip<T>, noise: &Clip<T>, t: usize, schedule: &NoiseSchedule<T>) -> Result<()> {
    let (a, s) = schedule.signal_noise(t)?;
    for f in 0..tail.frames() {
        let (x, e) = (tail.frame_slice(f), noise.frame_slice(f));
        for ((o, &x), &e) in v.frame_slice_mut(f).iter_mut().zip(x).zip(e) {
            *o = a * x + s * e;
        }
    }
    Ok(())
}

/// Full DDIM denoising of `init_noise` while its leading frames are held to `tail`
/// (freeze-and-renoise before every denoiser call). The returned clip reproduces `tail` exactly.
pub fn denoise_conditioned<T: Scalar>(
    init_noise: &Clip<T>,
    tail: &Clip<T>,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Clip<T>> {
    if tail.frames() > init_noise.frames() || tail.frame_len() != init_noise.frame_len() {
        return Err(Error::Shape("conditioning tail does not fit the clip".into()));
    }
    let mut v = init_noise.clone();
    if tail.frames() < v.frames() {
        for i in (0..schedule.ddim_steps()).rev() {
            pin_tail(&mut v, tail, init_noise, schedule.time(i + 1), schedule)?;
            v = ddim_step(&v, schedule.time(i + 1), schedule.time(i), denoiser, schedule)?;
        }
    }
    for f in 0..tail.frames() {
        v.frame_slice_mut(f).copy_from_slice(tail.frame_slice(f));
    }
    Ok(v)
}

/// One sliding-window step: denoises an M-frame clip conditioned on the last `overlap` frames of
/// `video`. The first `overlap` frames of the result are those frames, bit for bit.
pub fn chunk_step<T: Scalar>(
    video: &Video<T>,
    init_noise: &Clip<T>,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
    overlap: usize,
) -> Result<Clip<T>> {
    if overlap >= init_noise.frames() {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be smaller than the chunk length {}",
            init_noise.frames()
        )));
    }
    if overlap > video.frames() {
        return Err(Error::InvalidArgument(format!("overlap {overlap} exceeds the {} generated frames", video.frames())));
    }
    let tail = video.sub_clip(video.frames() - overlap, video.frames());
    denoise_conditioned(init_noise, &tail, denoiser, schedule)
}

/// Frames at strictly increasing noise levels. Between steps the front sits at `τ₀` and frame `i`
/// at `τ_i`; the fresh frame of the next step enters at `τ_L`, `L = M·P`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoisingQueue<T> {
    frames: Clip<T>,
    levels: Vec<usize>,
    window: usize,
    partitions: usize,
}

impl<T: Scalar> DenoisingQueue<T> {
    pub fn new(frames: Clip<T>, levels: Vec<usize>, window: usize, partitions: usize) -> Result<Self> {
        let q = Self { frames, levels, window, partitions };
        if q.frames.frames() != q.len() || q.levels.len() != q.len() || q.is_empty() {
            return Err(Error::Queue(format!(
                "expected {} frames and levels, got {} and {}",
                q.len(),
                q.frames.frames(),
                q.levels.len()
            )));
        }
        if q.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Queue("noise levels must increase along the queue".into()));
        }
        Ok(q)
    }

    /// `L = M·P`.
    pub fn len(&self) -> usize {
        self.window * self.partitions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn frames(&self) -> &Clip<T> {
        &self.frames
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn front(&self) -> Frame<T> {
        self.frames.frame(0)
    }

    /// Checks the between-steps ladder `levels = τ₀..τ_{L−1}` and that `τ_L` exists.
    pub fn validate(&self, schedule: &NoiseSchedule<T>) -> Result<()> {
        if self.len() > schedule.ddim_steps() {
            return Err(Error::Queue(format!(
                "a queue of {} frames needs at least {} DDIM steps, schedule has {}",
                self.len(),
                self.len(),
                schedule.ddim_steps()
            )));
        }
        if self.levels != schedule.ddim_times()[..self.len()] {
            return Err(Error::Queue("levels are not the remapped ladder τ₀..τ_{L−1}".into()));
        }
        Ok(())
    }

    /// The state one step sees: the queue without its clean front, with `fresh` appended at the
    /// top, and the levels `τ₁..τ_L` of those frames.
    pub fn advanced_state(&self, fresh: &Frame<T>, schedule: &NoiseSchedule<T>) -> Result<(Clip<T>, Vec<usize>)> {
        self.validate(schedule)?;
        let mut clip = self.frames.sub_clip(1, self.len());
        clip.push_frame(fresh)?;
        Ok((clip, schedule.ddim_times()[1..=self.len()].to_vec()))
    }
}

/// Builds the ladder by forward-noising frame `i` of `base` to `τ_i`.
pub fn fifo_init_from_clip<T: Scalar>(
    base: &Clip<T>,
    schedule: &NoiseSchedule<T>,
    window: usize,
    partitions: usize,
    key: StreamKey,
) -> Result<DenoisingQueue<T>> {
    let len = window * partitions;
    if len == 0 || base.frames() != len {
        return Err(Error::Queue(format!("base clip has {} frames, queue needs {len}", base.frames())));
    }
    if len > schedule.ddim_steps() {
        return Err(Error::Queue(format!(
            "a queue of {len} frames needs at least {len} DDIM steps, schedule has {}",
            schedule.ddim_steps()
        )));
    }
    let eps: Vec<T> = key.with_purpose(Purpose::Renoise).normals(base.data().len());
    let mut frames = base.clone();
    let n = base.frame_len();
    for i in 0..len {
        let noised = schedule.forward_noise(base.frame_slice(i), &eps[i * n..(i + 1) * n], schedule.time(i))?;
        frames.frame_slice_mut(i).copy_from_slice(&noised);
    }
    DenoisingQueue::new(frames, schedule.ddim_times()[..len].to_vec(), window, partitions)
}

/// Latent warm-up: fully denoises one `M·P`-frame clip from warm-up noise, then forward-noises
/// it onto the ladder. The condition enters through the denoiser.
pub fn fifo_init<T: Scalar>(
    height: usize,
    width: usize,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
    window: usize,
    partitions: usize,
    key: StreamKey,
) -> Result<DenoisingQueue<T>> {
    let len = window * partitions;
    if len == 0 || len > schedule.ddim_steps() {
        return Err(Error::Queue(format!(
            "a queue of {len} frames needs at least {len} DDIM steps, schedule has {}",
            schedule.ddim_steps()
        )));
    }
    let shape = crate::ClipShape::new(len, height, width);
    let noise = Clip::new(shape, key.with_purpose(Purpose::WarmUp).normals(shape.len()))?;
    let base = full_denoise(&noise, denoiser, schedule)?;
    fifo_init_from_clip(&base, schedule, window, partitions, key)
}

/// One diagonal denoising update: the clean front is dequeued and returned, `fresh` enters at
/// `τ_L`, and every frame moves down one remapped level in a single whole-queue evaluation.
pub fn fifo_step<T: Scalar>(
    queue: &DenoisingQueue<T>,
    fresh: &Frame<T>,
    denoiser: &DenoiserFn<'_, T>,
    schedule: &NoiseSchedule<T>,
) -> Result<(DenoisingQueue<T>, Frame<T>)> {
    let (state, from) = queue.advanced_state(fresh, schedule)?;
    let to = schedule.ddim_times()[..queue.len()].to_vec();
    let frames = ddim_step_levels(&state, &from, &to, denoiser, schedule)?;
    let next = DenoisingQueue::new(frames, to, queue.window, queue.partitions)?;
    Ok((next, queue.front()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParadigmState<T> {
    Chunk,
    Fifo(DenoisingQueue<T>),
}

/// One generation path: the video so far, the current anchor and the paradigm state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    video: Video<T>,
    anchor: Option<Frame<T>>,
    state: ParadigmState<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// A chunk trajectory with nothing generated and no anchor.
    pub fn chunk(height: usize, width: usize) -> Self {
        Self { video: Clip::empty(height, width), anchor: None, state: ParadigmState::Chunk }
    }

    /// FIFO trajectory; nothing is emitted yet and the queue front is the anchor.
    pub fn fifo(queue: DenoisingQueue<T>) -> Self {
        let front = queue.front();
        let video = Clip::empty(front.height(), front.width());
        Self { video, anchor: Some(front), state: ParadigmState::Fifo(queue) }
    }

    pub fn video(&self) -> &Video<T> {
        &self.video
    }

    pub fn into_video(self) -> Video<T> {
        self.video
    }

    pub fn anchor(&self) -> Option<&Frame<T>> {
        self.anchor.as_ref()
    }

    pub fn state(&self) -> &ParadigmState<T> {
        &self.state
    }

    pub fn queue(&self) -> Option<&DenoisingQueue<T>> {
        match &self.state {
            ParadigmState::Fifo(q) => Some(q),
            ParadigmState::Chunk => None,
        }
    }

    /// Number of fully denoised frames available as context.
    pub fn clean_len(&self) -> usize {
        self.video.frames() + usize::from(self.queue().is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.clean_len() == 0
    }

    // Fully denoised frame `i`, oldest first; for FIFO the queue front comes last.
    fn clean_frame(&self, i: usize) -> Frame<T> {
        match (&self.state, i == self.video.frames()) {
            (ParadigmState::Fifo(q), true) => q.front(),
            _ => self.video.frame(i),
        }
    }

    /// The last `frames` fully denoised frames, left-padded with the oldest one when fewer exist.
    pub fn context_clip(&self, frames: usize) -> Option<Clip<T>> {
        let have = self.clean_len();
        if have == 0 || frames == 0 {
            return None;
        }
        let start = have.saturating_sub(frames);
        let mut clip = Clip::empty(self.video.height(), self.video.width());
        for _ in have - start..frames {
            clip.push_frame(&self.clean_frame(start)).ok()?;
        }
        for i in start..have {
            clip.push_frame(&self.clean_frame(i)).ok()?;
        }
        Some(clip)
    }

    /// Resets the anchor to the clean frame `lag` positions before the most recent one.
    pub fn refresh_anchor(&mut self, lag: usize) {
        let have = self.clean_len();
        if have > 0 {
            self.anchor = Some(self.clean_frame(have - 1 - lag.min(have - 1)));
        }
    }

    /// Appends the frames of a committed chunk that are new (everything after the overlap).
    pub fn commit_chunk(&mut self, chunk: &Clip<T>, overlap: usize) -> Result<()> {
        self.video.append(&chunk.sub_clip(overlap, chunk.frames()))
    }

    pub fn commit_fifo(&mut self, queue: DenoisingQueue<T>, emitted: &Frame<T>) -> Result<()> {
        self.video.push_frame(emitted)?;
        self.state = ParadigmState::Fifo(queue);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{build_corpus, gen_clip, CorpusSpec, MixtureDenoiser, SubjectSpec};
    use crate::{make_schedule, ClipShape};

    fn noise(shape: ClipShape, seed: u64) -> Clip<f64> {
        Clip::new(shape, StreamKey::new(seed, Purpose::Test).normals(shape.len())).unwrap()
    }

    fn corpus() -> Vec<Clip<f64>> {
        build_corpus(&CorpusSpec { families: 6, variants: 2, clip_frames: 12, height: 8, width: 8, seed: 3 })
            .unwrap()
            .clips
    }

    #[test]
    fn zero_overlap_is_full_denoise() {
        let s = make_schedule(1000, 10, 1e-4, 0.02).unwrap();
        let model = MixtureDenoiser::new(corpus()).unwrap();
        let den = DenoiserFn::new(&model);
        let init = noise(ClipShape::new(4, 8, 8), 1);
        let video = Clip::empty(8, 8);
        let a = chunk_step(&video, &init, &den, &s, 0).unwrap();
        let b = full_denoise(&init, &den, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlap_is_bit_preserved() {
        let s = make_schedule(1000, 10, 1e-4, 0.02).unwrap();
        let spec = SubjectSpec { velocity: (0.0, 0.0), ..Default::default() };
        let still: Clip<f64> = gen_clip(&spec, 12, 8, 8, None).unwrap();
        let model = MixtureDenoiser::new(vec![still.clone()]).unwrap();
        let den = DenoiserFn::new(&model);
        let video = still.sub_clip(0, 3);
        let out = chunk_step(&video, &noise(ClipShape::new(4, 8, 8), 2), &den, &s, 1).unwrap();
        assert_eq!(out.frames(), 4);
        assert_eq!(out.frame_slice(0), video.frame_slice(2));
        assert_eq!(den.calls(), 10);
    }

    #[test]
    fn chunk_rejects_bad_overlap() {
        let s = make_schedule(1000, 10, 1e-4, 0.02).unwrap();
        let model = MixtureDenoiser::new(corpus()).unwrap();
        let den = DenoiserFn::new(&model);
        let init = noise(ClipShape::new(4, 8, 8), 1);
        assert!(chunk_step(&Clip::empty(8, 8), &init, &den, &s, 4).is_err());
        assert!(chunk_step(&Clip::empty(8, 8), &init, &den, &s, 1).is_err());
    }

    #[test]
    fn degenerate_queue() {
        let s = make_schedule(1000, 4, 1e-4, 0.02).unwrap();
        let model = MixtureDenoiser::new(corpus()).unwrap();
        let den = DenoiserFn::new(&model);
        let q = fifo_init(8, 8, &den, &s, 1, 1, StreamKey::new(1, Purpose::WarmUp)).unwrap();
        assert_eq!(q.levels(), &[0]);
        assert_eq!(den.calls(), 4);
        let fresh = noise(ClipShape::new(1, 8, 8), 5).frame(0);
        let (next, out) = fifo_step(&q, &fresh, &den, &s).unwrap();
        assert_eq!(out, q.front());
        let direct = ddim_step(&fresh.clone().into_clip(), s.time(1), s.time(0), &den, &s).unwrap();
        assert_eq!(next.frames(), &direct);
    }

    #[test]
    fn ladder_levels_and_invariants_hold_over_steps() {
        let s = make_schedule(1000, 8, 1e-4, 0.02).unwrap();
        let model = MixtureDenoiser::new(corpus()).unwrap();
        let den = DenoiserFn::new(&model);
        let mut q = fifo_init(8, 8, &den, &s, 4, 2, StreamKey::new(2, Purpose::WarmUp)).unwrap();
        assert_eq!(q.levels(), &s.ddim_times()[..8]);
        let before = den.calls();
        let mut emitted = 0;
        for step in 0..8u64 {
            let fresh = noise(ClipShape::new(1, 8, 8), 100 + step).frame(0);
            let (next, _) = fifo_step(&q, &fresh, &den, &s).unwrap();
            q = next;
            emitted += 1;
            assert_eq!(q.len(), 8);
            assert!(q.levels().windows(2).all(|w| w[0] < w[1]));
            assert_eq!(q.levels()[0], s.time(0));
        }
        assert_eq!(emitted, 8);
        assert_eq!(den.calls() - before, 8);
    }

    #[test]
    fn malformed_queue_rejected() {
        let s = make_schedule(1000, 8, 1e-4, 0.02).unwrap();
        let frames = noise(ClipShape::new(2, 8, 8), 1);
        assert!(DenoisingQueue::new(frames.clone(), vec![20, 0], 2, 1).is_err());
        assert!(DenoisingQueue::new(frames.clone(), vec![0], 2, 1).is_err());
        let off_ladder = DenoisingQueue::new(frames, vec![0, 5], 2, 1).unwrap();
        let model = MixtureDenoiser::new(corpus()).unwrap();
        let den = DenoiserFn::new(&model);
        let fresh = noise(ClipShape::new(1, 8, 8), 2).frame(0);
        assert!(matches!(fifo_step(&off_ladder, &fresh, &den, &s), Err(Error::Queue(_))));
    }

    #[test]
    fn insufficient_schedule_resolution() {
        let s = make_schedule(1000, 4, 1e-4, 0.02).unwrap();
        let model = MixtureDenoiser::new(corpus()).unwrap();
        let den = DenoiserFn::new(&model);
        assert!(fifo_init(8, 8, &den, &s, 3, 2, StreamKey::new(1, Purpose::WarmUp)).is_err());
    }

    #[test]
    fn warm_up_from_corpus_clip_reconstructs_it() {
        let s = make_schedule(1000, 8, 1e-4, 0.02).unwrap();
        let clips = corpus();
        let model = MixtureDenoiser::new(clips.clone()).unwrap();
        let den = DenoiserFn::new(&model);
        let (m, p) = (4, 2);
        let x = clips[0].sub_clip(0, m * p);
        let mut q = fifo_init_from_clip(&x, &s, m, p, StreamKey::new(9, Purpose::WarmUp)).unwrap();
        let mut out = Clip::empty(8, 8);
        for step in 0..m as u64 {
            let fresh = noise(ClipShape::new(1, 8, 8), 300 + step).frame(0);
            let (next, frame) = fifo_step(&q, &fresh, &den, &s).unwrap();
            out.push_frame(&frame).unwrap();
            q = next;
        }
        let err = out.rel_l2(&x.sub_clip(0, m));
        assert!(err < 0.1, "warm-up reconstruction error {err}");
    }

    #[test]
    fn context_and_anchor_selection() {
        let clip = noise(ClipShape::new(3, 8, 8), 4);
        let mut t = Trajectory::chunk(8, 8);
        assert!(t.context_clip(2).is_none());
        t.commit_chunk(&clip, 0).unwrap();
        assert_eq!(t.video().frames(), 3);
        let ctx = t.context_clip(5).unwrap();
        assert_eq!(ctx.frames(), 5);
        assert_eq!(ctx.frame_slice(0), clip.frame_slice(0));
        assert_eq!(ctx.frame_slice(4), clip.frame_slice(2));
        t.refresh_anchor(0);
        assert_eq!(t.anchor().unwrap(), &clip.frame(2));
        t.refresh_anchor(1);
        assert_eq!(t.anchor().unwrap(), &clip.frame(1));
        t.refresh_anchor(10);
        assert_eq!(t.anchor().unwrap(), &clip.frame(0));
    }
}
