//! Latent frames and clips.
//!
//! A [`Clip`] stores its frames contiguously in frame-major, row-major order. Videos are clips
//! too; generation appends frames to them.

use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty frame {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn into_clip(self) -> Clip<T> {
        Clip { frames: 1, height: self.height, width: self.width, data: self.data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ClipShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl ClipShape {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        Self { frames, height, width }
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip<T> {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// A generated video is an ordered, growable sequence of frames.
pub type Video<T> = Clip<T>;

impl<T: Scalar> Clip<T> {
    pub fn new(shape: ClipShape, data: Vec<T>) -> Result<Self> {
        if shape.height == 0 || shape.width == 0 {
            return Err(Error::Shape(format!("empty frame {}x{}", shape.height, shape.width)));
        }
        if data.len() != shape.len() {
            return Err(Error::Shape(format!("clip {shape:?} needs {} values, got {}", shape.len(), data.len())));
        }
        Ok(Self { frames: shape.frames, height: shape.height, width: shape.width, data })
    }

    pub fn zeros(shape: ClipShape) -> Self {
        Self { frames: shape.frames, height: shape.height, width: shape.width, data: vec![T::zero(); shape.len()] }
    }

    /// A clip with no frames yet, ready to be grown with [`Clip::push_frame`].
    pub fn empty(height: usize, width: usize) -> Self {
        Self { frames: 0, height, width, data: Vec::new() }
    }

    pub fn from_frames(frames: &[Frame<T>]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Shape("no frames".into()))?;
        let mut clip = Self::empty(first.height, first.width);
        for f in frames {
            clip.push_frame(f)?;
        }
        Ok(clip)
    }

    pub fn shape(&self) -> ClipShape {
        ClipShape::new(self.frames, self.height, self.width)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn frame_slice(&self, f: usize) -> &[T] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_slice_mut(&mut self, f: usize) -> &mut [T] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn frame(&self, f: usize) -> Frame<T> {
        Frame { height: self.height, width: self.width, data: self.frame_slice(f).to_vec() }
    }

    pub fn last_frame(&self) -> Option<Frame<T>> {
        self.frames.checked_sub(1).map(|f| self.frame(f))
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = Frame<T>> + '_ {
        (0..self.frames).map(|f| self.frame(f))
    }

    pub fn push_frame(&mut self, frame: &Frame<T>) -> Result<()> {
        if frame.height != self.height || frame.width != self.width {
            return Err(Error::Shape(format!(
                "frame {}x{} does not fit clip of {}x{}",
                frame.height, frame.width, self.height, self.width
            )));
        }
        self.data.extend_from_slice(&frame.data);
        self.frames += 1;
        Ok(())
    }

    pub fn append(&mut self, other: &Clip<T>) -> Result<()> {
        if other.height != self.height || other.width != self.width {
            return Err(Error::Shape("cannot append clips of different frame size".into()));
        }
        self.data.extend_from_slice(&other.data);
        self.frames += other.frames;
        Ok(())
    }

    /// Frames `start..end` as a new clip.
    pub fn sub_clip(&self, start: usize, end: usize) -> Clip<T> {
        assert!(start <= end && end <= self.frames, "sub_clip {start}..{end} of {}", self.frames);
        let n = self.frame_len();
        Clip { frames: end - start, height: self.height, width: self.width, data: self.data[start * n..end * n].to_vec() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        self.with_data(self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Clip<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn check_same_shape(&self, other: &Clip<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// `‖self − reference‖ / ‖reference‖`.
    pub fn rel_l2(&self, reference: &Clip<T>) -> T {
        let diff: T = self.data.iter().zip(&reference.data).map(|(&a, &b)| (a - b) * (a - b)).sum();
        diff.sqrt() / reference.norm()
    }

    /// Mean of the squared entries.
    pub fn mean_square(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Clip<U> {
        Clip {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }

    fn with_data(&self, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { frames: self.frames, height: self.height, width: self.width, data }
    }
}
