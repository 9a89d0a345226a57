//! Beam search over initial diffusion noises for long-video generation, on a small synthetic world.
//!
//! Everything is generic over the scalar type; `f64` aliases are provided at the root.

pub mod clip;
pub mod error;
pub mod metrics;
pub mod noisepool;
pub mod paradigms;
pub mod reward;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod search;
pub mod toyworld;

pub use clip::{Clip, ClipShape, Frame, Video};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use schedule::{make_schedule, NoiseSchedule, ScheduleParams};

pub type Clip64 = Clip<f64>;
pub type Clip32 = Clip<f32>;
pub type Frame64 = Frame<f64>;
pub type Frame32 = Frame<f32>;
pub type Schedule64 = NoiseSchedule<f64>;
pub type Schedule32 = NoiseSchedule<f32>;
