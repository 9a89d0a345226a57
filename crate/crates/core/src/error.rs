use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("time index {t} out of range for a schedule of {total} steps")]
    TimeOutOfRange { t: usize, total: usize },

    #[error("time index {0} is not one of the remapped DDIM times")]
    NotRemapped(usize),

    #[error("invalid time ordering: from {from} to {to}")]
    Ordering { from: usize, to: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid subject: {0}")]
    Subject(String),

    #[error("denoiser model: {0}")]
    Model(String),

    #[error("malformed queue: {0}")]
    Queue(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
