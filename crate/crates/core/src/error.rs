use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("gradient requested of a non-scalar output with shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("noise level {level} out of range for a schedule with {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("langevin iterate became non-finite at level {level}, step {step}")]
    NonFiniteIterate { level: usize, step: usize },
    #[error("langevin iterate diverged (|x|_inf = {magnitude:e}) at level {level}, step {step}")]
    Diverged {
        level: usize,
        step: usize,
        magnitude: f64,
    },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("gradient check failed at iteration {iteration}: relative error {rel_err:e}")]
    GradientCheck { iteration: usize, rel_err: f64 },
    #[error("all conditional weights underflowed; the observation is impossibly far from every component")]
    ImpossibleObservation,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteIterate { .. }
                | Error::Diverged { .. }
                | Error::NonFiniteLoss { .. }
                | Error::GradientCheck { .. }
                | Error::ImpossibleObservation
        )
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"NCSN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
