//! Score-based generative modeling on small, fully known distributions.
//!
//! The crate bundles a minimal automatic-differentiation engine, toy data
//! with exact scores, a noise-conditional score network, the classic
//! score-matching objectives, Langevin samplers and a deterministic trainer.
//! Everything is seeded through [`NoiseRng`], so identical inputs give
//! bit-identical outputs.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod distributions;
mod error;
pub mod network;
pub mod objectives;
mod rng;
pub mod samplers;
pub mod schedule;
mod tensor;
pub mod trainer;

pub use autodiff::{Graph, Var};
pub use distributions::{DataSource, DimensionMask, IsotropicGaussianMixture, ManifoldDataset};
pub use error::{CheckpointError, Error, Result};
pub use network::{MlpShape, NcsnMlp};
pub use rng::NoiseRng;
pub use samplers::{AnalyticScore, LangevinConfig, ScoreSource};
pub use schedule::NoiseSchedule;
pub use tensor::Tensor;
pub use trainer::{Objective, TrainConfig, Weighting};
