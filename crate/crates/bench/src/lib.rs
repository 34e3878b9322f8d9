//! Shared fixtures for the benchmarks in `benches/`.

use ncsn::{IsotropicGaussianMixture, NcsnMlp, NoiseRng, NoiseSchedule, Tensor};

/// Network on the toy schedule with the given hidden width and depth.
pub fn toy_net(hidden: usize, layers: usize) -> NcsnMlp {
    NcsnMlp::build(
        2,
        hidden,
        layers,
        NoiseSchedule::toy_default(),
        &mut NoiseRng::new(1),
    )
    .expect("valid fixture shape")
}

/// `n` draws from the two-mode benchmark mixture.
pub fn toy_batch(n: usize) -> Tensor {
    IsotropicGaussianMixture::two_mode_benchmark().sample(n, &mut NoiseRng::new(2))
}
