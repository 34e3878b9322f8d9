use std::f64::consts::TAU;

use super::DataSource;
use crate::error::{Error, Result};
use crate::rng::NoiseRng;
use crate::tensor::Tensor;

/// One-dimensional curve embedded in the ambient space.
#[derive(Clone, Debug, PartialEq)]
pub enum ManifoldShape {
    /// Straight segment from `start` to `end`.
    Segment { start: Vec<f64>, end: Vec<f64> },
    /// Circle of the given radius centred at the origin of the first two
    /// coordinates; remaining coordinates are zero.
    Circle { radius: f64 },
}

/// Points spread uniformly (in the curve parameter) over a low-dimensional
/// manifold, optionally blurred with isotropic Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldDataset {
    dim: usize,
    shape: ManifoldShape,
    noise_sigma: f64,
}

impl ManifoldDataset {
    pub fn new(dim: usize, shape: ManifoldShape, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::invalid(format!(
                "noise sigma must be >= 0, got {noise_sigma}"
            )));
        }
        match &shape {
            ManifoldShape::Segment { start, end } => {
                if start.len() != dim || end.len() != dim || dim == 0 {
                    return Err(Error::invalid(
                        "segment endpoints must match the ambient dimension",
                    ));
                }
            }
            ManifoldShape::Circle { radius } => {
                if dim < 2 || !(*radius > 0.0) {
                    return Err(Error::invalid(
                        "circle needs dim >= 2 and a positive radius",
                    ));
                }
            }
        }
        Ok(ManifoldDataset {
            dim,
            shape,
            noise_sigma,
        })
    }

    /// Segment from `(-1, 0)` to `(1, 0)` in the plane.
    pub fn unit_segment(noise_sigma: f64) -> Result<Self> {
        Self::new(
            2,
            ManifoldShape::Segment {
                start: vec![-1.0, 0.0],
                end: vec![1.0, 0.0],
            },
            noise_sigma,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &ManifoldShape {
        &self.shape
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Same manifold with a different noise level.
    pub fn with_noise(&self, noise_sigma: f64) -> Result<Self> {
        Self::new(self.dim, self.shape.clone(), noise_sigma)
    }

    pub fn sample(&self, n: usize, rng: &mut NoiseRng) -> Tensor {
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let t = rng.uniform();
            let start = data.len();
            match &self.shape {
                ManifoldShape::Segment { start, end } => {
                    data.extend(start.iter().zip(end).map(|(a, b)| a + t * (b - a)));
                }
                ManifoldShape::Circle { radius } => {
                    let (s, c) = (TAU * t).sin_cos();
                    data.push(radius * c);
                    data.push(radius * s);
                    data.extend(std::iter::repeat(0.0).take(self.dim - 2));
                }
            }
            if self.noise_sigma > 0.0 {
                for v in &mut data[start..] {
                    *v += self.noise_sigma * rng.normal();
                }
            }
        }
        Tensor::from_parts(vec![n, self.dim], data)
    }
}

impl DataSource for ManifoldDataset {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_batch(&self, n: usize, rng: &mut NoiseRng) -> Tensor {
        self.sample(n, rng)
    }
}
