//! Toy data sources with analytic ground truth.

mod manifold;
mod mixture;

pub use manifold::{ManifoldDataset, ManifoldShape};
pub use mixture::IsotropicGaussianMixture;

use crate::error::{Error, Result};
use crate::rng::NoiseRng;
use crate::tensor::Tensor;

/// Anything that can hand out i.i.d. training batches.
pub trait DataSource {
    fn dim(&self) -> usize;

    /// `n x dim` batch, one point per row.
    fn sample_batch(&self, n: usize, rng: &mut NoiseRng) -> Tensor;
}

/// Per-dimension flags; `true` marks an observed (kept) coordinate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimensionMask {
    observed: Vec<bool>,
}

impl DimensionMask {
    pub fn new(observed: Vec<bool>) -> Self {
        DimensionMask { observed }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn unobserved_count(&self) -> usize {
        self.len() - self.observed_count()
    }

    pub fn observed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(i, _)| i)
    }

    pub fn unobserved_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| !o)
            .map(|(i, _)| i)
    }

    /// Inpainting needs something left to impute.
    pub fn check_for_inpainting(&self, dim: usize) -> Result<()> {
        if self.len() != dim {
            return Err(Error::invalid(format!(
                "mask has {} entries for {dim}-dimensional data",
                self.len()
            )));
        }
        if self.unobserved_count() == 0 {
            return Err(Error::invalid("mask leaves no dimension to impute"));
        }
        Ok(())
    }
}

/// Writes a batch as CSV with header `x1,...,xD`, one row per point.
pub fn write_points_csv<W: std::io::Write>(out: W, points: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=points.cols()).map(|i| format!("x{i}")))?;
    for row in points.rows_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
