use std::f64::consts::TAU;

use super::{DataSource, DimensionMask};
use crate::error::{Error, Result};
use crate::rng::NoiseRng;
use crate::tensor::Tensor;

/// Mixture of Gaussians with isotropic covariances `v_k I`.
///
/// Densities, scores, Gaussian perturbations and coordinate conditionals are
/// all available in closed form, which makes this the ground truth for every
/// score estimate and sampler in the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropicGaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl IsotropicGaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(Error::invalid(format!(
                "mixture has {} weights, {} means and {} variances",
                weights.len(),
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("mixture variances must be positive"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid(
                "mixture means must share a nonzero dimension",
            ));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        Ok(IsotropicGaussianMixture {
            weights,
            means,
            variances,
        })
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        IsotropicGaussianMixture {
            weights: vec![1.0],
            means: vec![vec![0.0; dim]],
            variances: vec![1.0],
        }
    }

    /// `1/5 N((-5,-5), I) + 4/5 N((5,5), I)`: two well-separated modes with
    /// unequal weights.
    pub fn two_mode_benchmark() -> Self {
        IsotropicGaussianMixture {
            weights: vec![0.2, 0.8],
            means: vec![vec![-5.0, -5.0], vec![5.0, 5.0]],
            variances: vec![1.0, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                op: "mixture",
                lhs: vec![self.dim()],
                rhs: vec![x.len()],
            });
        }
        Ok(())
    }

    /// `ln pi_k + ln N(x; mu_k, v_k I)` for every component.
    fn joint_log_densities(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w.ln() - 0.5 * d * (TAU * v).ln() - 0.5 * sq_dist(x, m) / v)
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(log_sum_exp(&self.joint_log_densities(x)))
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let logs = self.joint_log_densities(x);
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        Ok(r)
    }

    /// `grad_x log p(x)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = self.responsibilities(x)?;
        let mut s = vec![0.0; self.dim()];
        for ((rk, m), v) in r.iter().zip(&self.means).zip(&self.variances) {
            for (si, (mi, xi)) in s.iter_mut().zip(m.iter().zip(x)) {
                *si += rk * (mi - xi) / v;
            }
        }
        Ok(s)
    }

    /// Row-wise [`score`](Self::score) of a batch.
    pub fn score_batch(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = Vec::with_capacity(x.len());
        for row in x.rows_iter() {
            out.extend(self.score(row)?);
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    /// Distribution of `x + sigma z` for `x` from this mixture and `z ~ N(0, I)`.
    pub fn perturb(&self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "perturbation sigma must be >= 0, got {sigma}"
            )));
        }
        let s2 = sigma * sigma;
        Ok(IsotropicGaussianMixture {
            weights: self.weights.clone(),
            means: self.means.clone(),
            variances: self.variances.iter().map(|v| v + s2).collect(),
        })
    }

    /// Distribution of the unobserved coordinates given the observed ones.
    ///
    /// `known` is a full-length point; only the coordinates the mask marks as
    /// observed are read. Components whose posterior weight underflows to
    /// zero are dropped.
    pub fn conditional(&self, mask: &DimensionMask, known: &[f64]) -> Result<Self> {
        self.check_dim(known)?;
        if mask.len() != self.dim() {
            return Err(Error::invalid(format!(
                "mask has {} entries for a {}-dimensional mixture",
                mask.len(),
                self.dim()
            )));
        }
        if mask.observed_count() == 0 || mask.unobserved_count() == 0 {
            return Err(Error::invalid(
                "conditioning needs at least one observed and one unobserved dimension",
            ));
        }
        if mask.observed_indices().any(|i| !known[i].is_finite()) {
            return Err(Error::invalid("observed values must be finite"));
        }
        let obs: Vec<usize> = mask.observed_indices().collect();
        let hidden: Vec<usize> = mask.unobserved_indices().collect();
        let dobs = obs.len() as f64;
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| {
                let d2: f64 = obs.iter().map(|&i| (known[i] - m[i]).powi(2)).sum();
                w.ln() - 0.5 * dobs * (TAU * v).ln() - 0.5 * d2 / v
            })
            .collect();
        let norm = log_sum_exp(&logs);
        if !norm.is_finite() {
            return Err(Error::ImpossibleObservation);
        }
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut variances = Vec::new();
        for (k, l) in logs.iter().enumerate() {
            let w = (l - norm).exp();
            if w > 0.0 {
                weights.push(w);
                means.push(hidden.iter().map(|&i| self.means[k][i]).collect());
                variances.push(self.variances[k]);
            }
        }
        if weights.is_empty() {
            return Err(Error::ImpossibleObservation);
        }
        // Renormalize so the kept weights sum to one to working precision.
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(IsotropicGaussianMixture {
            weights,
            means,
            variances,
        })
    }

    /// `n` i.i.d. draws, one per row.
    pub fn sample(&self, n: usize, rng: &mut NoiseRng) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let k = rng.categorical(&self.weights);
            let sd = self.variances[k].sqrt();
            data.extend(self.means[k].iter().map(|m| m + sd * rng.normal()));
        }
        Tensor::from_parts(vec![n, d], data)
    }
}

impl DataSource for IsotropicGaussianMixture {
    fn dim(&self) -> usize {
        IsotropicGaussianMixture::dim(self)
    }

    fn sample_batch(&self, n: usize, rng: &mut NoiseRng) -> Tensor {
        self.sample(n, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_score(d: &IsotropicGaussianMixture, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut down = x.to_vec();
                up[i] += h;
                down[i] -= h;
                (d.log_density(&up).unwrap() - d.log_density(&down).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn validation() {
        assert!(IsotropicGaussianMixture::new(
            vec![0.5, 0.4],
            vec![vec![0.0], vec![1.0]],
            vec![1.0, 1.0]
        )
        .is_err());
        assert!(IsotropicGaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        assert!(IsotropicGaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![1.0, 2.0]],
            vec![1.0, 1.0]
        )
        .is_err());
        assert!(IsotropicGaussianMixture::new(
            vec![1.0, 0.0],
            vec![vec![0.0], vec![1.0]],
            vec![1.0, 1.0]
        )
        .is_err());
    }

    #[test]
    fn standard_normal_sample_mean() {
        let d = IsotropicGaussianMixture::standard_normal(2);
        let x = d.sample(100_000, &mut NoiseRng::new(11));
        for c in 0..2 {
            let mean = x.rows_iter().map(|r| r[c]).sum::<f64>() / 1e5;
            assert!(mean.abs() < 0.02, "{mean}");
        }
    }

    #[test]
    fn benchmark_mode_fraction() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        let x = d.sample(100_000, &mut NoiseRng::new(5));
        let near = x.rows_iter().filter(|r| r[0] + r[1] > 0.0).count() as f64 / 1e5;
        assert!((0.79..=0.81).contains(&near), "{near}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        let a = d.sample(1, &mut NoiseRng::new(9));
        let b = d.sample(1, &mut NoiseRng::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn log_density_values() {
        let n = IsotropicGaussianMixture::standard_normal(2);
        assert!((n.log_density(&[0.0, 0.0]).unwrap() + 1.837877).abs() < 1e-6);
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        let expected = -25.0 - TAU.ln();
        assert!((d.log_density(&[0.0, 0.0]).unwrap() - expected).abs() < 1e-12);
        let one =
            IsotropicGaussianMixture::new(vec![1.0], vec![vec![1.0, 2.0, 3.0]], vec![2.5]).unwrap();
        let mode = -1.5 * (TAU * 2.5).ln();
        assert!((one.log_density(&[1.0, 2.0, 3.0]).unwrap() - mode).abs() < 1e-12);
    }

    #[test]
    fn log_density_far_from_modes_does_not_underflow() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        assert!(d.log_density(&[60.0, -60.0]).unwrap().is_finite());
        assert!(d
            .score(&[60.0, -60.0])
            .unwrap()
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn score_values() {
        let n = IsotropicGaussianMixture::standard_normal(2);
        assert_eq!(n.score(&[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        let s = d.score(&[0.0, 0.0]).unwrap();
        let fd = fd_score(&d, &[0.0, 0.0], 1e-5);
        for (a, b) in s.iter().zip(&fd) {
            assert!((a - 3.0).abs() < 1e-12, "{a}");
            assert!((a - b).abs() < 1e-6);
        }
        let one =
            IsotropicGaussianMixture::new(vec![1.0], vec![vec![4.0, -2.0]], vec![3.0]).unwrap();
        assert_eq!(one.score(&[4.0, -2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn perturbation() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        assert_eq!(d.perturb(0.0).unwrap(), d);
        let n = IsotropicGaussianMixture::new(vec![1.0], vec![vec![1.0, 1.0]], vec![1.0]).unwrap();
        assert_eq!(n.perturb(1.0).unwrap().variances(), &[2.0]);
        let p = d.perturb(10.0).unwrap();
        assert_eq!(p.variances(), &[101.0, 101.0]);
        let s = p.score(&[0.0, 0.0]).unwrap();
        let fd = fd_score(&p, &[0.0, 0.0], 1e-5);
        for (a, b) in s.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(d.perturb(-1.0).is_err());
    }

    #[test]
    fn conditional_of_symmetric_pair_is_balanced() {
        let d = IsotropicGaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-2.0, 1.0], vec![2.0, -1.0]],
            vec![1.0, 1.0],
        )
        .unwrap();
        let mask = DimensionMask::new(vec![true, false]);
        let c = d.conditional(&mask, &[0.0, 0.0]).unwrap();
        assert!((c.weights()[0] - 0.5).abs() < 1e-15);
        assert_eq!(c.means(), &[vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn conditional_of_single_component() {
        let d =
            IsotropicGaussianMixture::new(vec![1.0], vec![vec![1.0, 2.0, 3.0]], vec![0.5]).unwrap();
        let mask = DimensionMask::new(vec![false, true, false]);
        let c = d.conditional(&mask, &[0.0, 9.0, 0.0]).unwrap();
        assert_eq!(c.weights(), &[1.0]);
        assert_eq!(c.means(), &[vec![1.0, 3.0]]);
        assert_eq!(c.variances(), &[0.5]);
    }

    #[test]
    fn conditional_of_benchmark_given_first_coordinate() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        let mask = DimensionMask::new(vec![true, false]);
        let c = d.conditional(&mask, &[5.0, 0.0]).unwrap();
        // Oracle: explicit Gaussian densities of the observed coordinate.
        let phi = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / TAU.sqrt();
        let a = 0.2 * phi(5.0, -5.0);
        let b = 0.8 * phi(5.0, 5.0);
        let small = a / (a + b);
        assert!(
            (c.weights()[0] - small).abs() <= 1e-12 * small,
            "{:?}",
            c.weights()
        );
        assert!((c.weights()[0] - 4.8217e-23).abs() < 1e-26);
        assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_drops_underflowed_components() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        let mask = DimensionMask::new(vec![true, false]);
        let c = d.conditional(&mask, &[200.0, 0.0]).unwrap();
        assert_eq!(c.components(), 1);
        assert_eq!(c.means(), &[vec![5.0]]);
    }

    #[test]
    fn conditional_needs_both_kinds_of_dimension() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        assert!(d
            .conditional(&DimensionMask::new(vec![true, true]), &[0.0, 0.0])
            .is_err());
        assert!(d
            .conditional(&DimensionMask::new(vec![false, false]), &[0.0, 0.0])
            .is_err());
    }
}
