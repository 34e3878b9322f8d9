//! Score-matching losses as differentiable scalars on a [`Graph`].
//!
//! Score models are passed as closures that record their forward pass on the
//! graph: `Fn(&mut Graph, Var) -> Result<Var>` for an unconditional score and
//! `Fn(&mut Graph, Var, usize) -> Result<Var>` for one conditioned on a noise
//! level index.

use crate::autodiff::{jvp, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::NoiseRng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Largest dimension for which the exact Jacobian trace is assembled.
pub const MAX_EXACT_TRACE_DIM: usize = 16;

/// One term of a (possibly multi-level) loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelLoss {
    pub level: Option<usize>,
    pub sigma: Option<f64>,
    /// Unweighted batch estimate.
    pub raw: f64,
    pub weight: f64,
}

impl LevelLoss {
    pub fn weighted(&self) -> f64 {
        self.weight * self.raw
    }
}

/// Differentiable total plus its per-level breakdown. The total equals the
/// mean of the weighted breakdown terms.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub total: Var,
    pub value: f64,
    pub levels: Vec<LevelLoss>,
}

impl LossValue {
    fn single(g: &Graph, total: Var, level: Option<usize>, sigma: Option<f64>) -> Self {
        let value = g.value(total).data()[0];
        LossValue {
            total,
            value,
            levels: vec![LevelLoss {
                level,
                sigma,
                raw: value,
                weight: 1.0,
            }],
        }
    }
}

/// Default level weighting `lambda(sigma) = sigma^2`.
pub fn sigma_squared(sigma: f64) -> f64 {
    sigma * sigma
}

fn basis_directions(rows: usize, dim: usize, d: usize) -> Tensor {
    let mut e = Tensor::zeros(&[rows, dim]);
    for r in 0..rows {
        e.row_mut(r)[d] = 1.0;
    }
    e
}

fn check_batch(batch: &Tensor) -> Result<(usize, usize)> {
    if batch.rank() != 2 || batch.rows() == 0 {
        return Err(Error::invalid(format!(
            "loss needs a nonempty batch matrix, got shape {:?}",
            batch.shape()
        )));
    }
    Ok((batch.rows(), batch.cols()))
}

/// Sum over the batch of `tr(grad_x s(x))`, assembled from one directional
/// derivative per basis vector. Also returns the score outputs of the first
/// pass.
pub fn exact_trace<F>(g: &mut Graph, score: F, batch: &Tensor) -> Result<(Var, Var)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let (rows, dim) = check_batch(batch)?;
    if dim > MAX_EXACT_TRACE_DIM {
        return Err(Error::invalid(format!(
            "exact trace limited to dimension {MAX_EXACT_TRACE_DIM}, got {dim}"
        )));
    }
    let mut trace: Option<Var> = None;
    let mut first_output = None;
    for d in 0..dim {
        let e = basis_directions(rows, dim, d);
        let (out, tangent) = jvp(g, batch, &e, &score)?;
        first_output.get_or_insert(out);
        let e = g.constant(e);
        let diag = g.dot(e, tangent)?;
        trace = Some(match trace {
            Some(t) => g.add(t, diag)?,
            None => diag,
        });
    }
    Ok((trace.expect("dim >= 1"), first_output.expect("dim >= 1")))
}

/// Score matching with the exact Jacobian trace:
/// mean over the batch of `tr(grad_x s(x)) + |s(x)|^2 / 2`.
pub fn esm_exact<F>(g: &mut Graph, score: F, batch: &Tensor) -> Result<LossValue>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let (rows, _) = check_batch(batch)?;
    let (trace, out) = exact_trace(g, score, batch)?;
    let norm = g.sq_norm(out)?;
    let half = g.scale(norm, 0.5)?;
    let sum = g.add(trace, half)?;
    let total = g.scale(sum, 1.0 / rows as f64)?;
    Ok(LossValue::single(g, total, None, None))
}

/// Sliced score matching with caller-supplied projections.
///
/// Each entry of `projections` is a matrix shaped like `batch`: row `r` is the
/// direction used for sample `r`. The loss is the mean over samples and
/// projections of `v^T (grad_x s(x)) v + |s(x)|^2 / 2`, where the Jacobian
/// term comes from a forward-mode directional derivative.
pub fn ssm_with_projections<F>(
    g: &mut Graph,
    score: F,
    batch: &Tensor,
    projections: &[Tensor],
) -> Result<LossValue>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let (rows, dim) = check_batch(batch)?;
    if projections.is_empty() {
        return Err(Error::invalid(
            "sliced score matching needs at least one projection",
        ));
    }
    let k = projections.len();
    // Every projection sees its own copy of the batch, so one forward pass
    // serves them all.
    let mut xs = Vec::with_capacity(rows * dim * k);
    let mut vs = Vec::with_capacity(rows * dim * k);
    for v in projections {
        if v.shape() != batch.shape() {
            return Err(Error::Shape {
                op: "ssm",
                lhs: batch.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        xs.extend_from_slice(batch.data());
        vs.extend_from_slice(v.data());
    }
    let x = Tensor::new(vec![rows * k, dim], xs)?;
    let v = Tensor::new(vec![rows * k, dim], vs)?;
    let (out, jv) = jvp(g, &x, &v, &score)?;
    let vc = g.constant(v);
    let quad = g.dot(vc, jv)?;
    let norm = g.sq_norm(out)?;
    let half = g.scale(norm, 0.5)?;
    let sum = g.add(quad, half)?;
    let total = g.scale(sum, 1.0 / (rows * k) as f64)?;
    Ok(LossValue::single(g, total, None, None))
}

/// Sliced score matching with standard normal projections.
pub fn ssm<F>(
    g: &mut Graph,
    score: F,
    batch: &Tensor,
    n_projections: usize,
    rng: &mut NoiseRng,
) -> Result<LossValue>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if n_projections == 0 {
        return Err(Error::invalid("n_projections must be >= 1"));
    }
    let projections: Vec<Tensor> = (0..n_projections)
        .map(|_| rng.normal_tensor(batch.shape()))
        .collect();
    ssm_with_projections(g, score, batch, &projections)
}

/// Denoising score matching at one noise level with a Gaussian kernel:
/// `x~ = x + sigma z` and the loss is the batch mean of
/// `|s(x~, i) + (x~ - x) / sigma^2|^2 / 2`.
pub fn dsm_level<M>(
    g: &mut Graph,
    model: M,
    batch: &Tensor,
    level: usize,
    schedule: &NoiseSchedule,
    rng: &mut NoiseRng,
) -> Result<LossValue>
where
    M: Fn(&mut Graph, Var, usize) -> Result<Var>,
{
    let (rows, dim) = check_batch(batch)?;
    let sigma = schedule.sigma(level)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "noise level sigma must be > 0, got {sigma}"
        )));
    }
    let z = rng.normal_tensor(&[rows, dim]);
    let noisy: Vec<f64> = batch
        .data()
        .iter()
        .zip(z.data())
        .map(|(x, z)| x + sigma * z)
        .collect();
    let kernel_score: Vec<f64> = noisy
        .iter()
        .zip(batch.data())
        .map(|(xt, x)| (xt - x) / (sigma * sigma))
        .collect();
    let noisy = g.constant(Tensor::new(vec![rows, dim], noisy)?);
    let s = model(g, noisy, level)?;
    let target = g.constant(Tensor::new(vec![rows, dim], kernel_score)?);
    let residual = g.add(s, target)?;
    let norm = g.sq_norm(residual)?;
    let total = g.scale(norm, 0.5 / rows as f64)?;
    Ok(LossValue::single(g, total, Some(level), Some(sigma)))
}

/// All-level objective `(1/L) sum_i lambda(sigma_i) l(sigma_i)`, every level
/// evaluated on the same batch with fresh noise.
pub fn ncsn_loss<M>(
    g: &mut Graph,
    model: M,
    batch: &Tensor,
    schedule: &NoiseSchedule,
    weighting: &dyn Fn(f64) -> f64,
    rng: &mut NoiseRng,
) -> Result<LossValue>
where
    M: Fn(&mut Graph, Var, usize) -> Result<Var>,
{
    check_batch(batch)?;
    let mut sum: Option<Var> = None;
    let mut levels = Vec::with_capacity(schedule.levels());
    for (i, &sigma) in schedule.sigmas().iter().enumerate() {
        let term = dsm_level(g, &model, batch, i, schedule, rng)?;
        let weight = weighting(sigma);
        let weighted = g.scale(term.total, weight)?;
        sum = Some(match sum {
            Some(s) => g.add(s, weighted)?,
            None => weighted,
        });
        levels.push(LevelLoss {
            level: Some(i),
            sigma: Some(sigma),
            raw: term.value,
            weight,
        });
    }
    let total = g.scale(
        sum.expect("at least one level"),
        1.0 / schedule.levels() as f64,
    )?;
    let value = g.value(total).data()[0];
    Ok(LossValue {
        total,
        value,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::IsotropicGaussianMixture;

    fn neg_identity(g: &mut Graph, x: Var) -> Result<Var> {
        g.scale(x, -1.0)
    }

    fn zero_score(g: &mut Graph, x: Var) -> Result<Var> {
        g.scale(x, 0.0)
    }

    #[test]
    fn esm_of_exact_gaussian_score_at_origin() {
        let mut g = Graph::new();
        let batch = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        let l = esm_exact(&mut g, neg_identity, &batch).unwrap();
        assert!((l.value + 2.0).abs() < 1e-15);
    }

    #[test]
    fn esm_of_exact_gaussian_score_on_samples() {
        let batch =
            IsotropicGaussianMixture::standard_normal(2).sample(50_000, &mut NoiseRng::new(3));
        let mut g = Graph::new();
        let l = esm_exact(&mut g, neg_identity, &batch).unwrap();
        // -2 + E|x|^2 / 2 = -1; the Monte Carlo standard error is about 0.005.
        assert!((l.value + 1.0).abs() < 0.03, "{}", l.value);
    }

    #[test]
    fn esm_of_zero_score() {
        let mut g = Graph::new();
        let batch = Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        assert_eq!(esm_exact(&mut g, zero_score, &batch).unwrap().value, 0.0);
    }

    #[test]
    fn ssm_with_fixed_axis_projection() {
        let batch = Tensor::from_rows(&[[1.0, 2.0], [-0.5, 0.0]]).unwrap();
        for r in 0..2 {
            let single = Tensor::from_rows(&[batch.row(r)]).unwrap();
            let v = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
            let mut g = Graph::new();
            let l = ssm_with_projections(&mut g, neg_identity, &single, &[v]).unwrap();
            let sq: f64 = batch.row(r).iter().map(|x| x * x).sum();
            assert!((l.value - (-1.0 + 0.5 * sq)).abs() < 1e-14);
        }
    }

    #[test]
    fn ssm_of_zero_score() {
        let batch = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut g = Graph::new();
        let l = ssm(&mut g, zero_score, &batch, 4, &mut NoiseRng::new(0)).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn ssm_rejects_zero_projections() {
        let batch = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut g = Graph::new();
        assert!(ssm(&mut g, zero_score, &batch, 0, &mut NoiseRng::new(0)).is_err());
    }

    #[test]
    fn dsm_with_perfect_denoiser_is_zero() {
        let schedule = NoiseSchedule::geometric(2.0, 0.5, 3).unwrap();
        let batch = Tensor::from_rows(&[[1.0, -1.0], [0.5, 2.0], [0.0, 0.0]]).unwrap();
        for level in 0..3 {
            let sigma = schedule.sigma(level).unwrap();
            let clean = batch.clone();
            let oracle = move |g: &mut Graph, xt: Var, _: usize| {
                let noisy = g.value(xt).clone();
                let data = noisy
                    .data()
                    .iter()
                    .zip(clean.data())
                    .map(|(a, b)| -(a - b) / (sigma * sigma))
                    .collect();
                Ok(g.constant(Tensor::new(noisy.shape().to_vec(), data)?))
            };
            let mut g = Graph::new();
            let l = dsm_level(
                &mut g,
                oracle,
                &batch,
                level,
                &schedule,
                &mut NoiseRng::new(1),
            )
            .unwrap();
            assert_eq!(l.value, 0.0);
        }
    }

    #[test]
    fn dsm_of_zero_net_is_half_chi_square_mean() {
        let schedule = NoiseSchedule::new(vec![1.0]).unwrap();
        let batch = Tensor::zeros(&[20_000, 2]);
        let mut g = Graph::new();
        let zero = |g: &mut Graph, x: Var, _| g.scale(x, 0.0);
        let l = dsm_level(&mut g, zero, &batch, 0, &schedule, &mut NoiseRng::new(2)).unwrap();
        assert!((l.value - 1.0).abs() < 0.03, "{}", l.value);
    }

    #[test]
    fn dsm_is_deterministic_and_checks_level() {
        let schedule = NoiseSchedule::toy_default();
        let batch = Tensor::from_rows(&[[1.0, -1.0]]).unwrap();
        let zero = |g: &mut Graph, x: Var, _| g.scale(x, 0.0);
        let run = || {
            let mut g = Graph::new();
            dsm_level(&mut g, zero, &batch, 4, &schedule, &mut NoiseRng::new(9))
                .unwrap()
                .value
        };
        assert_eq!(run().to_bits(), run().to_bits());
        let mut g = Graph::new();
        assert!(dsm_level(&mut g, zero, &batch, 10, &schedule, &mut NoiseRng::new(9)).is_err());
    }

    #[test]
    fn ncsn_single_level_is_weighted_dsm() {
        let schedule = NoiseSchedule::new(vec![0.7]).unwrap();
        let batch = Tensor::from_rows(&[[1.0, -1.0], [0.3, 0.2]]).unwrap();
        let model = |g: &mut Graph, x: Var, _| g.scale(x, -0.4);
        let mut g = Graph::new();
        let all = ncsn_loss(
            &mut g,
            model,
            &batch,
            &schedule,
            &sigma_squared,
            &mut NoiseRng::new(5),
        )
        .unwrap();
        let mut g = Graph::new();
        let one = dsm_level(&mut g, model, &batch, 0, &schedule, &mut NoiseRng::new(5)).unwrap();
        assert!((all.value - 0.49 * one.value).abs() < 1e-15);
    }

    #[test]
    fn ncsn_zero_net_terms_are_half_dimension() {
        let schedule = NoiseSchedule::toy_default();
        let batch = Tensor::zeros(&[20_000, 2]);
        let zero = |g: &mut Graph, x: Var, _| g.scale(x, 0.0);
        let mut g = Graph::new();
        let l = ncsn_loss(
            &mut g,
            zero,
            &batch,
            &schedule,
            &sigma_squared,
            &mut NoiseRng::new(4),
        )
        .unwrap();
        assert!((l.value - 1.0).abs() < 0.03, "{}", l.value);
        for t in &l.levels {
            assert!((t.weighted() - 1.0).abs() < 0.05, "{t:?}");
        }
        let mean: f64 = l.levels.iter().map(LevelLoss::weighted).sum::<f64>() / 10.0;
        assert!((mean - l.value).abs() < 1e-12);
    }

    #[test]
    fn ncsn_with_zero_weighting() {
        let schedule = NoiseSchedule::toy_default();
        let batch = Tensor::from_rows(&[[1.0, -1.0]]).unwrap();
        let model = |g: &mut Graph, x: Var, _| g.scale(x, 2.0);
        let mut g = Graph::new();
        let l = ncsn_loss(
            &mut g,
            model,
            &batch,
            &schedule,
            &|_| 0.0,
            &mut NoiseRng::new(4),
        )
        .unwrap();
        assert_eq!(l.value, 0.0);
    }
}
