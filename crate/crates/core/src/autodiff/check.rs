use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<F>(build: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.value(loss)
        .item()
        .ok_or_else(|| Error::NonScalar(g.value(loss).shape().to_vec()))
}

/// Reverse-mode gradients of the loss built by `build` at `params`.
pub fn gradients<F>(build: &F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.grad(loss, &vars)?.into_vec();
    Ok((g.value(loss).data()[0], grads))
}

/// Worst relative error between reverse-mode gradients and central differences
/// over the listed `(parameter, element)` entries.
///
/// `build` must be a pure function of the parameter values: it is called
/// once for the analytic gradient and twice per checked entry.
pub fn check_gradient_at<F>(
    build: F,
    params: &[Tensor],
    h: f64,
    entries: &[(usize, usize)],
) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    let (_, grads) = gradients(&build, params)?;
    let mut probe = params.to_vec();
    let mut worst = 0.0_f64;
    for &(p, j) in entries {
        let original = params[p].data()[j];
        probe[p].data_mut()[j] = original + h;
        let up = eval_loss(&build, &probe)?;
        probe[p].data_mut()[j] = original - h;
        let down = eval_loss(&build, &probe)?;
        probe[p].data_mut()[j] = original;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(grads[p].data()[j], numeric));
    }
    Ok(worst)
}

/// Worst relative error over every parameter entry.
pub fn check_gradient<F>(build: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |j| (p, j)))
        .collect();
    check_gradient_at(build, params, h, &entries)
}
