//! Score-field comparison against an analytic mixture and mode-weight tables.

use ncsn::samplers::{mode_weight, SigmaScaledNorm};
use ncsn::{IsotropicGaussianMixture, ScoreSource, Tensor};

use crate::config::EvalSettings;
use crate::error::{CliError, CliResult};
use crate::output::{num, OutDir};

pub const NEAR_MODE: &str = "near_mode";
pub const LOW_DENSITY: &str = "low_density";

#[derive(Clone, Debug, PartialEq)]
pub struct FieldPoint {
    pub x: [f64; 2],
    pub truth: [f64; 2],
    pub estimate: [f64; 2],
    pub sq_err: f64,
    pub near_mode: bool,
}

/// True and estimated scores over a square grid, split into the points within
/// `near_radius` of some component mean and the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFieldReport {
    pub grid: usize,
    pub bound: f64,
    pub near_radius: f64,
    pub points: Vec<FieldPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSummary {
    pub region: &'static str,
    pub points: usize,
    pub mean_sq_err: f64,
}

/// Cell centres of an `n`-point grid over `[-bound, bound]`.
pub fn grid_axis(n: usize, bound: f64) -> Vec<f64> {
    (0..n)
        .map(|i| -bound + 2.0 * bound * (i as f64 + 0.5) / n as f64)
        .collect()
}

pub fn score_field(
    estimate: &dyn ScoreSource,
    level: usize,
    truth: &IsotropicGaussianMixture,
    settings: &EvalSettings,
) -> CliResult<ScoreFieldReport> {
    if truth.dim() != 2 {
        return Err(CliError::config(
            "score-field evaluation needs 2-dimensional data",
        ));
    }
    let axis = grid_axis(settings.grid, settings.bound);
    let coords: Vec<[f64; 2]> = axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| [a, b]))
        .collect();
    let batch = Tensor::from_rows(&coords)?;
    let est = estimate.score(&batch, level)?;
    let tru = truth.score_batch(&batch)?;
    let r2 = settings.near_radius * settings.near_radius;
    let points = coords
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let t = [tru.row(k)[0], tru.row(k)[1]];
            let e = [est.row(k)[0], est.row(k)[1]];
            let sq_err = (t[0] - e[0]).powi(2) + (t[1] - e[1]).powi(2);
            let near_mode = truth
                .means()
                .iter()
                .any(|m| (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2) <= r2);
            FieldPoint {
                x,
                truth: t,
                estimate: e,
                sq_err,
                near_mode,
            }
        })
        .collect();
    Ok(ScoreFieldReport {
        grid: settings.grid,
        bound: settings.bound,
        near_radius: settings.near_radius,
        points,
    })
}

impl ScoreFieldReport {
    /// Mean squared error per region; a region with no points reports NaN.
    pub fn regions(&self) -> Vec<RegionSummary> {
        [(NEAR_MODE, true), (LOW_DENSITY, false)]
            .into_iter()
            .map(|(region, near)| {
                let errs: Vec<f64> = self
                    .points
                    .iter()
                    .filter(|p| p.near_mode == near)
                    .map(|p| p.sq_err)
                    .collect();
                let mean_sq_err = if errs.is_empty() {
                    f64::NAN
                } else {
                    errs.iter().sum::<f64>() / errs.len() as f64
                };
                RegionSummary {
                    region,
                    points: errs.len(),
                    mean_sq_err,
                }
            })
            .collect()
    }

    pub fn write(&self, out: &OutDir) -> CliResult<()> {
        out.write_csv(
            "score_field.csv",
            &[
                "x1", "x2", "true_s1", "true_s2", "est_s1", "est_s2", "sq_err", "region",
            ],
            self.points.iter().map(|p| {
                vec![
                    num(p.x[0]),
                    num(p.x[1]),
                    num(p.truth[0]),
                    num(p.truth[1]),
                    num(p.estimate[0]),
                    num(p.estimate[1]),
                    num(p.sq_err),
                    if p.near_mode { NEAR_MODE } else { LOW_DENSITY }.to_string(),
                ]
            }),
        )?;
        out.write_csv(
            "score_regions.csv",
            &["region", "points", "mean_sq_err"],
            self.regions().into_iter().map(|r| {
                vec![
                    r.region.to_string(),
                    r.points.to_string(),
                    num(r.mean_sq_err),
                ]
            }),
        )?;
        let errs: Vec<f64> = self.points.iter().map(|p| p.sq_err).collect();
        crate::plot::heatmap(out, "score_error.png", &errs, self.grid)?;
        let norms: Vec<f64> = self
            .points
            .iter()
            .map(|p| p.truth[0].hypot(p.truth[1]))
            .collect();
        crate::plot::heatmap(out, "true_score_norm.png", &norms, self.grid)
    }
}

/// Mode weights of `samples` against the component means of `dist`.
pub fn mode_rows(
    method: &str,
    samples: &Tensor,
    dist: &IsotropicGaussianMixture,
) -> CliResult<Vec<Vec<String>>> {
    let weights = mode_weight(samples, dist.means())?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let mut row = vec![method.to_string(), "ok".into(), (k + 1).to_string()];
            row.extend(dist.means()[k].iter().map(|&m| num(m)));
            row.push(num(*w));
            row
        })
        .collect())
}

pub fn mode_header(dim: usize) -> Vec<String> {
    let mut h = vec!["method".to_string(), "status".into(), "mode".into()];
    h.extend((1..=dim).map(|i| format!("mean{i}")));
    h.push("weight".into());
    h
}

pub fn write_mode_weights(out: &OutDir, dim: usize, rows: Vec<Vec<String>>) -> CliResult<()> {
    let header = mode_header(dim);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv("mode_weights.csv", &header, rows)?;
    Ok(())
}

pub fn write_sigma_norms(out: &OutDir, norms: &[SigmaScaledNorm]) -> CliResult<()> {
    out.write_csv(
        "sigma_norms.csv",
        &["level", "sigma", "mean_scaled_norm", "signal_to_noise"],
        norms.iter().map(|n| {
            vec![
                (n.level + 1).to_string(),
                num(n.sigma),
                num(n.mean_scaled_norm),
                num(n.signal_to_noise),
            ]
        }),
    )?;
    Ok(())
}
