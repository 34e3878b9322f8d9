//! The three toy studies: score-field accuracy, sampler mode weights and
//! loss behaviour on a one-dimensional manifold.

use ncsn::samplers::{annealed_langevin, langevin, uniform_init, write_samples_csv};
use ncsn::trainer::{save_checkpoint, train, TrainMeta};
use ncsn::{
    AnalyticScore, LangevinConfig, ManifoldDataset, NcsnMlp, NoiseRng, NoiseSchedule, Tensor,
};

use crate::analysis::{mode_header, mode_rows, score_field};
use crate::commands::write_loss;
use crate::config::{ExperimentConfig, SamplerDefaults, TrainDefaults};
use crate::error::{CliError, CliResult};
use crate::output::{num, OutDir};
use crate::{plot, streams, Report};

/// Trains a single-level network with sliced score matching and compares its
/// field with the exact data score on a grid.
pub fn fig2(cfg: &ExperimentConfig, out: &OutDir) -> CliResult<Report> {
    let dist = cfg.mixture()?;
    let (schedule, _) = cfg.schedule()?;
    let defaults = TrainDefaults::SCORE_FIELD;
    let (hidden, layers) = cfg.network(&defaults);
    let tc = cfg.train_config(&defaults)?;
    if tc.checkpoint_every > 0 {
        return Err(CliError::config(
            "repro fig2 does not write intermediate checkpoints",
        ));
    }
    let e = cfg.eval()?;
    // One conditioning level; sliced score matching ignores its sigma.
    let single = NoiseSchedule::new(vec![schedule.smallest()])?;
    let mut init = NoiseRng::with_stream(cfg.seed(), streams::INIT);
    let mut net = NcsnMlp::build(dist.dim(), hidden, layers, single, &mut init)?;
    let log = train(&mut net, &dist, &tc)?;
    write_loss(out, "loss.csv", "loss.png", &log)?;
    let meta = TrainMeta {
        iteration: tc.iterations as u32,
        seed: cfg.seed(),
        objective: tc.objective.kind(),
    };
    save_checkpoint(&net, meta, &out.path("model.ncsn"))?;

    let field = score_field(&net, 0, &dist, &e)?;
    field.write(out)?;
    let regions = field.regions();
    let mut report: Report = regions
        .iter()
        .map(|r| (format!("mse_{}", r.region), num(r.mean_sq_err)))
        .collect();
    report.push((
        "mse_ratio".into(),
        num(regions[0].mean_sq_err / regions[1].mean_sq_err),
    ));
    Ok(report)
}

enum Outcome {
    Samples(Tensor),
    Failed(String),
}

/// Exact draws against plain and annealed Langevin dynamics driven by the
/// exact scores. A diverged method is reported in the table and then turns
/// the whole command into a numerical failure.
pub fn fig3(cfg: &ExperimentConfig, out: &OutDir) -> CliResult<Report> {
    let dist = cfg.mixture()?;
    let dim = dist.dim();
    let (schedule, _) = cfg.schedule()?;
    let f = cfg.fig3()?;
    let init = cfg.sampler(&SamplerDefaults::LEARNED)?.init;
    let seed = cfg.seed();

    let exact = dist.sample(f.samples, &mut NoiseRng::with_stream(seed, streams::EXACT));

    let mut rng = NoiseRng::with_stream(seed, streams::VANILLA);
    let x0 = uniform_init(f.samples, dim, init.0, init.1, &mut rng);
    let data_score = AnalyticScore::data(dist.clone());
    let vanilla = langevin(
        &data_score,
        0,
        &x0,
        f.vanilla_epsilon,
        f.vanilla_steps,
        &mut rng,
    );

    let mut rng = NoiseRng::with_stream(seed, streams::ANNEALED);
    let x0 = uniform_init(f.samples, dim, init.0, init.1, &mut rng);
    let perturbed = AnalyticScore::perturbed(&dist, &schedule)?;
    let annealed = annealed_langevin(
        &perturbed,
        &schedule,
        &x0,
        &LangevinConfig::new(f.annealed_epsilon, f.annealed_steps),
        &mut rng,
    )
    .map(|(x, _)| x);

    let classify = |r: ncsn::Result<Tensor>| -> CliResult<Outcome> {
        match r {
            Ok(x) => Ok(Outcome::Samples(x)),
            Err(e) if e.is_numerical() => Ok(Outcome::Failed(e.to_string())),
            Err(e) => Err(e.into()),
        }
    };
    let methods = [
        ("exact", Outcome::Samples(exact), f.samples, 0),
        ("vanilla", classify(vanilla)?, f.vanilla_steps, 1),
        (
            "annealed",
            classify(annealed)?,
            f.annealed_steps,
            schedule.levels(),
        ),
    ];

    let bound = init.0.abs().max(init.1.abs());
    let mut rows = Vec::new();
    let mut report = Vec::new();
    let mut failures = Vec::new();
    for (name, outcome, steps, level) in &methods {
        let csv = format!("samples_{name}.csv");
        match outcome {
            Outcome::Samples(x) => {
                let step = if *name == "exact" { 0 } else { *steps };
                out.write_with(&csv, |buf| write_samples_csv(buf, x, *level, step))?;
                plot::scatter(out, &format!("{name}.png"), x, bound)?;
                let r = mode_rows(name, x, &dist)?;
                for row in &r {
                    report.push((
                        format!("{name}_weight_mode{}", row[2]),
                        row[row.len() - 1].clone(),
                    ));
                }
                rows.extend(r);
            }
            Outcome::Failed(msg) => {
                // Leave no stale samples from an earlier run behind.
                let _ = std::fs::remove_file(out.path(&csv));
                let _ = std::fs::remove_file(out.path(&format!("{name}.png")));
                let mut row = vec![name.to_string(), "diverged".into()];
                row.resize(mode_header(dim).len(), String::new());
                rows.push(row);
                report.push((format!("{name}_status"), "diverged".into()));
                failures.push(format!("{name}: {msg}"));
            }
        }
    }
    crate::analysis::write_mode_weights(out, dim, rows)?;
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Numerical(failures.join("; ")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailStats {
    pub rows: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl TailStats {
    /// Statistics of the final `ceil(len / 10)` values.
    pub fn final_tenth(values: &[f64]) -> TailStats {
        let rows = values.len().div_ceil(10).max(1).min(values.len());
        let tail = &values[values.len() - rows..];
        TailStats {
            rows,
            mean: tail.iter().sum::<f64>() / rows as f64,
            min: tail.iter().copied().fold(f64::INFINITY, f64::min),
            max: tail.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `(max - min) / |mean|`.
    pub fn relative_spread(&self) -> f64 {
        (self.max - self.min) / self.mean.abs()
    }
}

/// Trains identical networks on a clean segment and on the same segment
/// with a small Gaussian perturbation, logging the loss every iteration.
pub fn manifold(cfg: &ExperimentConfig, out: &OutDir) -> CliResult<Report> {
    let defaults = TrainDefaults::MANIFOLD;
    let (hidden, layers) = cfg.network(&defaults);
    let tc = cfg.train_config(&defaults)?;
    if tc.log_every != 1 {
        return Err(CliError::config(
            "repro manifold logs every iteration; drop [train] log_every",
        ));
    }
    if tc.checkpoint_every > 0 {
        return Err(CliError::config(
            "repro manifold does not write intermediate checkpoints",
        ));
    }
    let noise = cfg.perturb_variance()?.sqrt();
    let mut summary = Vec::new();
    let mut report = Vec::new();
    let mut curves = Vec::new();
    for (name, sigma) in [("clean", 0.0), ("perturbed", noise)] {
        let data = ManifoldDataset::unit_segment(sigma)?;
        let single = NoiseSchedule::new(vec![1.0])?;
        let mut init = NoiseRng::with_stream(cfg.seed(), streams::INIT);
        let mut net = NcsnMlp::build(2, hidden, layers, single, &mut init)?;
        let log = train(&mut net, &data, &tc)?;
        out.write_with(&format!("loss_{name}.csv"), |buf| log.write_csv(buf))?;
        let totals = log.totals();
        let tail = TailStats::final_tenth(&totals);
        summary.push(vec![
            name.to_string(),
            num(sigma),
            totals.len().to_string(),
            tail.rows.to_string(),
            num(tail.mean),
            num(tail.min),
            num(tail.max),
            num(tail.relative_spread()),
        ]);
        report.push((format!("{name}_spread"), num(tail.relative_spread())));
        curves.push(totals);
    }
    out.write_csv(
        "manifold_summary.csv",
        &[
            "run",
            "noise_sigma",
            "iterations",
            "tail_rows",
            "tail_mean",
            "tail_min",
            "tail_max",
            "relative_spread",
        ],
        summary,
    )?;
    plot::lines(
        out,
        "loss_curves.png",
        &[(&curves[0], plot::ORANGE), (&curves[1], plot::BLUE)],
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_of_short_series() {
        let t = TailStats::final_tenth(&[5.0]);
        assert_eq!((t.rows, t.mean), (1, 5.0));
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let t = TailStats::final_tenth(&v);
        assert_eq!((t.rows, t.min, t.max, t.mean), (2, 19.0, 20.0, 19.5));
        assert!((t.relative_spread() - 1.0 / 19.5).abs() < 1e-15);
    }
}
