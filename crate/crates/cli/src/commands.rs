//! `train`, `sample`, `inpaint` and `eval`.

use ncsn::samplers::{
    annealed_langevin, inpaint, sigma_scaled_norms, uniform_init, write_samples_csv,
    write_trajectory_csv,
};
use ncsn::trainer::{load_checkpoint, save_checkpoint, train, LossLog, TrainMeta};
use ncsn::{
    AnalyticScore, IsotropicGaussianMixture, LangevinConfig, NcsnMlp, NoiseRng, NoiseSchedule,
    ScoreSource, Tensor,
};

use crate::analysis::{mode_rows, score_field, write_mode_weights, write_sigma_norms};
use crate::config::{ExperimentConfig, SamplerDefaults, SamplerSettings, ScoreName, TrainDefaults};
use crate::error::{CliError, CliResult};
use crate::output::{num, OutDir};
use crate::{plot, streams, Report};

pub fn cmd_train(cfg: &ExperimentConfig, out: &OutDir) -> CliResult<Report> {
    let dist = cfg.mixture()?;
    let (schedule, _) = cfg.schedule()?;
    let defaults = TrainDefaults::NCSN;
    let (hidden, layers) = cfg.network(&defaults);
    let mut tc = cfg.train_config(&defaults)?;
    if tc.checkpoint_every > 0 {
        let dir = out.path("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        tc.checkpoint_dir = Some(dir);
    }
    let mut init = NoiseRng::with_stream(cfg.seed(), streams::INIT);
    let mut net = NcsnMlp::build(dist.dim(), hidden, layers, schedule, &mut init)?;
    let log = train(&mut net, &dist, &tc)?;
    write_loss(out, "loss.csv", "loss.png", &log)?;
    let meta = TrainMeta {
        iteration: tc.iterations as u32,
        seed: cfg.seed(),
        objective: tc.objective.kind(),
    };
    let model = out.path("model.ncsn");
    save_checkpoint(&net, meta, &model)?;
    Ok(vec![
        ("iterations".into(), tc.iterations.to_string()),
        ("final_loss".into(), num(log.tail_mean(0.0))),
        ("checkpoint".into(), model.display().to_string()),
    ])
}

pub fn write_loss(out: &OutDir, csv: &str, png: &str, log: &LossLog) -> CliResult<()> {
    out.write_with(csv, |buf| log.write_csv(buf))?;
    plot::lines(out, png, &[(&log.totals(), plot::BLUE)])
}

/// Loads the configured checkpoint and checks it against the configured
/// data dimension, schedule and architecture.
pub fn load_learned(
    cfg: &ExperimentConfig,
    schedule: &NoiseSchedule,
    dim: usize,
) -> CliResult<NcsnMlp> {
    let path = cfg.checkpoint.as_deref().ok_or_else(|| {
        CliError::config("a learned score needs `checkpoint = \"path\"` in the config")
    })?;
    let ck = load_checkpoint(path)?;
    let (hidden, layers) = cfg.network(&TrainDefaults::NCSN);
    let shape = ck.shape;
    let mismatch = |what: &str, have: String, want: String| {
        CliError::config(format!(
            "checkpoint {} has {what} {have}, config has {want}",
            path.display()
        ))
    };
    if ck.sigmas != schedule.sigmas() {
        return Err(mismatch(
            "schedule",
            format!("{:?}", ck.sigmas),
            format!("{:?}", schedule.sigmas()),
        ));
    }
    if shape.dim != dim {
        return Err(mismatch(
            "dimension",
            shape.dim.to_string(),
            dim.to_string(),
        ));
    }
    if (shape.hidden, shape.layers) != (hidden, layers) {
        return Err(mismatch(
            "network",
            format!("{}x{}", shape.hidden, shape.layers),
            format!("{hidden}x{layers}"),
        ));
    }
    Ok(ck.network()?)
}

fn score_source(
    cfg: &ExperimentConfig,
    settings: &SamplerSettings,
    dist: &IsotropicGaussianMixture,
    schedule: &NoiseSchedule,
) -> CliResult<Box<dyn ScoreSource>> {
    Ok(match settings.score {
        ScoreName::Learned => Box::new(load_learned(cfg, schedule, dist.dim())?),
        ScoreName::Analytic => Box::new(AnalyticScore::perturbed(dist, schedule)?),
    })
}

fn langevin_config(s: &SamplerSettings) -> LangevinConfig {
    LangevinConfig {
        epsilon: s.epsilon,
        steps: s.steps,
        record_every: s.record_every,
    }
}

fn plot_bound(s: &SamplerSettings) -> f64 {
    s.init.0.abs().max(s.init.1.abs())
}

fn run_annealed(
    cfg: &ExperimentConfig,
    s: &SamplerSettings,
    score: &dyn ScoreSource,
    schedule: &NoiseSchedule,
    dim: usize,
) -> CliResult<(Tensor, ncsn::samplers::Trajectory)> {
    let mut rng = NoiseRng::with_stream(cfg.seed(), streams::SAMPLE);
    let x0 = uniform_init(s.chains, dim, s.init.0, s.init.1, &mut rng);
    Ok(annealed_langevin(
        score,
        schedule,
        &x0,
        &langevin_config(s),
        &mut rng,
    )?)
}

pub fn cmd_sample(cfg: &ExperimentConfig, out: &OutDir) -> CliResult<Report> {
    let dist = cfg.mixture()?;
    let (schedule, _) = cfg.schedule()?;
    let s = cfg.sampler(&SamplerDefaults::LEARNED)?;
    let score = score_source(cfg, &s, &dist, &schedule)?;
    let (x, traj) = run_annealed(cfg, &s, score.as_ref(), &schedule, dist.dim())?;
    out.write_with("samples.csv", |buf| {
        write_samples_csv(buf, &x, schedule.levels(), s.steps)
    })?;
    if s.record_every > 0 {
        out.write_with("trajectory.csv", |buf| {
            write_trajectory_csv(buf, dist.dim(), &traj)
        })?;
    }
    plot::scatter(out, "samples.png", &x, plot_bound(&s))?;
    let rows = mode_rows("annealed", &x, &dist)?;
    let report = weight_report(&rows);
    write_mode_weights(out, dist.dim(), rows)?;
    Ok(report)
}

fn weight_report(rows: &[Vec<String>]) -> Report {
    rows.iter()
        .map(|r| (format!("weight_mode{}", r[2]), r[r.len() - 1].clone()))
        .collect()
}

pub fn cmd_inpaint(cfg: &ExperimentConfig, out: &OutDir) -> CliResult<Report> {
    let dist = cfg.mixture()?;
    let dim = dist.dim();
    let (schedule, _) = cfg.schedule()?;
    let s = cfg.sampler(&SamplerDefaults::INPAINT)?;
    let (mask, known) = cfg.inpaint_target(dim)?;
    let score = score_source(cfg, &s, &dist, &schedule)?;
    let mut rng = NoiseRng::with_stream(cfg.seed(), streams::SAMPLE);
    let x = inpaint(
        score.as_ref(),
        &schedule,
        &known,
        &mask,
        &langevin_config(&s),
        &mut rng,
        s.chains,
        s.init,
    )?;
    out.write_with("inpaint.csv", |buf| {
        write_samples_csv(buf, &x, schedule.levels(), s.steps)
    })?;
    plot::scatter(out, "inpaint.png", &x, plot_bound(&s))?;

    // Posterior component weights given the observed coordinates only.
    let obs: Vec<usize> = mask.observed_indices().collect();
    let hidden: Vec<usize> = mask.unobserved_indices().collect();
    let project = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let marginal = IsotropicGaussianMixture::new(
        dist.weights().to_vec(),
        dist.means().iter().map(|m| project(m, &obs)).collect(),
        dist.variances().to_vec(),
    )?;
    let posterior = marginal.responsibilities(&project(&known, &obs))?;

    // Chains are assigned to the component whose mean is nearest in the
    // unobserved coordinates.
    let hidden_means: Vec<Vec<f64>> = dist.means().iter().map(|m| project(m, &hidden)).collect();
    let imputed = Tensor::from_rows(
        &x.rows_iter()
            .map(|r| project(r, &hidden))
            .collect::<Vec<_>>(),
    )?;
    let sample_weights = ncsn::samplers::mode_weight(&imputed, &hidden_means)?;
    let mut rows = Vec::new();
    for (method, weights) in [("inpaint", &sample_weights), ("conditional", &posterior)] {
        for (k, w) in weights.iter().enumerate() {
            let mut row = vec![method.to_string(), "ok".into(), (k + 1).to_string()];
            row.extend(dist.means()[k].iter().map(|&m| num(m)));
            row.push(num(*w));
            rows.push(row);
        }
    }
    write_mode_weights(out, dim, rows)?;

    let n = x.rows() as f64;
    let mut summary = Vec::new();
    let mut report = Vec::new();
    for d in 0..dim {
        let col: Vec<f64> = x.rows_iter().map(|r| r[d]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let observed = mask.is_observed(d);
        let cond_mean = if observed {
            known[d]
        } else {
            posterior
                .iter()
                .zip(dist.means())
                .map(|(r, m)| r * m[d])
                .sum()
        };
        summary.push(vec![
            (d + 1).to_string(),
            observed.to_string(),
            num(mean),
            num(std),
            num(cond_mean),
        ]);
        if !observed {
            report.push((format!("mean_x{}", d + 1), num(mean)));
        }
    }
    out.write_csv(
        "inpaint_summary.csv",
        &["dim", "observed", "mean", "std", "conditional_mean"],
        summary,
    )?;
    for (k, w) in sample_weights.iter().enumerate() {
        report.push((format!("weight_mode{}", k + 1), num(*w)));
    }
    Ok(report)
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &OutDir) -> CliResult<Report> {
    let dist = cfg.mixture()?;
    let (schedule, _) = cfg.schedule()?;
    let s = cfg.sampler(&SamplerDefaults::LEARNED)?;
    let e = cfg.eval()?;
    let score = score_source(cfg, &s, &dist, &schedule)?;

    let (x, _) = run_annealed(cfg, &s, score.as_ref(), &schedule, dist.dim())?;
    let rows = mode_rows("annealed", &x, &dist)?;
    let mut report = weight_report(&rows);
    write_mode_weights(out, dist.dim(), rows)?;

    // The last level is compared with the data smoothed at that level.
    let last = schedule.levels() - 1;
    let smoothed = dist.perturb(schedule.smallest())?;
    let field = score_field(score.as_ref(), last, &smoothed, &e)?;
    field.write(out)?;
    for r in field.regions() {
        report.push((format!("mse_{}", r.region), num(r.mean_sq_err)));
    }

    let points = dist.sample(
        e.points,
        &mut NoiseRng::with_stream(cfg.seed(), streams::EVAL_POINTS),
    );
    let norms = sigma_scaled_norms(score.as_ref(), &schedule, &points)?;
    write_sigma_norms(out, &norms)?;
    let scaled: Vec<f64> = norms.iter().map(|n| n.mean_scaled_norm).collect();
    let (lo, hi) = scaled
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    report.push(("sigma_norm_ratio".into(), num(hi / lo)));
    Ok(report)
}
