//! Deterministic Adam training of an [`NcsnMlp`] on any score-matching
//! objective. Training only ever draws from the data source; it never runs a
//! sampler.

mod adam;
mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainMeta, FORMAT_VERSION, MAGIC,
};

use std::path::PathBuf;

use crate::autodiff::{check_gradient_at, Graph, Var};
use crate::distributions::DataSource;
use crate::error::{Error, Result};
use crate::network::{BoundNet, NcsnMlp};
use crate::objectives::{dsm_level, esm_exact, ncsn_loss, ssm, LevelLoss, LossValue};
use crate::rng::NoiseRng;
use crate::tensor::Tensor;

/// Level weighting `lambda(sigma)` of the all-level objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    SigmaSquared,
    Uniform,
}

impl Weighting {
    pub fn weight(self, sigma: f64) -> f64 {
        match self {
            Weighting::SigmaSquared => sigma * sigma,
            Weighting::Uniform => 1.0,
        }
    }
}

/// Loss minimized by [`train`]. Single-level objectives use level 0 of the
/// network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Esm,
    Ssm { projections: usize },
    Dsm,
    Ncsn { weighting: Weighting },
}

/// Objective family without its settings, as stored in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Esm,
    Ssm,
    Dsm,
    Ncsn,
}

impl ObjectiveKind {
    pub fn code(self) -> u32 {
        match self {
            ObjectiveKind::Esm => 0,
            ObjectiveKind::Ssm => 1,
            ObjectiveKind::Dsm => 2,
            ObjectiveKind::Ncsn => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => ObjectiveKind::Esm,
            1 => ObjectiveKind::Ssm,
            2 => ObjectiveKind::Dsm,
            3 => ObjectiveKind::Ncsn,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Esm => "esm",
            ObjectiveKind::Ssm => "ssm",
            ObjectiveKind::Dsm => "dsm",
            ObjectiveKind::Ncsn => "ncsn",
        }
    }
}

impl Objective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Objective::Esm => ObjectiveKind::Esm,
            Objective::Ssm { .. } => ObjectiveKind::Ssm,
            Objective::Dsm => ObjectiveKind::Dsm,
            Objective::Ncsn { .. } => ObjectiveKind::Ncsn,
        }
    }

    /// Records the loss of `net` on `batch`, drawing any noise from `rng`.
    pub fn loss(
        &self,
        g: &mut Graph,
        net: &BoundNet<'_>,
        batch: &Tensor,
        rng: &mut NoiseRng,
    ) -> Result<LossValue> {
        let schedule = net.net().schedule();
        let model = |g: &mut Graph, x: Var, level: usize| net.forward(g, x, level);
        let at_zero = |g: &mut Graph, x: Var| net.forward(g, x, 0);
        match *self {
            Objective::Esm => esm_exact(g, at_zero, batch),
            Objective::Ssm { projections } => ssm(g, at_zero, batch, projections, rng),
            Objective::Dsm => dsm_level(g, model, batch, 0, schedule, rng),
            Objective::Ncsn { weighting } => {
                ncsn_loss(g, model, batch, schedule, &|s| weighting.weight(s), rng)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub objective: Objective,
    /// Save every this many iterations; 0 never saves.
    pub checkpoint_every: usize,
    /// Directory for `ckpt_<iteration>.ncsn` files.
    pub checkpoint_dir: Option<PathBuf>,
    /// Keep every this many iterations in the loss log (the last iteration is
    /// always kept).
    pub log_every: usize,
    /// Spot-check each step's gradient against central differences.
    pub check_gradients: bool,
}

impl TrainConfig {
    pub fn new(objective: Objective, iterations: usize, seed: u64) -> Self {
        TrainConfig {
            iterations,
            batch_size: 128,
            lr: 1e-3,
            seed,
            objective,
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_every: 1,
            check_gradients: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be >= 1"));
        }
        if let Objective::Ssm { projections: 0 } = self.objective {
            return Err(Error::invalid("ssm needs at least one projection"));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::invalid(
                "checkpoint_every is set but checkpoint_dir is not",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub levels: Vec<LevelLoss>,
}

/// Append-only loss history ordered by iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    records: Vec<LossRecord>,
}

impl LossLog {
    pub fn push(&mut self, record: LossRecord) {
        if let Some(last) = self.records.last() {
            assert!(
                record.iteration > last.iteration,
                "loss log must grow in iteration order"
            );
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[LossRecord] {
        &self.records
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    /// Mean total loss over the last `fraction` of the records (at least one).
    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let n = ((self.records.len() as f64 * fraction).ceil() as usize)
            .clamp(1, self.records.len().max(1));
        let tail = &self.records[self.records.len() - n..];
        tail.iter().map(|r| r.total).sum::<f64>() / n as f64
    }

    /// Mean total loss over the first `fraction` of the records (at least one).
    pub fn head_mean(&self, fraction: f64) -> f64 {
        let n = ((self.records.len() as f64 * fraction).ceil() as usize)
            .clamp(1, self.records.len().max(1));
        self.records[..n].iter().map(|r| r.total).sum::<f64>() / n as f64
    }

    /// CSV with header `iteration,total,level,sigma,raw,weighted`, one row per
    /// loss term. Levels are one-based; empty for level-free objectives.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "total", "level", "sigma", "raw", "weighted"])?;
        for r in &self.records {
            for l in &r.levels {
                w.write_record([
                    r.iteration.to_string(),
                    r.total.to_string(),
                    l.level.map(|i| (i + 1).to_string()).unwrap_or_default(),
                    l.sigma.map(|s| s.to_string()).unwrap_or_default(),
                    l.raw.to_string(),
                    l.weighted().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Finite-difference step and tolerance of the per-iteration gradient check.
const CHECK_STEP: f64 = 1e-5;
const CHECK_TOLERANCE: f64 = 1e-4;
const CHECK_ENTRIES: usize = 5;

/// Trains `net` in place. Iterations are numbered from 1; each draws a fresh
/// batch, evaluates the objective and applies one Adam step.
pub fn train(net: &mut NcsnMlp, data: &dyn DataSource, config: &TrainConfig) -> Result<LossLog> {
    config.validate()?;
    if data.dim() != net.dim() {
        return Err(Error::invalid(format!(
            "data has dimension {}, network expects {}",
            data.dim(),
            net.dim()
        )));
    }
    let mut rng = NoiseRng::new(config.seed);
    let mut probe_rng = NoiseRng::with_stream(config.seed, 1);
    let mut adam = AdamState::new(net.params(), config.lr);
    let mut log = LossLog::default();
    for iteration in 1..=config.iterations {
        let batch = data.sample_batch(config.batch_size, &mut rng);
        let snapshot = rng.clone();
        let (loss, grads) = {
            let mut g = Graph::new();
            let bound = net.bind(&mut g);
            let loss = config.objective.loss(&mut g, &bound, &batch, &mut rng)?;
            if !loss.value.is_finite() {
                return Err(Error::NonFiniteLoss { iteration });
            }
            let grads = g.grad(loss.total, bound.vars())?.into_vec();
            (loss, grads)
        };
        if config.check_gradients {
            check_step(net, config, &batch, &snapshot, &mut probe_rng, iteration)?;
        }
        adam.step(net.params_mut(), &grads)?;
        if iteration % config.log_every == 0 || iteration == config.iterations {
            log.push(LossRecord {
                iteration,
                total: loss.value,
                levels: loss.levels,
            });
        }
        if config.checkpoint_every > 0 && iteration % config.checkpoint_every == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                let meta = TrainMeta {
                    iteration: iteration as u32,
                    seed: config.seed,
                    objective: config.objective.kind(),
                };
                save_checkpoint(net, meta, &dir.join(format!("ckpt_{iteration}.ncsn")))?;
            }
        }
    }
    Ok(log)
}

fn check_step(
    net: &NcsnMlp,
    config: &TrainConfig,
    batch: &Tensor,
    snapshot: &NoiseRng,
    probe_rng: &mut NoiseRng,
    iteration: usize,
) -> Result<()> {
    let params = net.params();
    let entries: Vec<(usize, usize)> = (0..CHECK_ENTRIES)
        .map(|_| {
            let p = (probe_rng.next_u64() % params.len() as u64) as usize;
            let j = (probe_rng.next_u64() % params[p].len() as u64) as usize;
            (p, j)
        })
        .collect();
    let build = |g: &mut Graph, vars: &[Var]| {
        let bound = net.bind_vars(vars.to_vec())?;
        let mut rng = snapshot.clone();
        Ok(config.objective.loss(g, &bound, batch, &mut rng)?.total)
    };
    let rel_err = check_gradient_at(build, params, CHECK_STEP, &entries)?;
    if rel_err >= CHECK_TOLERANCE {
        return Err(Error::GradientCheck { iteration, rel_err });
    }
    Ok(())
}
