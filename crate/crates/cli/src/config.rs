//! Experiment configuration: a TOML file whose sections are all optional.
//! Unknown keys are rejected and every path is resolved against the
//! directory holding the file.

use std::path::{Path, PathBuf};

use ncsn::trainer::{Objective, TrainConfig, Weighting};
use ncsn::{DimensionMask, IsotropicGaussianMixture, NoiseSchedule};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub distribution: DistributionSection,
    pub schedule: ScheduleSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub inpaint: InpaintSection,
    pub eval: EvalSection,
    pub fig3: Fig3Section,
    pub manifold: ManifoldSection,
}

/// Gaussian mixture with isotropic components; defaults to the two-mode
/// benchmark `0.2 N((-5,-5), I) + 0.8 N((5,5), I)`.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DistributionSection {
    pub weights: Option<Vec<f64>>,
    pub means: Option<Vec<Vec<f64>>>,
    pub variances: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePreset {
    /// 10 levels from 10 down to 0.1, sized for the 2-D mixtures.
    Toy,
    /// 10 levels from 1 down to 0.01, sized for data in `[0, 1]`.
    UnitRange,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub preset: Option<SchedulePreset>,
    pub sigma_first: Option<f64>,
    pub sigma_last: Option<f64>,
    pub levels: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Esm,
    Ssm,
    Dsm,
    Ncsn,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum WeightingName {
    SigmaSquared,
    Uniform,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub objective: Option<ObjectiveName>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub projections: Option<usize>,
    pub weighting: Option<WeightingName>,
    pub checkpoint_every: Option<usize>,
    pub log_every: Option<usize>,
    pub check_gradients: Option<bool>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScoreName {
    Learned,
    Analytic,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub score: Option<ScoreName>,
    pub epsilon: Option<f64>,
    pub steps: Option<usize>,
    pub chains: Option<usize>,
    pub init_low: Option<f64>,
    pub init_high: Option<f64>,
    pub record_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintSection {
    pub observed: Option<Vec<bool>>,
    pub known: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Grid points per axis.
    pub grid: Option<usize>,
    /// The grid spans `[-bound, bound]` on every axis.
    pub bound: Option<f64>,
    pub near_radius: Option<f64>,
    /// In-distribution points used for the per-level score statistics.
    pub points: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Section {
    pub samples: Option<usize>,
    pub vanilla_epsilon: Option<f64>,
    pub vanilla_steps: Option<usize>,
    pub annealed_epsilon: Option<f64>,
    pub annealed_steps: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldSection {
    /// Variance of the Gaussian perturbation in the perturbed run.
    pub perturb_variance: Option<f64>,
}

/// Per-command fallbacks for the `[network]` and `[train]` keys.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainDefaults {
    pub objective: ObjectiveName,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub layers: usize,
    pub log_every: usize,
}

impl TrainDefaults {
    /// Noise-conditional network on the toy mixture.
    pub const NCSN: TrainDefaults = TrainDefaults {
        objective: ObjectiveName::Ncsn,
        iterations: 4000,
        batch_size: 256,
        lr: 5e-4,
        hidden: 64,
        layers: 3,
        log_every: 10,
    };

    /// Sliced score matching on the mixture: 3 layers of 128 softplus units,
    /// 10000 Adam steps at 0.001 with batches of 128.
    pub const SCORE_FIELD: TrainDefaults = TrainDefaults {
        objective: ObjectiveName::Ssm,
        iterations: 10_000,
        batch_size: 128,
        lr: 1e-3,
        hidden: 128,
        layers: 3,
        log_every: 10,
    };

    /// Sliced score matching on the segment, one log row per iteration.
    pub const MANIFOLD: TrainDefaults = TrainDefaults {
        objective: ObjectiveName::Ssm,
        iterations: 1500,
        batch_size: 8192,
        lr: 1e-3,
        hidden: 32,
        layers: 2,
        log_every: 1,
    };
}

/// Fallbacks for the `[sampler]` keys.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerDefaults {
    pub score: ScoreName,
    pub epsilon: f64,
    pub steps: usize,
    pub chains: usize,
    pub init: (f64, f64),
}

impl SamplerDefaults {
    pub const LEARNED: SamplerDefaults = SamplerDefaults {
        score: ScoreName::Learned,
        epsilon: 0.01,
        steps: 100,
        chains: 1280,
        init: (-8.0, 8.0),
    };

    pub const INPAINT: SamplerDefaults = SamplerDefaults {
        chains: 2000,
        ..SamplerDefaults::LEARNED
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerSettings {
    pub score: ScoreName,
    pub epsilon: f64,
    pub steps: usize,
    pub chains: usize,
    pub init: (f64, f64),
    pub record_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fig3Settings {
    pub samples: usize,
    pub vanilla_epsilon: f64,
    pub vanilla_steps: usize,
    pub annealed_epsilon: f64,
    pub annealed_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub grid: usize,
    pub bound: f64,
    pub near_radius: f64,
    pub points: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.to_string();
            CliError::config(msg.split_whitespace().collect::<Vec<_>>().join(" "))
        })
    }

    /// Reads and parses `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.out, &mut self.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn mixture(&self) -> CliResult<IsotropicGaussianMixture> {
        let d = &self.distribution;
        match (&d.weights, &d.means, &d.variances) {
            (None, None, None) => Ok(IsotropicGaussianMixture::two_mode_benchmark()),
            (Some(w), Some(m), Some(v)) => Ok(IsotropicGaussianMixture::new(
                w.clone(),
                m.clone(),
                v.clone(),
            )?),
            _ => Err(CliError::config(
                "[distribution] needs all of weights, means and variances, or none",
            )),
        }
    }

    /// The configured schedule, plus a warning when its scale does not suit
    /// the toy data.
    pub fn schedule(&self) -> CliResult<(NoiseSchedule, Option<String>)> {
        let s = &self.schedule;
        let explicit = s.sigma_first.is_some() || s.sigma_last.is_some() || s.levels.is_some();
        match (s.preset, explicit) {
            (Some(_), true) => Err(CliError::config(
                "[schedule] takes either preset or sigma_first/sigma_last/levels, not both",
            )),
            (Some(SchedulePreset::UnitRange), false) => Ok((
                NoiseSchedule::unit_range_default(),
                Some("schedule preset unit_range is scaled for data in [0, 1]; its largest sigma is far below the toy mode separation".into()),
            )),
            (Some(SchedulePreset::Toy), false) | (None, false) => Ok((NoiseSchedule::toy_default(), None)),
            (None, true) => match (s.sigma_first, s.sigma_last, s.levels) {
                (Some(first), Some(last), Some(levels)) => Ok((NoiseSchedule::geometric(first, last, levels)?, None)),
                _ => Err(CliError::config(
                    "[schedule] needs all of sigma_first, sigma_last and levels",
                )),
            },
        }
    }

    pub fn network(&self, d: &TrainDefaults) -> (usize, usize) {
        (
            self.network.hidden.unwrap_or(d.hidden),
            self.network.layers.unwrap_or(d.layers),
        )
    }

    pub fn train_config(&self, d: &TrainDefaults) -> CliResult<TrainConfig> {
        let t = &self.train;
        let projections = t.projections.unwrap_or(1);
        let weighting = match t.weighting.unwrap_or(WeightingName::SigmaSquared) {
            WeightingName::SigmaSquared => Weighting::SigmaSquared,
            WeightingName::Uniform => Weighting::Uniform,
        };
        let objective = match t.objective.unwrap_or(d.objective) {
            ObjectiveName::Esm => Objective::Esm,
            ObjectiveName::Ssm => Objective::Ssm { projections },
            ObjectiveName::Dsm => Objective::Dsm,
            ObjectiveName::Ncsn => Objective::Ncsn { weighting },
        };
        let mut cfg =
            TrainConfig::new(objective, t.iterations.unwrap_or(d.iterations), self.seed());
        cfg.batch_size = t.batch_size.unwrap_or(d.batch_size);
        cfg.lr = t.lr.unwrap_or(d.lr);
        cfg.checkpoint_every = t.checkpoint_every.unwrap_or(0);
        cfg.log_every = t.log_every.unwrap_or(d.log_every);
        cfg.check_gradients = t.check_gradients.unwrap_or(false);
        // The checkpoint directory is supplied later by the command.
        let mut probe = cfg.clone();
        probe
            .checkpoint_dir
            .get_or_insert_with(|| PathBuf::from("."));
        probe.validate()?;
        Ok(cfg)
    }

    pub fn sampler(&self, d: &SamplerDefaults) -> CliResult<SamplerSettings> {
        let s = &self.sampler;
        let out = SamplerSettings {
            score: s.score.unwrap_or(d.score),
            epsilon: s.epsilon.unwrap_or(d.epsilon),
            steps: s.steps.unwrap_or(d.steps),
            chains: s.chains.unwrap_or(d.chains),
            init: (
                s.init_low.unwrap_or(d.init.0),
                s.init_high.unwrap_or(d.init.1),
            ),
            record_every: s.record_every.unwrap_or(0),
        };
        if out.chains == 0 {
            return Err(CliError::config("[sampler] chains must be >= 1"));
        }
        if !(out.init.0 < out.init.1) {
            return Err(CliError::config(
                "[sampler] init_low must be below init_high",
            ));
        }
        ncsn::LangevinConfig::new(out.epsilon, out.steps).validate()?;
        Ok(out)
    }

    pub fn inpaint_target(&self, dim: usize) -> CliResult<(DimensionMask, Vec<f64>)> {
        let observed = self.inpaint.observed.clone().unwrap_or_else(|| {
            let mut m = vec![false; dim];
            m[0] = true;
            m
        });
        let known = self.inpaint.known.clone().unwrap_or_else(|| {
            let mut k = vec![0.0; dim];
            k[0] = 5.0;
            k
        });
        if observed.len() != dim || known.len() != dim {
            return Err(CliError::config(format!(
                "[inpaint] observed and known must both have {dim} entries"
            )));
        }
        let mask = DimensionMask::new(observed);
        mask.check_for_inpainting(dim)?;
        Ok((mask, known))
    }

    pub fn eval(&self) -> CliResult<EvalSettings> {
        let e = &self.eval;
        let out = EvalSettings {
            grid: e.grid.unwrap_or(50),
            bound: e.bound.unwrap_or(8.0),
            near_radius: e.near_radius.unwrap_or(2.0),
            points: e.points.unwrap_or(2000),
        };
        if out.grid == 0 || out.points == 0 || !(out.bound > 0.0) || !(out.near_radius >= 0.0) {
            return Err(CliError::config(
                "[eval] needs grid >= 1, points >= 1, bound > 0, near_radius >= 0",
            ));
        }
        Ok(out)
    }

    /// Sampling settings for the three-way sampler comparison; defaults use
    /// 1280 samples, `eps = 0.1` with 1000 plain Langevin steps and
    /// `eps = 0.1` with 100 steps per level for the annealed run.
    pub fn fig3(&self) -> CliResult<Fig3Settings> {
        let f = &self.fig3;
        let out = Fig3Settings {
            samples: f.samples.unwrap_or(1280),
            vanilla_epsilon: f.vanilla_epsilon.unwrap_or(0.1),
            vanilla_steps: f.vanilla_steps.unwrap_or(1000),
            annealed_epsilon: f.annealed_epsilon.unwrap_or(0.1),
            annealed_steps: f.annealed_steps.unwrap_or(100),
        };
        if out.samples == 0 {
            return Err(CliError::config("[fig3] samples must be >= 1"));
        }
        ncsn::LangevinConfig::new(out.vanilla_epsilon, out.vanilla_steps).validate()?;
        ncsn::LangevinConfig::new(out.annealed_epsilon, out.annealed_steps).validate()?;
        Ok(out)
    }

    pub fn perturb_variance(&self) -> CliResult<f64> {
        let v = self.manifold.perturb_variance.unwrap_or(1e-4);
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::config("[manifold] perturb_variance must be > 0"));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.seed(), 0);
        let (s, warn) = cfg.schedule().unwrap();
        assert_eq!(s, NoiseSchedule::toy_default());
        assert!(warn.is_none());
        assert_eq!(
            cfg.mixture().unwrap(),
            IsotropicGaussianMixture::two_mode_benchmark()
        );
        let t = cfg.train_config(&TrainDefaults::SCORE_FIELD).unwrap();
        assert_eq!((t.iterations, t.batch_size, t.lr), (10_000, 128, 1e-3));
        assert_eq!(t.objective, Objective::Ssm { projections: 1 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[train]\niteration = 3").is_err());
        assert!(ExperimentConfig::from_toml("[trian]\niterations = 3").is_err());
    }

    #[test]
    fn schedule_preset_and_explicit_conflict() {
        let cfg = ExperimentConfig::from_toml("[schedule]\npreset = \"toy\"\nlevels = 3").unwrap();
        assert!(cfg.schedule().is_err());
        let cfg = ExperimentConfig::from_toml(
            "[schedule]\nsigma_first = 4.0\nsigma_last = 1.0\nlevels = 3",
        )
        .unwrap();
        assert_eq!(cfg.schedule().unwrap().0.sigmas(), &[4.0, 2.0, 1.0]);
        let cfg = ExperimentConfig::from_toml("[schedule]\npreset = \"unit_range\"").unwrap();
        let (s, warn) = cfg.schedule().unwrap();
        assert_eq!(s.sigmas()[0], 1.0);
        assert!(warn.is_some());
    }

    #[test]
    fn partial_distribution_rejected() {
        let cfg = ExperimentConfig::from_toml("[distribution]\nweights = [1.0]").unwrap();
        assert!(cfg.mixture().is_err());
        let cfg = ExperimentConfig::from_toml(
            "[distribution]\nweights = [1.0]\nmeans = [[0.0, 1.0]]\nvariances = [2.0]",
        )
        .unwrap();
        assert_eq!(cfg.mixture().unwrap().variances(), &[2.0]);
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut cfg =
            ExperimentConfig::from_toml("out = \"results\"\ncheckpoint = \"/abs/model.ncsn\"")
                .unwrap();
        cfg.resolve_paths(Path::new("/etc/runs"));
        assert_eq!(cfg.out_dir(), PathBuf::from("/etc/runs/results"));
        assert_eq!(cfg.checkpoint, Some(PathBuf::from("/abs/model.ncsn")));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let cfg = ExperimentConfig::from_toml("[train]\niterations = 0").unwrap();
        assert_eq!(
            cfg.train_config(&TrainDefaults::NCSN)
                .unwrap_err()
                .exit_code(),
            2
        );
        let cfg = ExperimentConfig::from_toml("[sampler]\nepsilon = -1.0").unwrap();
        assert!(cfg.sampler(&SamplerDefaults::LEARNED).is_err());
        let cfg = ExperimentConfig::from_toml("[inpaint]\nobserved = [true, true]").unwrap();
        assert!(cfg.inpaint_target(2).is_err());
    }

    #[test]
    fn inpaint_defaults_observe_first_coordinate() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        let (mask, known) = cfg.inpaint_target(2).unwrap();
        assert_eq!(mask.as_slice(), &[true, false]);
        assert_eq!(known, vec![5.0, 0.0]);
    }
}
