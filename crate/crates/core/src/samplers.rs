//! Langevin dynamics driven by any score source: plain, annealed over a
//! noise schedule, and with observed coordinates clamped for inpainting.
//!
//! No Metropolis–Hastings correction is applied and the final iterate is
//! returned as is, without a denoising step.

use crate::distributions::{DimensionMask, IsotropicGaussianMixture};
use crate::error::{Error, Result};
use crate::network::NcsnMlp;
use crate::rng::NoiseRng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Iterates whose largest coordinate exceeds this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreFlavor {
    Learned,
    Analytic,
}

/// Map `(x, level) -> score` over a batch (one point per row).
///
/// Implementations must be safe for concurrent read-only use.
pub trait ScoreSource {
    fn score(&self, x: &Tensor, level: usize) -> Result<Tensor>;

    fn flavor(&self) -> ScoreFlavor;
}

impl ScoreSource for NcsnMlp {
    fn score(&self, x: &Tensor, level: usize) -> Result<Tensor> {
        self.evaluate(x, level)
    }

    fn flavor(&self) -> ScoreFlavor {
        ScoreFlavor::Learned
    }
}

impl<F> ScoreSource for F
where
    F: Fn(&Tensor, usize) -> Result<Tensor>,
{
    fn score(&self, x: &Tensor, level: usize) -> Result<Tensor> {
        self(x, level)
    }

    fn flavor(&self) -> ScoreFlavor {
        ScoreFlavor::Analytic
    }
}

/// Exact scores of a Gaussian mixture, optionally convolved with the noise of
/// each schedule level.
#[derive(Clone, Debug)]
pub struct AnalyticScore {
    per_level: Vec<IsotropicGaussianMixture>,
}

impl AnalyticScore {
    /// The unperturbed data score, served at every level.
    pub fn data(dist: IsotropicGaussianMixture) -> Self {
        AnalyticScore {
            per_level: vec![dist],
        }
    }

    /// `grad log q_sigma_i` for each level `i` of `schedule`.
    pub fn perturbed(dist: &IsotropicGaussianMixture, schedule: &NoiseSchedule) -> Result<Self> {
        let per_level = schedule
            .sigmas()
            .iter()
            .map(|&s| dist.perturb(s))
            .collect::<Result<_>>()?;
        Ok(AnalyticScore { per_level })
    }

    pub fn distribution(&self, level: usize) -> &IsotropicGaussianMixture {
        &self.per_level[level.min(self.per_level.len() - 1)]
    }
}

impl ScoreSource for AnalyticScore {
    fn score(&self, x: &Tensor, level: usize) -> Result<Tensor> {
        let dist = if self.per_level.len() == 1 {
            &self.per_level[0]
        } else {
            self.per_level.get(level).ok_or(Error::LevelOutOfRange {
                level,
                levels: self.per_level.len(),
            })?
        };
        dist.score_batch(x)
    }

    fn flavor(&self) -> ScoreFlavor {
        ScoreFlavor::Analytic
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinConfig {
    /// Base step size; the step size at the last level of an annealed run.
    pub epsilon: f64,
    /// Steps per level.
    pub steps: usize,
    /// Snapshot interval in steps; 0 disables recording.
    pub record_every: usize,
}

impl LangevinConfig {
    pub fn new(epsilon: f64, steps: usize) -> Self {
        LangevinConfig {
            epsilon,
            steps,
            record_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_step(self.epsilon, self.steps)
    }
}

fn check_step(epsilon: f64, steps: usize) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!(
            "step size must be > 0, got {epsilon}"
        )));
    }
    if steps == 0 {
        return Err(Error::invalid("langevin needs at least one step"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub level: usize,
    pub step: usize,
    pub samples: Tensor,
}

/// Snapshots of the whole batch taken every `record_every` steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Snapshot>,
}

/// Observed coordinates are reset to `targets` after every step.
struct Clamp<'a> {
    mask: &'a DimensionMask,
    targets: &'a Tensor,
}

#[allow(clippy::too_many_arguments)]
fn run_level(
    score: &dyn ScoreSource,
    level: usize,
    mut x: Tensor,
    step_size: f64,
    steps: usize,
    record_every: usize,
    rng: &mut NoiseRng,
    trajectory: &mut Trajectory,
    clamp: Option<Clamp<'_>>,
) -> Result<Tensor> {
    let half = 0.5 * step_size;
    let noise_scale = step_size.sqrt();
    for step in 1..=steps {
        let s = score.score(&x, level)?;
        if s.shape() != x.shape() {
            return Err(Error::Shape {
                op: "langevin",
                lhs: x.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        for (xi, si) in x.data_mut().iter_mut().zip(s.data()) {
            *xi += half * si + noise_scale * rng.normal();
        }
        if let Some(c) = &clamp {
            for r in 0..x.rows() {
                let target = c.targets.row(r);
                let row = x.row_mut(r);
                for d in c.mask.observed_indices() {
                    row[d] = target[d];
                }
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFiniteIterate { level, step });
        }
        let magnitude = x.max_abs();
        if magnitude > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                level,
                step,
                magnitude,
            });
        }
        if record_every > 0 && step % record_every == 0 {
            trajectory.frames.push(Snapshot {
                level,
                step,
                samples: x.clone(),
            });
        }
    }
    Ok(x)
}

fn check_batch(x: &Tensor) -> Result<()> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::invalid(format!(
            "samplers take a nonempty batch matrix, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// `steps` iterations of `x <- x + (eps/2) s(x) + sqrt(eps) z` at a fixed level.
pub fn langevin(
    score: &dyn ScoreSource,
    level: usize,
    x0: &Tensor,
    epsilon: f64,
    steps: usize,
    rng: &mut NoiseRng,
) -> Result<Tensor> {
    check_step(epsilon, steps)?;
    check_batch(x0)?;
    let mut unused = Trajectory::default();
    run_level(
        score,
        level,
        x0.clone(),
        epsilon,
        steps,
        0,
        rng,
        &mut unused,
        None,
    )
}

/// Annealed Langevin dynamics: `steps` iterations at each level with step
/// size `eps * sigma_i^2 / sigma_L^2`, each level starting where the previous
/// one stopped.
pub fn annealed_langevin(
    score: &dyn ScoreSource,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    config: &LangevinConfig,
    rng: &mut NoiseRng,
) -> Result<(Tensor, Trajectory)> {
    config.validate()?;
    check_batch(x0)?;
    let mut trajectory = Trajectory::default();
    let mut x = x0.clone();
    for level in 0..schedule.levels() {
        let alpha = schedule.step_size(level, config.epsilon)?;
        x = run_level(
            score,
            level,
            x,
            alpha,
            config.steps,
            config.record_every,
            rng,
            &mut trajectory,
            None,
        )?;
    }
    Ok((x, trajectory))
}

/// Batch of `n` points uniform in the box `[low, high)^dim`.
pub fn uniform_init(n: usize, dim: usize, low: f64, high: f64, rng: &mut NoiseRng) -> Tensor {
    rng.uniform_matrix(n, dim, low, high)
}

/// Inpainting with annealed Langevin dynamics.
///
/// Every chain starts uniform in `init_box`. At each level a single noisy
/// copy `y = known + sigma_i z` is drawn per chain, and after every Langevin
/// step the observed coordinates are overwritten with those of `y`.
#[allow(clippy::too_many_arguments)]
pub fn inpaint(
    score: &dyn ScoreSource,
    schedule: &NoiseSchedule,
    known: &[f64],
    mask: &DimensionMask,
    config: &LangevinConfig,
    rng: &mut NoiseRng,
    n_chains: usize,
    init_box: (f64, f64),
) -> Result<Tensor> {
    config.validate()?;
    let dim = known.len();
    mask.check_for_inpainting(dim)?;
    if n_chains == 0 {
        return Err(Error::invalid("inpainting needs at least one chain"));
    }
    let mut x = uniform_init(n_chains, dim, init_box.0, init_box.1, rng);
    let mut unused = Trajectory::default();
    for level in 0..schedule.levels() {
        let alpha = schedule.step_size(level, config.epsilon)?;
        let sigma = schedule.sigma(level)?;
        let mut targets = Tensor::zeros(&[n_chains, dim]);
        for r in 0..n_chains {
            for (t, k) in targets.row_mut(r).iter_mut().zip(known) {
                *t = k + sigma * rng.normal();
            }
        }
        x = run_level(
            score,
            level,
            x,
            alpha,
            config.steps,
            0,
            rng,
            &mut unused,
            Some(Clamp {
                mask,
                targets: &targets,
            }),
        )?;
    }
    Ok(x)
}

/// Fraction of samples whose nearest mode (Euclidean) is each of `modes`.
/// Ties go to the lowest index.
pub fn mode_weight(samples: &Tensor, modes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if modes.is_empty() {
        return Err(Error::invalid("mode_weight needs at least one mode"));
    }
    if modes.iter().any(|m| m.len() != samples.cols()) {
        return Err(Error::invalid("modes must match the sample dimension"));
    }
    let mut counts = vec![0usize; modes.len()];
    for row in samples.rows_iter() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, m) in modes.iter().enumerate() {
            let d: f64 = row.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        counts[best] += 1;
    }
    let n = samples.rows().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Noise-scaled score magnitudes at one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaScaledNorm {
    pub level: usize,
    pub sigma: f64,
    /// Mean of `sigma_i |s(x, i)|`.
    pub mean_scaled_norm: f64,
    /// Mean of `|sigma_i s(x, i)|^2 / 4`, the squared signal-to-noise scale
    /// of an annealed Langevin step.
    pub signal_to_noise: f64,
}

/// Per-level statistics of `sigma_i s(x, sigma_i)` over the points `x`.
pub fn sigma_scaled_norms(
    score: &dyn ScoreSource,
    schedule: &NoiseSchedule,
    points: &Tensor,
) -> Result<Vec<SigmaScaledNorm>> {
    check_batch(points)?;
    let n = points.rows() as f64;
    schedule
        .sigmas()
        .iter()
        .enumerate()
        .map(|(level, &sigma)| {
            let s = score.score(points, level)?;
            let (mut norm, mut sq) = (0.0, 0.0);
            for row in s.rows_iter() {
                let r2: f64 = row.iter().map(|v| v * v).sum();
                norm += sigma * r2.sqrt();
                sq += 0.25 * sigma * sigma * r2;
            }
            Ok(SigmaScaledNorm {
                level,
                sigma,
                mean_scaled_norm: norm / n,
                signal_to_noise: sq / n,
            })
        })
        .collect()
}

/// Writes samples as CSV with header `chain,level,step,x1..xD`. `level` is
/// written one-based; 0 marks samples not produced by a sampler level.
pub fn write_samples_csv<W: std::io::Write>(
    out: W,
    samples: &Tensor,
    level: usize,
    step: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_header(&mut w, samples.cols())?;
    write_frame(&mut w, samples, level, step)?;
    w.flush()?;
    Ok(())
}

/// All frames of a trajectory in the sample CSV layout (levels one-based).
pub fn write_trajectory_csv<W: std::io::Write>(
    out: W,
    dim: usize,
    traj: &Trajectory,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_header(&mut w, dim)?;
    for f in &traj.frames {
        write_frame(&mut w, &f.samples, f.level + 1, f.step)?;
    }
    w.flush()?;
    Ok(())
}

fn write_header<W: std::io::Write>(w: &mut csv::Writer<W>, dim: usize) -> Result<()> {
    let mut header = vec!["chain".to_string(), "level".into(), "step".into()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    Ok(())
}

fn write_frame<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    samples: &Tensor,
    level: usize,
    step: usize,
) -> Result<()> {
    for (chain, row) in samples.rows_iter().enumerate() {
        let mut rec = vec![chain.to_string(), level.to_string(), step.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_score(x: &Tensor, _: usize) -> Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }

    #[test]
    fn zero_score_step_is_pure_diffusion() {
        let x0 = Tensor::from_rows(&[[1.0, -2.0], [0.5, 0.0]]).unwrap();
        let eps = 0.3;
        let x1 = langevin(&zero_score, 0, &x0, eps, 1, &mut NoiseRng::new(4)).unwrap();
        let z = NoiseRng::new(4).normal_vec(4);
        for ((a, b), z) in x1.data().iter().zip(x0.data()).zip(z) {
            assert_eq!(*a, b + eps.sqrt() * z);
        }
    }

    #[test]
    fn vanishing_step_leaves_samples_in_place() {
        let x0 = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let out = langevin(&zero_score, 0, &x0, 1e-300, 50, &mut NoiseRng::new(1)).unwrap();
        for (a, b) in out.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-140);
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        let x0 = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        assert!(langevin(&zero_score, 0, &x0, 0.0, 5, &mut NoiseRng::new(1)).is_err());
        assert!(langevin(&zero_score, 0, &x0, 0.1, 0, &mut NoiseRng::new(1)).is_err());
    }

    #[test]
    fn gaussian_stationary_variance() {
        let score = AnalyticScore::data(IsotropicGaussianMixture::standard_normal(2));
        let mut rng = NoiseRng::new(21);
        let x0 = uniform_init(1280, 2, -3.0, 3.0, &mut rng);
        let x = langevin(&score, 0, &x0, 0.1, 1000, &mut rng).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = x.rows_iter().map(|r| r[c]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((0.9..=1.15).contains(&var), "{var}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let explode = |x: &Tensor, _: usize| Ok(x.map(|v| 100.0 * v));
        let x0 = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        let err = langevin(&explode, 0, &x0, 0.5, 100, &mut NoiseRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { level: 0, .. }), "{err:?}");
    }

    #[test]
    fn mismatched_score_shape_is_rejected() {
        let bad = |_: &Tensor, _: usize| Ok(Tensor::zeros(&[1, 3]));
        let x0 = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(langevin(&bad, 0, &x0, 0.5, 1, &mut NoiseRng::new(0)).is_err());
    }

    #[test]
    fn single_level_annealing_is_plain_langevin() {
        let schedule = NoiseSchedule::new(vec![0.8]).unwrap();
        let score =
            AnalyticScore::perturbed(&IsotropicGaussianMixture::two_mode_benchmark(), &schedule)
                .unwrap();
        let x0 = Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
        let cfg = LangevinConfig::new(0.05, 30);
        let (a, _) =
            annealed_langevin(&score, &schedule, &x0, &cfg, &mut NoiseRng::new(3)).unwrap();
        let b = langevin(&score, 0, &x0, 0.05, 30, &mut NoiseRng::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn annealing_chains_levels() {
        let schedule = NoiseSchedule::geometric(3.0, 0.3, 4).unwrap();
        let score =
            AnalyticScore::perturbed(&IsotropicGaussianMixture::two_mode_benchmark(), &schedule)
                .unwrap();
        let x0 = Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]]).unwrap();
        let cfg = LangevinConfig::new(0.01, 20);
        let (annealed, _) =
            annealed_langevin(&score, &schedule, &x0, &cfg, &mut NoiseRng::new(8)).unwrap();
        let mut rng = NoiseRng::new(8);
        let mut x = x0.clone();
        let alphas = schedule.step_sizes(0.01);
        for (i, alpha) in alphas.iter().enumerate() {
            x = langevin(&score, i, &x, *alpha, 20, &mut rng).unwrap();
        }
        assert_eq!(annealed, x);
        for i in 0..4 {
            for j in 0..4 {
                let lhs = alphas[i] / alphas[j];
                let s = schedule.sigmas();
                let rhs = s[i] * s[i] / (s[j] * s[j]);
                assert!((lhs - rhs).abs() <= 1e-12 * rhs);
            }
        }
    }

    #[test]
    fn trajectory_snapshot_count() {
        let schedule = NoiseSchedule::geometric(3.0, 0.3, 3).unwrap();
        let x0 = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let cfg = LangevinConfig {
            epsilon: 0.01,
            steps: 10,
            record_every: 3,
        };
        let (_, traj) =
            annealed_langevin(&zero_score, &schedule, &x0, &cfg, &mut NoiseRng::new(0)).unwrap();
        assert_eq!(traj.frames.len(), 3 * (10 / 3));
        assert_eq!((traj.frames[0].level, traj.frames[0].step), (0, 3));
    }

    #[test]
    fn sampling_is_deterministic() {
        let schedule = NoiseSchedule::toy_default();
        let score =
            AnalyticScore::perturbed(&IsotropicGaussianMixture::two_mode_benchmark(), &schedule)
                .unwrap();
        let cfg = LangevinConfig {
            epsilon: 0.01,
            steps: 10,
            record_every: 5,
        };
        let run = || {
            let mut rng = NoiseRng::new(77);
            let x0 = uniform_init(16, 2, -8.0, 8.0, &mut rng);
            annealed_langevin(&score, &schedule, &x0, &cfg, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn inpainting_with_zero_score_pins_observed_dims() {
        let schedule = NoiseSchedule::geometric(1.0, 0.5, 2).unwrap();
        let mask = DimensionMask::new(vec![true, false, true]);
        let known = [2.0, 0.0, -1.0];
        let cfg = LangevinConfig::new(0.1, 1);
        let out = inpaint(
            &zero_score,
            &schedule,
            &known,
            &mask,
            &cfg,
            &mut NoiseRng::new(6),
            4,
            (-1.0, 1.0),
        )
        .unwrap();
        // Replay the draws: init box, then per level the target noise and the step noise.
        let mut rng = NoiseRng::new(6);
        let _ = uniform_init(4, 3, -1.0, 1.0, &mut rng);
        let _ = rng.normal_vec(12);
        let _ = rng.normal_vec(12);
        let y: Vec<f64> = rng.normal_vec(12);
        for r in 0..4 {
            assert_eq!(out.row(r)[0], 2.0 + 0.5 * y[3 * r]);
            assert_eq!(out.row(r)[2], -1.0 + 0.5 * y[3 * r + 2]);
        }
    }

    #[test]
    fn inpainting_requires_a_hidden_dimension() {
        let schedule = NoiseSchedule::toy_default();
        let mask = DimensionMask::new(vec![true, true]);
        let cfg = LangevinConfig::new(0.1, 1);
        let r = inpaint(
            &zero_score,
            &schedule,
            &[0.0, 0.0],
            &mask,
            &cfg,
            &mut NoiseRng::new(0),
            2,
            (0.0, 1.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn mode_weight_assignment() {
        let modes = vec![vec![-5.0, -5.0], vec![5.0, 5.0]];
        let at_second = Tensor::from_rows(&[[5.0, 5.0], [5.0, 5.0]]).unwrap();
        assert_eq!(mode_weight(&at_second, &modes).unwrap(), vec![0.0, 1.0]);
        let tie = Tensor::from_rows(&[[5.0, -5.0]]).unwrap();
        assert_eq!(mode_weight(&tie, &modes).unwrap(), vec![1.0, 0.0]);
        assert!(mode_weight(&tie, &[]).is_err());
    }

    #[test]
    fn exact_draws_have_benchmark_mode_weights() {
        let d = IsotropicGaussianMixture::two_mode_benchmark();
        let x = d.sample(1280, &mut NoiseRng::new(2024));
        let w = mode_weight(&x, d.means()).unwrap();
        assert!((0.77..=0.83).contains(&w[1]), "{w:?}");
    }

    #[test]
    fn samples_csv_layout() {
        let t = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.5]]).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &t, 10, 100).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "chain,level,step,x1,x2\n0,10,100,1,2\n1,10,100,3,4.5\n"
        );
    }
}
