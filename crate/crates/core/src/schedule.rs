use crate::error::{Error, Result};

/// Geometric sequence of noise levels `sigma_1 > ... > sigma_L`.
///
/// Levels are addressed by zero-based index: level `0` is the largest sigma.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

/// Relative tolerance on the constant ratio between consecutive levels.
const RATIO_TOLERANCE: f64 = 1e-9;

impl NoiseSchedule {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::invalid("noise schedule needs at least one level"));
        }
        if sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise levels must be positive and finite"));
        }
        if sigmas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::invalid("noise levels must be strictly decreasing"));
        }
        if sigmas.len() > 2 {
            let ratio = sigmas[0] / sigmas[1];
            for w in sigmas.windows(2).skip(1) {
                let r = w[0] / w[1];
                if ((r - ratio) / ratio).abs() > RATIO_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "noise levels are not geometric: ratio {r} vs {ratio}"
                    )));
                }
            }
        }
        Ok(NoiseSchedule { sigmas })
    }

    /// `levels` values from `first` down to `last`, equally spaced in log scale.
    pub fn geometric(first: f64, last: f64, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("noise schedule needs at least one level"));
        }
        if levels == 1 {
            return Self::new(vec![first]);
        }
        if !(first > last) {
            return Err(Error::invalid(format!(
                "first sigma {first} must exceed last sigma {last}"
            )));
        }
        let step = (last / first).ln() / (levels - 1) as f64;
        let mut sigmas: Vec<f64> = (0..levels)
            .map(|i| first * (step * i as f64).exp())
            .collect();
        sigmas[levels - 1] = last;
        Self::new(sigmas)
    }

    /// Schedule used for the two-dimensional toy problems: 10 levels, 10 down to 0.1.
    pub fn toy_default() -> Self {
        Self::geometric(10.0, 0.1, 10).expect("valid constants")
    }

    /// Schedule scaled for data in `[0, 1]`: 10 levels, 1 down to 0.01.
    pub fn unit_range_default() -> Self {
        Self::geometric(1.0, 0.01, 10).expect("valid constants")
    }

    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, level: usize) -> Result<f64> {
        self.sigmas
            .get(level)
            .copied()
            .ok_or(Error::LevelOutOfRange {
                level,
                levels: self.levels(),
            })
    }

    pub fn smallest(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    /// Annealed Langevin step size `eps * sigma_i^2 / sigma_L^2`; equals `eps`
    /// exactly at the last level.
    pub fn step_size(&self, level: usize, eps: f64) -> Result<f64> {
        let r = self.sigma(level)? / self.smallest();
        Ok(eps * r * r)
    }

    pub fn step_sizes(&self, eps: f64) -> Vec<f64> {
        (0..self.levels())
            .map(|i| self.step_size(i, eps).expect("in range"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_schedule() {
        let s = NoiseSchedule::toy_default();
        assert_eq!(s.levels(), 10);
        assert_eq!(s.sigmas()[0], 10.0);
        assert_eq!(s.smallest(), 0.1);
    }

    #[test]
    fn toy_step_sizes() {
        let a = NoiseSchedule::toy_default().step_sizes(0.1);
        assert!((a[0] - 1000.0).abs() < 1e-9);
        assert_eq!(a[9], 0.1);
    }

    #[test]
    fn unit_range_step_sizes() {
        let a = NoiseSchedule::unit_range_default().step_sizes(2e-5);
        assert!((a[0] - 0.2).abs() < 1e-15);
        assert_eq!(a[9], 2e-5);
    }

    #[test]
    fn rejects_bad_sequences() {
        assert!(NoiseSchedule::new(vec![]).is_err());
        assert!(NoiseSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(NoiseSchedule::new(vec![4.0, 2.0, 0.5]).is_err());
        assert!(NoiseSchedule::new(vec![1.0, -1.0]).is_err());
        assert!(NoiseSchedule::new(vec![4.0, 2.0, 1.0]).is_ok());
        assert!(NoiseSchedule::geometric(0.1, 10.0, 3).is_err());
    }

    #[test]
    fn single_level() {
        let s = NoiseSchedule::geometric(0.5, 0.5, 1).unwrap();
        assert_eq!(s.sigmas(), &[0.5]);
        assert_eq!(s.step_size(0, 0.3).unwrap(), 0.3);
        assert!(s.sigma(1).is_err());
    }
}
