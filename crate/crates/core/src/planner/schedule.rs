//! Noise levels and the denoiser preconditioning coefficients.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PlannerError;

/// Training noise distribution and sampling level grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_data: f64,
    /// Mean of ln σ during training.
    pub p_mean: f64,
    /// Standard deviation of ln σ during training.
    pub p_std: f64,
    pub sigma_min: f64,
    /// Initial sampling level, also the scale of the initial noise.
    pub s_noise: f64,
    pub rho: f64,
    /// Number of nonzero sampling levels.
    pub levels: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            sigma_data: 0.1,
            p_mean: -1.2,
            p_std: 1.2,
            sigma_min: 0.002,
            s_noise: 8.0,
            rho: 7.0,
            levels: 32,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let ok = self.sigma_data > 0.0
            && self.p_std >= 0.0
            && self.sigma_min > 0.0
            && self.s_noise > self.sigma_min
            && self.rho > 0.0
            && self.levels >= 1
            && [self.sigma_data, self.p_mean, self.p_std, self.sigma_min, self.s_noise, self.rho]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(PlannerError::Config(format!("invalid noise schedule {self:?}")))
        }
    }

    /// `t_0 > t_1 > ... > t_{N-1} = σ_min`, followed by `t_N = 0`.
    pub fn sigmas(&self) -> Vec<f64> {
        let n = self.levels;
        let (lo, hi) = (self.sigma_min.powf(1.0 / self.rho), self.s_noise.powf(1.0 / self.rho));
        let mut out: Vec<f64> = (0..n)
            .map(|i| {
                let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                (hi + f * (lo - hi)).powf(self.rho)
            })
            .collect();
        out.push(0.0);
        out
    }

    /// Draws a training noise level, `ln σ ~ N(p_mean, p_std²)`.
    pub fn sample_training_sigma(&self, rng: &mut impl Rng) -> f64 {
        let n = Normal::new(self.p_mean, self.p_std).expect("validated schedule");
        n.sample(rng).exp()
    }

    pub fn precond(&self, sigma: f64) -> Precond {
        Precond::new(sigma, self.sigma_data)
    }
}

/// Input, skip, output and noise-conditioning scalings at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precond {
    pub c_in: f64,
    pub c_skip: f64,
    pub c_out: f64,
    pub c_noise: f64,
}

impl Precond {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let s2 = sigma * sigma + sigma_data * sigma_data;
        Precond {
            c_in: 1.0 / s2.sqrt(),
            c_skip: sigma_data * sigma_data / s2,
            c_out: sigma * sigma_data / s2.sqrt(),
            c_noise: 0.25 * sigma.ln(),
        }
    }
}

/// `∇ log p ≈ (D(x) - x) / σ²`.
pub fn score(x: &[f64], denoised: &[f64], sigma: f64) -> Vec<f64> {
    let s2 = sigma * sigma;
    x.iter().zip(denoised).map(|(x, d)| (d - x) / s2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmas_strictly_decrease_to_zero() {
        let s = NoiseSchedule::default().sigmas();
        assert_eq!(s.len(), 33);
        assert!((s[0] - 8.0).abs() < 1e-12);
        assert!((s[31] - 0.002).abs() < 1e-12);
        assert_eq!(s[32], 0.0);
        assert!(s.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn precond_at_sigma_data() {
        let p = Precond::new(0.1, 0.1);
        assert!((p.c_in - 1.0 / (0.1 * 2f64.sqrt())).abs() < 1e-12);
        assert!((p.c_in - 7.0711).abs() < 1e-4);
        assert!((p.c_skip - 0.5).abs() < 1e-15);
        assert!((p.c_noise - 0.25 * 0.1f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn precond_small_sigma_limit() {
        let p = Precond::new(1e-9, 0.1);
        assert!((p.c_skip - 1.0).abs() < 1e-12);
        assert!(p.c_out < 1e-8);
    }

    #[test]
    fn score_of_gaussian_denoiser_is_exact() {
        let (sd, sigma) = (0.1, 0.7);
        let x = [0.3, -1.2, 2.0];
        let d: Vec<f64> = x.iter().map(|v| sd * sd * v / (sigma * sigma + sd * sd)).collect();
        let s = score(&x, &d, sigma);
        for (si, xi) in s.iter().zip(x) {
            assert!((si + xi / (sigma * sigma + sd * sd)).abs() < 1e-12);
        }
        // σ doubled with D and x held fixed: the score scales by 1/4
        let s2 = score(&x, &d, 2.0 * sigma);
        for (a, b) in s.iter().zip(&s2) {
            assert!((a / 4.0 - b).abs() < 1e-12);
        }
        assert!(score(&x, &x, sigma).iter().all(|v| *v == 0.0));
    }
}
