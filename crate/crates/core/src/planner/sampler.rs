//! Second-order (Heun) sampling over the level grid with clipped gradient
//! guidance after every level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::autodiff::Mat;
use super::schedule::NoiseSchedule;
use super::PlannerError;

/// A preconditioned denoiser `D(x; σ)`.
pub trait Denoiser {
    fn denoise(&mut self, x: &Mat, sigma: f64) -> Result<Mat, PlannerError>;
}

/// Exact denoiser for data distributed as `N(0, σ_data²)` per element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDenoiser {
    pub sigma_data: f64,
}

impl Denoiser for GaussianDenoiser {
    fn denoise(&mut self, x: &Mat, sigma: f64) -> Result<Mat, PlannerError> {
        let sd2 = self.sigma_data * self.sigma_data;
        let k = sd2 / (sigma * sigma + sd2);
        Ok(x.scaled(k))
    }
}

/// Differentiable guide objective `G` over the (normalized) sample.
pub trait GuideObjective {
    /// `G(x)` and `∇G(x)`.
    fn value_and_grad(&self, x: &Mat) -> (f64, Mat);
}

/// Guide objective from a closure.
pub struct FnGuide<F>(pub F);

impl<F: Fn(&Mat) -> (f64, Mat)> GuideObjective for FnGuide<F> {
    fn value_and_grad(&self, x: &Mat) -> (f64, Mat) {
        (self.0)(x)
    }
}

/// Guidance scale α, clip β and number of ascent steps K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideParams {
    pub alpha: f64,
    pub beta: f64,
    pub steps: usize,
}

impl Default for GuideParams {
    fn default() -> Self {
        GuideParams {
            alpha: 0.05,
            beta: 0.1,
            steps: 3,
        }
    }
}

impl GuideParams {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.beta > 0.0 && self.alpha >= 0.0 && self.alpha.is_finite() && self.beta.is_finite() {
            Ok(())
        } else {
            Err(PlannerError::Config(format!("invalid guide parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub plan: Mat,
    /// Largest per-element guide displacement observed at any level.
    pub max_guide_shift: f64,
}

fn check_finite(m: &Mat, level: usize, sigma: f64) -> Result<(), PlannerError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(PlannerError::NonFinite { level, sigma })
    }
}

/// `x` pulled toward `base` by whole ulps until `|x - base| <= beta` holds
/// in floating point; rounding in `base + delta` can overshoot by one.
fn within_clip(base: f64, mut x: f64, beta: f64) -> f64 {
    while (x - base).abs() > beta {
        x = if x > base { x.next_down() } else { x.next_up() };
    }
    x
}

/// Draws one sample of shape `rows x cols`, deterministic in `seed`.
pub fn sample(
    denoiser: &mut dyn Denoiser,
    schedule: &NoiseSchedule,
    rows: usize,
    cols: usize,
    guide: Option<(&dyn GuideObjective, GuideParams)>,
    seed: u64,
) -> Result<Sampled, PlannerError> {
    schedule.validate()?;
    if let Some((_, p)) = &guide {
        p.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = schedule.sigmas();
    let mut x = Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| schedule.s_noise * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect(),
    );
    let mut max_shift: f64 = 0.0;
    for i in 0..t.len() - 1 {
        let (ti, tn) = (t[i], t[i + 1]);
        let den = denoiser.denoise(&x, ti)?;
        check_finite(&den, i, ti)?;
        let d = x.zip(&den, |a, b| (a - b) / ti);
        let mut next = x.zip(&d, |a, b| a + (tn - ti) * b);
        if tn != 0.0 {
            let den2 = denoiser.denoise(&next, tn)?;
            check_finite(&den2, i, tn)?;
            let d2 = next.zip(&den2, |a, b| (a - b) / tn);
            next = Mat::from_vec(
                rows,
                cols,
                (0..x.len())
                    .map(|k| x.data[k] + (tn - ti) * (0.5 * d.data[k] + 0.5 * d2.data[k]))
                    .collect(),
            );
        }
        check_finite(&next, i, tn)?;
        if let Some((g, p)) = &guide {
            let base = next.clone();
            for _ in 0..p.steps {
                let (_, grad) = g.value_and_grad(&next);
                for k in 0..next.len() {
                    let stepped = next.data[k] + p.alpha * grad.data[k];
                    let delta = (stepped - base.data[k]).clamp(-p.beta, p.beta);
                    next.data[k] = within_clip(base.data[k], base.data[k] + delta, p.beta);
                    max_shift = max_shift.max((next.data[k] - base.data[k]).abs());
                }
            }
            check_finite(&next, i, tn)?;
        }
        x = next;
    }
    Ok(Sampled {
        plan: x,
        max_guide_shift: max_shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let s = NoiseSchedule::default();
        let mut d = GaussianDenoiser { sigma_data: 0.1 };
        let a = sample(&mut d, &s, 3, 4, None, 5).unwrap();
        let b = sample(&mut d, &s, 3, 4, None, 5).unwrap();
        assert_eq!(a, b);
        let c = sample(&mut d, &s, 3, 4, None, 6).unwrap();
        assert_ne!(a.plan, c.plan);
    }

    #[test]
    fn zero_steps_equals_no_guide() {
        let s = NoiseSchedule::default();
        let mut d = GaussianDenoiser { sigma_data: 0.1 };
        let g = FnGuide(|x: &Mat| (0.0, x.map(|_| 1.0)));
        let p = GuideParams {
            steps: 0,
            ..GuideParams::default()
        };
        let a = sample(&mut d, &s, 2, 2, Some((&g, p)), 1).unwrap();
        let b = sample(&mut d, &s, 2, 2, None, 1).unwrap();
        assert_eq!(a.plan, b.plan);
    }

    struct Nan;
    impl Denoiser for Nan {
        fn denoise(&mut self, x: &Mat, sigma: f64) -> Result<Mat, PlannerError> {
            Ok(if sigma < 1.0 { x.map(|_| f64::NAN) } else { x.clone() })
        }
    }

    #[test]
    fn non_finite_names_the_level() {
        let err = sample(&mut Nan, &NoiseSchedule::default(), 1, 1, None, 0).unwrap_err();
        match err {
            PlannerError::NonFinite { level, sigma } => {
                assert!(level > 0 && sigma < 1.0, "{level} {sigma}");
            }
            e => panic!("{e}"),
        }
    }
}
