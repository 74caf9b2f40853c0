//! Plan normalization. A plan row holds `(speed, heading offset)` pairs per
//! future tick, the heading taken relative to the agent's current heading.
//! Normalized values are z-scores scaled by σ_data.

use serde::{Deserialize, Serialize};

/// Channel statistics of a plan corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanNormalizer {
    pub speed_mean: f64,
    pub speed_std: f64,
    pub heading_mean: f64,
    pub heading_std: f64,
    pub sigma_data: f64,
}

const STD_FLOOR: f64 = 1e-3;

impl PlanNormalizer {
    pub fn identity(sigma_data: f64) -> Self {
        PlanNormalizer {
            speed_mean: 0.0,
            speed_std: sigma_data,
            heading_mean: 0.0,
            heading_std: sigma_data,
            sigma_data,
        }
    }

    /// Statistics from plan rows laid out as `[v0, h0, v1, h1, ...]`.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, sigma_data: f64) -> Self {
        let (mut n, mut sv, mut svv, mut sh, mut shh) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for r in rows {
            for c in r.chunks_exact(2) {
                n += 1.0;
                sv += c[0];
                svv += c[0] * c[0];
                sh += c[1];
                shh += c[1] * c[1];
            }
        }
        if n == 0.0 {
            return Self::identity(sigma_data);
        }
        let (mv, mh) = (sv / n, sh / n);
        let std = |s2: f64, m: f64| (s2 / n - m * m).max(0.0).sqrt().max(STD_FLOOR);
        PlanNormalizer {
            speed_mean: mv,
            speed_std: std(svv, mv),
            heading_mean: mh,
            heading_std: std(shh, mh),
            sigma_data,
        }
    }

    /// Physical units per normalized unit, for the speed and heading channels.
    pub fn scales(&self) -> (f64, f64) {
        (self.speed_std / self.sigma_data, self.heading_std / self.sigma_data)
    }

    pub fn normalize(&self, speed: f64, heading: f64) -> (f64, f64) {
        (
            self.sigma_data * (speed - self.speed_mean) / self.speed_std,
            self.sigma_data * (heading - self.heading_mean) / self.heading_std,
        )
    }

    pub fn denormalize(&self, n_speed: f64, n_heading: f64) -> (f64, f64) {
        let (ks, kh) = self.scales();
        (self.speed_mean + ks * n_speed, self.heading_mean + kh * n_heading)
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.chunks_exact(2)
            .flat_map(|c| {
                let (a, b) = self.normalize(c[0], c[1]);
                [a, b]
            })
            .collect()
    }

    pub fn denormalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.chunks_exact(2)
            .flat_map(|c| {
                let (a, b) = self.denormalize(c[0], c[1]);
                [a, b]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = [vec![10.0, 0.1, 12.0, -0.1], vec![8.0, 0.0, 9.0, 0.05]];
        let n = PlanNormalizer::fit(rows.iter().map(|r| r.as_slice()), 0.1);
        for r in &rows {
            let back = n.denormalize_row(&n.normalize_row(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // normalized speeds have standard deviation σ_data
        let z: Vec<f64> = rows.iter().flat_map(|r| n.normalize_row(r)).step_by(2).collect();
        let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!((var.sqrt() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_uses_floor() {
        let rows = [vec![5.0, 0.0, 5.0, 0.0]];
        let n = PlanNormalizer::fit(rows.iter().map(|r| r.as_slice()), 0.1);
        assert_eq!(n.speed_std, STD_FLOOR);
        assert_eq!(n.normalize(5.0, 0.0), (0.0, 0.0));
    }
}
