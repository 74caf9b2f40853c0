use serde::{Deserialize, Serialize};

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    /// Maximum acceleration, m/s^2.
    pub acc_max: f64,
    /// Desired time headway, s.
    pub time_headway: f64,
    /// Desired speed, m/s.
    pub v_target: f64,
    /// Jam distance, m.
    pub min_gap: f64,
    /// Comfortable deceleration, m/s^2.
    pub comfortable_decel: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            acc_max: 5.0,
            time_headway: 2.0,
            v_target: 20.0,
            min_gap: 2.0,
            comfortable_decel: 3.5,
            exponent: 4.0,
        }
    }
}

impl IdmParams {
    pub fn is_valid(&self) -> bool {
        [
            self.acc_max,
            self.time_headway,
            self.v_target,
            self.min_gap,
            self.comfortable_decel,
            self.exponent,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite())
    }

    /// Equilibrium bumper gap at constant speed `v` behind an equally fast
    /// leader.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        let free = 1.0 - (v / self.v_target).powf(self.exponent);
        (self.min_gap + v * self.time_headway) / free.max(1e-12).sqrt()
    }
}

/// A leader as seen by the follower: its speed and the bumper-to-bumper gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub speed: f64,
    pub gap: f64,
}

impl Leader {
    pub fn new(speed: f64, gap: f64) -> Self {
        Leader { speed, gap }
    }

    /// The closer of two optional leaders.
    pub fn nearest(a: Option<Leader>, b: Option<Leader>) -> Option<Leader> {
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.gap < x.gap { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        }
    }
}

/// IDM acceleration, clamped to `[-2b, acc_max]`. Without a leader the
/// interaction term is dropped.
pub fn idm_accel(v: f64, leader: Option<Leader>, params: &IdmParams) -> f64 {
    let p = params;
    let mut a = p.acc_max * (1.0 - (v.max(0.0) / p.v_target).powf(p.exponent));
    if let Some(l) = leader {
        if l.gap <= 0.0 {
            return -2.0 * p.comfortable_decel;
        }
        let s_star = p.min_gap
            + (v * p.time_headway + v * (v - l.speed) / (2.0 * (p.acc_max * p.comfortable_decel).sqrt()))
                .max(0.0);
        a -= p.acc_max * (s_star / l.gap).powi(2);
    }
    a.clamp(-2.0 * p.comfortable_decel, p.acc_max)
}
