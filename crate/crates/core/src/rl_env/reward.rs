use serde::{Deserialize, Serialize};

pub const FORWARD_SCALE: f64 = 0.1;
pub const COLLISION_PENALTY: f64 = -10.0;
pub const OFFROAD_PENALTY: f64 = -5.0;
pub const DESTINATION_REWARD: f64 = 10.0;
pub const DESTINATION_MISS: f64 = -5.0;

/// Per-step reward split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_forward: f64,
    pub p_collision: f64,
    pub p_road: f64,
    pub p_smooth: f64,
    pub r_dest: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.r_forward + self.p_collision + self.p_road + self.p_smooth + self.r_dest
    }
}

/// Progress along the route minus growth of the lateral offset magnitude.
pub fn forward_reward(ds: f64, d_prev: f64, d_now: f64) -> f64 {
    FORWARD_SCALE * (ds - (d_now.abs() - d_prev.abs()))
}

/// `min(0, 1/v - |steer|)`; zero at standstill.
pub fn smooth_penalty(speed: f64, steer: f64) -> f64 {
    if speed <= 0.0 {
        return 0.0;
    }
    (1.0 / speed - steer.abs()).min(0.0)
}

/// Evaluated when the episode ends. A truncated episode is only rewarded,
/// never penalized.
pub fn destination_reward(distance: f64, radius: f64, terminated: bool) -> f64 {
    if distance <= radius {
        DESTINATION_REWARD
    } else if terminated {
        DESTINATION_MISS
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_progress() {
        assert_eq!(forward_reward(1.0, 0.0, 0.0), 0.1);
        assert_eq!(forward_reward(1.0, -0.5, 0.5), 0.1);
        assert!((forward_reward(1.0, 0.0, 0.5) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn smoothness() {
        assert_eq!(smooth_penalty(2.0, 0.1), 0.0);
        assert!((smooth_penalty(10.0, -0.3) + 0.2).abs() < 1e-15);
        assert_eq!(smooth_penalty(0.0, 0.3), 0.0);
    }

    #[test]
    fn destination() {
        assert_eq!(destination_reward(1.0, 2.5, true), 10.0);
        assert_eq!(destination_reward(2.5, 2.5, false), 10.0);
        assert_eq!(destination_reward(3.0, 2.5, true), -5.0);
        assert_eq!(destination_reward(3.0, 2.5, false), 0.0);
    }
}
