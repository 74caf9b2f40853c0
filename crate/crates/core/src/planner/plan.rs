//! Motion plans: per-agent speed and heading sequences, and their
//! integration into trajectories.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Vec2};
use crate::scenario::{AgentId, AgentState};
use crate::sim::Track;

use super::autodiff::Mat;
use super::normalize::PlanNormalizer;

/// Speeds (m/s) and absolute headings (rad) for `steps` future ticks of
/// each listed agent, starting one tick after `start_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub agents: Vec<AgentId>,
    pub start_time: f64,
    pub tick: f64,
    pub speed: Vec<Vec<f64>>,
    pub heading: Vec<Vec<f64>>,
}

impl MotionPlan {
    pub fn steps(&self) -> usize {
        self.speed.first().map_or(0, Vec::len)
    }

    /// Plan from normalized rows `[v0, h0, v1, h1, ...]` with headings
    /// relative to each agent's current heading.
    pub fn from_normalized(x: &Mat, agents: Vec<AgentId>, starts: &[AgentState], norm: &PlanNormalizer, start_time: f64, tick: f64) -> Self {
        let mut speed = Vec::with_capacity(x.rows);
        let mut heading = Vec::with_capacity(x.rows);
        for (i, st) in starts.iter().enumerate().take(x.rows) {
            let row = norm.denormalize_row(x.row(i));
            speed.push(row.iter().step_by(2).copied().collect());
            heading.push(row.iter().skip(1).step_by(2).map(|h| st.heading + h).collect());
        }
        MotionPlan {
            agents,
            start_time,
            tick,
            speed,
            heading,
        }
    }

    /// Inverse of [`MotionPlan::from_normalized`].
    pub fn to_normalized(&self, starts: &[AgentState], norm: &PlanNormalizer) -> Mat {
        let cols = 2 * self.steps();
        let mut m = Mat::zeros(self.agents.len(), cols);
        for (i, st) in starts.iter().enumerate().take(self.agents.len()) {
            let raw: Vec<f64> = self.speed[i]
                .iter()
                .zip(&self.heading[i])
                .flat_map(|(v, h)| [*v, h - st.heading])
                .collect();
            m.row_mut(i).copy_from_slice(&norm.normalize_row(&raw));
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.speed.iter().chain(&self.heading).flatten().all(|v| v.is_finite())
    }

    /// States from the start state through every planned tick.
    pub fn trajectory(&self, row: usize, start: AgentState) -> Vec<AgentState> {
        integrate_plan(&self.speed[row], &self.heading[row], start, self.tick)
    }

    pub fn track(&self, row: usize, start: AgentState) -> Track {
        Track::new(self.start_time, self.tick, self.trajectory(row, start))
    }
}

/// `p_{t+1} = p_t + v_t (cos h_t, sin h_t) dt`. The result starts with
/// `start` and has one state per planned tick.
pub fn integrate_plan(speed: &[f64], heading: &[f64], start: AgentState, tick: f64) -> Vec<AgentState> {
    let mut out = Vec::with_capacity(speed.len() + 1);
    out.push(start);
    let mut p = start.position;
    for (v, h) in speed.iter().zip(heading) {
        p += Vec2::from_heading(*h) * (v * tick);
        out.push(AgentState::new(p, *v, normalize_angle(*h)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_speed_endpoint() {
        let traj = integrate_plan(&[10.0; 80], &[0.0; 80], AgentState::default(), 0.1);
        assert_eq!(traj.len(), 81);
        assert!((traj[80].position.x - 80.0).abs() < 1e-9);
        let still = integrate_plan(&[0.0; 80], &[0.7; 80], AgentState::new(Vec2::new(3.0, 4.0), 0.0, 0.7), 0.1);
        assert_eq!(still[80].position, Vec2::new(3.0, 4.0));
    }

    #[test]
    fn constant_turn_rate_follows_circle() {
        // v = 10, ω = 0.2 rad/s: radius 50
        let (v, w, dt, n) = (10.0, 0.2, 0.1, 80);
        let headings: Vec<f64> = (0..n).map(|t| w * dt * (t as f64 + 0.5)).collect();
        let traj = integrate_plan(&vec![v; n], &headings, AgentState::default(), dt);
        let r = v / w;
        for (t, s) in traj.iter().enumerate() {
            let th = w * dt * t as f64;
            let exact = Vec2::new(r * th.sin(), r * (1.0 - th.cos()));
            let travelled = v * dt * t as f64;
            assert!(s.position.distance(exact) <= 0.01 * travelled.max(1e-9) + 1e-9, "tick {t}");
        }
    }

    #[test]
    fn normalized_round_trip() {
        let norm = PlanNormalizer {
            speed_mean: 8.0,
            speed_std: 3.0,
            heading_mean: 0.0,
            heading_std: 0.2,
            sigma_data: 0.1,
        };
        let starts = [AgentState::new(Vec2::new(0.0, 0.0), 5.0, 1.0)];
        let x = Mat::from_vec(1, 4, vec![0.1, -0.05, 0.2, 0.0]);
        let plan = MotionPlan::from_normalized(&x, vec![AgentId(1)], &starts, &norm, 0.0, 0.1);
        assert!((plan.speed[0][0] - 11.0).abs() < 1e-12);
        assert!((plan.heading[0][0] - 0.9).abs() < 1e-12);
        let back = plan.to_normalized(&starts, &norm);
        for (a, b) in back.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
