use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, normalize_angle, Polyline, Vec2};
use crate::scenario::AgentState;

use super::AgentAction;

/// Kinematic limits of the bicycle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BicycleParams {
    pub max_accel: f64,
    pub max_steer: f64,
    /// Wheelbase as a fraction of agent length.
    pub wheelbase_ratio: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        BicycleParams {
            max_accel: 6.0,
            max_steer: 0.3,
            wheelbase_ratio: 0.6,
        }
    }
}

impl BicycleParams {
    pub fn wheelbase(&self, length: f64) -> f64 {
        self.wheelbase_ratio * length
    }

    pub fn clamp(&self, action: AgentAction) -> AgentAction {
        AgentAction {
            accel: action.accel.clamp(-self.max_accel, self.max_accel),
            steer: action.steer.clamp(-self.max_steer, self.max_steer),
        }
    }
}

/// Slip angle at the geometric center for front-wheel angle `steer`.
pub fn slip_angle(steer: f64) -> f64 {
    (0.5 * steer.tan()).atan()
}

/// One explicit-Euler step of the kinematic bicycle model. The action is
/// clamped first; the returned action is what was actually applied.
pub fn bicycle_step(
    state: &AgentState,
    action: AgentAction,
    params: &BicycleParams,
    wheelbase: f64,
    tick: f64,
) -> (AgentState, AgentAction) {
    let applied = params.clamp(action);
    let beta = slip_angle(applied.steer);
    let v = state.speed;
    let dir = Vec2::from_heading(state.heading + beta);
    let next = AgentState {
        position: state.position + dir * (v * tick),
        heading: normalize_angle(state.heading + 2.0 * (v / wheelbase) * beta.sin() * tick),
        speed: (v + applied.accel * tick).max(0.0),
    };
    (next, applied)
}

/// Pure-pursuit tracking gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PursuitParams {
    pub min_lookahead: f64,
    pub lookahead_time: f64,
    /// Proportional speed gain, 1/s.
    pub speed_gain: f64,
}

impl Default for PursuitParams {
    fn default() -> Self {
        PursuitParams {
            min_lookahead: 3.0,
            lookahead_time: 0.5,
            speed_gain: 1.0,
        }
    }
}

/// Point `s` along the path, extrapolated along the end tangent past the end.
fn extended_point(path: &Polyline, s: f64) -> Vec2 {
    let len = path.length();
    if s <= len {
        path.point_at(s)
    } else {
        path.end() + Vec2::from_heading(path.heading_at(len)) * (s - len)
    }
}

/// Pure-pursuit steering plus proportional speed tracking toward
/// `target_speed`. The circular arc is taken tangent to the velocity
/// direction that the chosen steering angle itself induces (heading plus
/// slip), which has the closed form
/// `tan(beta) = wb * sin(alpha) / (D + wb * cos(alpha))` for a target at
/// distance `D` and bearing `alpha` off the heading. Output is clamped to the
/// bicycle limits.
pub fn pursuit_action(
    state: &AgentState,
    path: Option<&Polyline>,
    target_speed: f64,
    wheelbase: f64,
    bicycle: &BicycleParams,
    pursuit: &PursuitParams,
) -> AgentAction {
    let accel = pursuit.speed_gain * (target_speed - state.speed);
    let steer = match path {
        None => 0.0,
        Some(path) => {
            let lookahead = pursuit.min_lookahead.max(pursuit.lookahead_time * state.speed);
            let s = path.project(state.position).s;
            let to = extended_point(path, s + lookahead) - state.position;
            let dist = to.norm();
            if dist < 1e-9 {
                0.0
            } else {
                let alpha = angle_diff(to.angle(), state.heading);
                let beta = (wheelbase * alpha.sin()).atan2(dist + wheelbase * alpha.cos());
                (2.0 * beta.tan()).atan()
            }
        }
    };
    bicycle.clamp(AgentAction { accel, steer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn straight_step_exact() {
        let s = AgentState::new(Vec2::ZERO, 10.0, 0.0);
        let (n, _) = bicycle_step(&s, AgentAction::default(), &BicycleParams::default(), 2.7, 0.1);
        assert_eq!(n.position, Vec2::new(1.0, 0.0));
        assert_eq!(n.heading, 0.0);
        assert_eq!(n.speed, 10.0);
    }

    #[test]
    fn accel_is_clamped() {
        let s = AgentState::new(Vec2::ZERO, 10.0, 0.0);
        let (n, a) = bicycle_step(&s, AgentAction::new(100.0, 0.0), &BicycleParams::default(), 2.7, 0.1);
        assert_eq!(a.accel, 6.0);
        assert!((n.speed - 10.6).abs() < 1e-12);
    }

    #[test]
    fn constant_steer_curvature() {
        // yaw rate over speed is the path curvature 2 sin(beta) / L
        let p = BicycleParams::default();
        let wb = 2.7;
        let mut s = AgentState::new(Vec2::ZERO, 5.0, 0.0);
        let dt = 0.1;
        let (n, _) = bicycle_step(&s, AgentAction::new(0.0, 0.3), &p, wb, dt);
        let expected = 2.0 * slip_angle(0.3).sin() / wb;
        assert!(((n.heading - s.heading) / (s.speed * dt) - expected).abs() < 1e-9);
        // heading change per travelled distance stays constant over a lap
        for _ in 0..200 {
            s = bicycle_step(&s, AgentAction::new(0.0, 0.3), &p, wb, dt).0;
        }
        assert!((s.speed - 5.0).abs() < 1e-12);
    }

    #[test]
    fn on_route_is_idle() {
        let path = Polyline::new(vec![Vec2::new(-10.0, 0.0), Vec2::new(100.0, 0.0)]);
        let s = AgentState::new(Vec2::ZERO, 10.0, 0.0);
        let a = pursuit_action(&s, Some(&path), 10.0, 2.7, &BicycleParams::default(), &PursuitParams::default());
        assert!(a.accel.abs() < 1e-6 && a.steer.abs() < 1e-6);
    }

    #[test]
    fn left_of_route_steers_right() {
        let path = Polyline::new(vec![Vec2::new(-10.0, 0.0), Vec2::new(100.0, 0.0)]);
        let s = AgentState::new(Vec2::new(0.0, 2.0), 10.0, 0.0);
        let a = pursuit_action(&s, Some(&path), 10.0, 2.7, &BicycleParams::default(), &PursuitParams::default());
        assert!(a.steer < 0.0);
    }

    proptest! {
        #[test]
        fn speed_and_heading_stay_valid(v in 0.0..40.0f64, h in -10.0..10.0f64,
                                       a in -1e3..1e3f64, d in -10.0..10.0f64) {
            let s = AgentState::new(Vec2::ZERO, v, h);
            let (n, applied) = bicycle_step(&s, AgentAction::new(a, d), &BicycleParams::default(), 2.7, 0.1);
            prop_assert!(n.speed >= 0.0);
            prop_assert!(n.heading > -std::f64::consts::PI && n.heading <= std::f64::consts::PI);
            prop_assert!(applied.accel.abs() <= 6.0 && applied.steer.abs() <= 0.3);
        }
    }
}
