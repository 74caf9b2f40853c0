use crate::geometry::{Polyline, Vec2};
use crate::scenario::{AgentState, RoutePoint};

const TIME_EPS: f64 = 1e-9;

/// A time-indexed state sequence on a fixed tick: a reference route or a
/// motion plan. The geometric path through its positions is built once.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    start: f64,
    tick: f64,
    states: Vec<AgentState>,
    path: Option<Polyline>,
}

impl Track {
    pub fn new(start: f64, tick: f64, states: Vec<AgentState>) -> Self {
        assert!(!states.is_empty(), "track needs at least one state");
        assert!(tick > 0.0);
        let mut pts: Vec<Vec2> = Vec::with_capacity(states.len());
        for s in &states {
            if pts.last().is_none_or(|p: &Vec2| p.distance(s.position) > 1e-6) {
                pts.push(s.position);
            }
        }
        let path = (pts.len() >= 2).then(|| Polyline::new(pts));
        Track {
            start,
            tick,
            states,
            path,
        }
    }

    pub fn from_route(route: &[RoutePoint], tick: f64) -> Option<Self> {
        let first = route.first()?;
        Some(Track::new(first.t, tick, route.iter().map(|p| p.state).collect()))
    }

    pub fn start_time(&self) -> f64 {
        self.start
    }

    pub fn tick(&self) -> f64 {
        self.tick
    }

    pub fn end_time(&self) -> f64 {
        self.start + (self.states.len() - 1) as f64 * self.tick
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn first(&self) -> &AgentState {
        &self.states[0]
    }

    pub fn last(&self) -> &AgentState {
        self.states.last().expect("non-empty")
    }

    pub fn endpoint(&self) -> Vec2 {
        self.last().position
    }

    /// Geometric path, `None` for a stationary track.
    pub fn path(&self) -> Option<&Polyline> {
        self.path.as_ref()
    }

    pub fn path_length(&self) -> f64 {
        self.path.as_ref().map_or(0.0, Polyline::length)
    }

    /// State at `t`: exact on samples, linear in between, `None` outside the
    /// covered interval.
    pub fn state_at(&self, t: f64) -> Option<AgentState> {
        let u = (t - self.start) / self.tick;
        let k = u.round();
        if (u - k).abs() * self.tick <= TIME_EPS {
            if k < 0.0 || k as usize >= self.states.len() {
                return None;
            }
            return Some(self.states[k as usize]);
        }
        if u < 0.0 {
            return None;
        }
        let i = u.floor() as usize;
        if i + 1 >= self.states.len() {
            return None;
        }
        Some(self.states[i].lerp(&self.states[i + 1], u - i as f64))
    }

    /// Route speed at `t`, clamped to the covered interval.
    pub fn speed_at(&self, t: f64) -> f64 {
        let t = t.clamp(self.start, self.end_time());
        self.state_at(t).map_or(self.last().speed, |s| s.speed)
    }
}
