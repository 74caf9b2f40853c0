//! Control policies. Each maps the prepared observation of one agent to its
//! next state, either directly (replay) or through the kinematic model.

pub mod bicycle;
pub mod idm;
mod lane;
pub mod mobil;
mod traj;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::AgentId;

pub use bicycle::{bicycle_step, pursuit_action, slip_angle, BicycleParams, PursuitParams};
pub use idm::{idm_accel, IdmParams, Leader};
pub(crate) use lane::{lane_idm, LaneFollow};
pub use mobil::{mobil_incentive, AccelPair, MobilInput, MobilParams};
pub(crate) use traj::traj_idm;

/// Longitudinal acceleration (m/s^2) and front-wheel steering angle (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentAction {
    pub accel: f64,
    pub steer: f64,
}

impl AgentAction {
    pub fn new(accel: f64, steer: f64) -> Self {
        AgentAction { accel, steer }
    }

    pub fn is_finite(&self) -> bool {
        self.accel.is_finite() && self.steer.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Exact replay of the reference route.
    Expert,
    /// Pure-pursuit tracking of the reference route through the bicycle model.
    BicycleExpert,
    /// Lane following with IDM and MOBIL lane changes.
    LaneIdm,
    /// Path of the motion plan (or route) with IDM speed control.
    TrajIdm,
    /// Actions injected from outside, applied through the bicycle model.
    External,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Expert,
        PolicyKind::BicycleExpert,
        PolicyKind::LaneIdm,
        PolicyKind::TrajIdm,
        PolicyKind::External,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Expert => "expert",
            PolicyKind::BicycleExpert => "bicycle_expert",
            PolicyKind::LaneIdm => "lane_idm",
            PolicyKind::TrajIdm => "traj_idm",
            PolicyKind::External => "external",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy '{0}' (expected one of expert, bicycle_expert, lane_idm, traj_idm, external)")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

/// Which policy drives which agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAssignment {
    pub default: PolicyKind,
    #[serde(default)]
    pub overrides: BTreeMap<AgentId, PolicyKind>,
}

impl PolicyAssignment {
    pub fn uniform(kind: PolicyKind) -> Self {
        PolicyAssignment {
            default: kind,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with(mut self, agent: AgentId, kind: PolicyKind) -> Self {
        self.overrides.insert(agent, kind);
        self
    }

    pub fn for_agent(&self, id: AgentId) -> PolicyKind {
        self.overrides.get(&id).copied().unwrap_or(self.default)
    }
}

impl Default for PolicyAssignment {
    fn default() -> Self {
        PolicyAssignment::uniform(PolicyKind::Expert)
    }
}

/// Parameters shared by all policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    pub idm: IdmParams,
    pub mobil: MobilParams,
    pub bicycle: BicycleParams,
    pub pursuit: PursuitParams,
    /// Duration of the lateral blend of a lane change, seconds.
    pub lane_change_duration: f64,
    /// How far ahead leaders are searched along the lane graph, meters.
    pub leader_horizon: f64,
    /// Lower bound of the IDM target speed when tracking a plan, m/s.
    pub min_plan_speed: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            idm: IdmParams::default(),
            mobil: MobilParams::default(),
            bicycle: BicycleParams::default(),
            pursuit: PursuitParams::default(),
            lane_change_duration: 3.0,
            leader_horizon: 150.0,
            min_plan_speed: 1.0,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.idm.is_valid() {
            return Err("idm parameters must be positive and finite".into());
        }
        if !self.mobil.is_valid() {
            return Err("mobil politeness must lie in [0, 1] and thresholds be positive".into());
        }
        let b = &self.bicycle;
        if !(b.max_accel > 0.0 && b.max_steer > 0.0 && b.wheelbase_ratio > 0.0) {
            return Err("bicycle limits must be positive".into());
        }
        if !(self.lane_change_duration > 0.0 && self.leader_horizon > 0.0 && self.min_plan_speed > 0.0) {
            return Err("lane_change_duration, leader_horizon and min_plan_speed must be positive".into());
        }
        Ok(())
    }
}

/// Longitudinal advance under constant acceleration, stopping at zero speed.
/// Returns `(distance, new speed)`.
pub fn advance(v: f64, accel: f64, dt: f64) -> (f64, f64) {
    let v_new = v + accel * dt;
    if v_new >= 0.0 {
        (v * dt + 0.5 * accel * dt * dt, v_new)
    } else {
        (v * v / (2.0 * -accel), 0.0)
    }
}
