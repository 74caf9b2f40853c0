//! Single-agent driving environment: one externally controlled vehicle
//! (the SDC) among replayed or planner-driven background traffic.

mod evaluate;
mod flat;
mod reward;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::geometry::{Frenet, Polyline, Vec2};
use crate::planner::rollout::replan_seed;
use crate::planner::{
    GuideKind, GuideParams, GuideSpec, GuideTerm, InstalledPlan, NoiseSchedule, PlannerError, PlannerModel,
    Replanner,
};
use crate::policy::{AgentAction, PolicyAssignment, PolicyKind};
use crate::scenario::{AgentId, AgentState, Scenario};
use crate::sim::{AgentStatus, EventKind, SimConfig, SimError, Simulator, Track, WorldState};

pub use evaluate::{evaluate, EpisodeRecord, EvalReport, EnvView};
pub use flat::{FlatEnv, FlatStep};
pub use reward::{
    destination_reward, forward_reward, smooth_penalty, RewardBreakdown, COLLISION_PENALTY, DESTINATION_MISS,
    DESTINATION_REWARD, FORWARD_SCALE, OFFROAD_PENALTY,
};

/// Library version; bindings must report the same string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Route points in an observation, one per 0.1 s over the next second.
pub const ROUTE_POINTS: usize = 10;
pub const ROUTE_DIM: usize = 2 * ROUTE_POINTS;
pub const ROUTE_SPACING: f64 = 0.1;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("agent {0} is not in the scenario")]
    UnknownAgent(AgentId),
    #[error("agent {0} has no usable reference route")]
    NoRoute(AgentId),
    #[error("agent {0} is not active at the scenario start")]
    InactiveAgent(AgentId),
    #[error("scenario has no agent that can be controlled")]
    NoCandidate,
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error("reset must be called before step")]
    NotReset,
    #[error("action needs {ACTION_DIM} finite entries, got {0:?}")]
    BadAction(Vec<f64>),
    #[error("invalid env config: {0}")]
    Config(String),
    #[error(transparent)]
    RunConfig(#[from] ConfigError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

/// How the vehicles other than the SDC move.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BackgroundMode {
    /// Exact replay of the logged routes.
    #[default]
    LogReplay,
    DiffusionUnguided,
    /// Plans shaped by a guide, e.g. a driving style.
    DiffusionGuided { guide: GuideSpec },
    /// Plans pulled towards the SDC.
    DiffusionAdversarial {
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        params: GuideParams,
    },
}

fn one() -> f64 {
    1.0
}

impl BackgroundMode {
    pub fn uses_planner(&self) -> bool {
        !matches!(self, BackgroundMode::LogReplay)
    }

    fn guide(&self, sdc: AgentId, background: Vec<AgentId>) -> GuideSpec {
        match self {
            BackgroundMode::LogReplay | BackgroundMode::DiffusionUnguided => GuideSpec::default(),
            BackgroundMode::DiffusionGuided { guide } => guide.clone(),
            BackgroundMode::DiffusionAdversarial { weight, params } => GuideSpec {
                terms: vec![GuideTerm::new(GuideKind::AdversarialApproach { target: sdc }, *weight).for_agents(background)],
                params: *params,
            },
        }
    }
}

/// Which steering quantity the smoothness penalty reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothTerm {
    /// Commanded steering angle of the step.
    #[default]
    Steering,
    /// Change of the steering angle since the previous step.
    SteeringDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub background: BackgroundMode,
    /// Controlled agent; the first agent active at the start when unset.
    pub sdc: Option<AgentId>,
    /// Episode length, seconds.
    pub horizon: f64,
    pub replan_interval: f64,
    /// Sampler levels for background plans.
    pub levels: usize,
    pub dest_radius: f64,
    pub smooth: SmoothTerm,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            background: BackgroundMode::LogReplay,
            sdc: None,
            horizon: 9.0,
            replan_interval: 1.0,
            levels: 8,
            dest_radius: 2.5,
            smooth: SmoothTerm::Steering,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.horizon) || !pos(self.replan_interval) || !pos(self.dest_radius) {
            return Err(EnvError::Config(
                "horizon, replan_interval and dest_radius must be positive".into(),
            ));
        }
        if self.levels == 0 {
            return Err(EnvError::Config("levels must be positive".into()));
        }
        if let BackgroundMode::DiffusionGuided { guide } = &self.background {
            guide.validate()?;
        }
        if let BackgroundMode::DiffusionAdversarial { weight, params } = &self.background {
            if !(*weight >= 0.0 && weight.is_finite()) {
                return Err(EnvError::Config("adversarial weight must be non-negative".into()));
            }
            params.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation {
    /// The SDC's row of the scene encoder output at the current step.
    pub scene_embedding: Vec<f64>,
    /// Upcoming route points in the SDC frame, `[x0, y0, x1, y1, ...]`.
    pub route: Vec<f64>,
}

impl EnvObservation {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.scene_embedding.len() + self.route.len());
        v.extend_from_slice(&self.scene_embedding);
        v.extend_from_slice(&self.route);
        v
    }
}

/// Diagnostics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub time: f64,
    /// Action after the kinematic clamp.
    pub action: AgentAction,
    pub state: AgentState,
    /// Route coordinates of the SDC.
    pub s: f64,
    pub d: f64,
    pub collision: bool,
    pub off_road: bool,
    pub arrived: bool,
    pub distance_to_goal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: EnvObservation,
    pub reward: RewardBreakdown,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Maps a world point into the frame of `pose`.
pub fn to_local(pose: &AgentState, p: Vec2) -> Vec2 {
    (p - pose.position).rotate(-pose.heading)
}

/// Inverse of [`to_local`].
pub fn to_world(pose: &AgentState, p: Vec2) -> Vec2 {
    p.rotate(pose.heading) + pose.position
}

fn state_clamped(track: &Track, t: f64) -> AgentState {
    let t = t.clamp(track.start_time(), track.end_time());
    track.state_at(t).unwrap_or(*track.last())
}

struct Episode {
    world: WorldState,
    steps: u64,
    generations: usize,
    plan: Option<InstalledPlan>,
    prev: Frenet,
    prev_steer: f64,
    last_obs: EnvObservation,
    done: bool,
    seed: u64,
}

pub struct DrivingEnv {
    sim: Simulator,
    model: Arc<PlannerModel>,
    cfg: EnvConfig,
    sdc: AgentId,
    sdc_index: usize,
    route: Track,
    path: Polyline,
    assignment: PolicyAssignment,
    guide: GuideSpec,
    episode: Option<Episode>,
}

impl DrivingEnv {
    pub fn new(scenario: Arc<Scenario>, sim_config: SimConfig, model: Arc<PlannerModel>, cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let sim_config = SimConfig {
            history_len: sim_config.history_len.max(model.config.scene.history_steps),
            ..sim_config
        };
        let sim = Simulator::new(scenario, sim_config)?;
        let probe = sim.init_world();
        let sdc = match cfg.sdc {
            Some(id) => id,
            None => probe
                .agents
                .iter()
                .find(|a| a.status == AgentStatus::Active && a.route.as_ref().is_some_and(|r| r.path().is_some()))
                .map(|a| a.id)
                .ok_or(EnvError::NoCandidate)?,
        };
        let sdc_index = probe.agent_index(sdc).ok_or(EnvError::UnknownAgent(sdc))?;
        let agent = &probe.agents[sdc_index];
        let route = agent.route.clone().ok_or(EnvError::NoRoute(sdc))?;
        let path = route.path().cloned().ok_or(EnvError::NoRoute(sdc))?;
        if agent.status != AgentStatus::Active {
            return Err(EnvError::InactiveAgent(sdc));
        }
        let background = if cfg.background.uses_planner() {
            PolicyKind::TrajIdm
        } else {
            PolicyKind::Expert
        };
        let assignment = PolicyAssignment::uniform(background).with(sdc, PolicyKind::External);
        let others = probe.agents.iter().map(|a| a.id).filter(|&id| id != sdc).collect();
        let guide = cfg.background.guide(sdc, others);
        Ok(DrivingEnv {
            sim,
            model,
            cfg,
            sdc,
            sdc_index,
            route,
            path,
            assignment,
            guide,
            episode: None,
        })
    }

    pub fn sdc(&self) -> AgentId {
        self.sdc
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn assignment(&self) -> &PolicyAssignment {
        &self.assignment
    }

    /// The SDC's logged route, which rewards are measured against.
    pub fn route(&self) -> &Track {
        &self.route
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.episode.as_ref().map(|e| &e.world)
    }

    pub fn observation_dim(&self) -> usize {
        self.model.config.hidden + ROUTE_DIM
    }

    /// `(low, high)` of `[accel, steer]`.
    pub fn action_bounds(&self) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
        let b = &self.sim.config().policy.bicycle;
        ([-b.max_accel, -b.max_steer], [b.max_accel, b.max_steer])
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn reset(&mut self, seed: u64) -> Result<EnvObservation, EnvError> {
        let world = self.sim.init_world();
        let state = world.agents[self.sdc_index].state;
        let mut ep = Episode {
            world,
            steps: 0,
            generations: 0,
            plan: None,
            prev: self.path.project(state.position),
            prev_steer: 0.0,
            last_obs: EnvObservation {
                scene_embedding: Vec::new(),
                route: Vec::new(),
            },
            done: false,
            seed,
        };
        self.replan(&mut ep)?;
        ep.last_obs = self.observe(&ep)?;
        let obs = ep.last_obs.clone();
        self.episode = Some(ep);
        Ok(obs)
    }

    pub fn step(&mut self, action: AgentAction) -> Result<StepResult, EnvError> {
        let mut ep = self.episode.take().ok_or(EnvError::NotReset)?;
        let out = self.step_episode(&mut ep, action);
        self.episode = Some(ep);
        out
    }

    fn step_episode(&self, ep: &mut Episode, action: AgentAction) -> Result<StepResult, EnvError> {
        if ep.done {
            return Err(EnvError::EpisodeOver);
        }
        if !action.is_finite() {
            return Err(EnvError::BadAction(vec![action.accel, action.steer]));
        }
        let first_event = ep.world.events.len();
        ep.world.set_action(self.sdc_index, action)?;
        self.sim.step(&mut ep.world, &self.assignment)?;
        ep.steps += 1;

        let mut collision = false;
        let mut off_road = false;
        let mut arrived = false;
        for e in &ep.world.events[first_event..] {
            if e.agents.contains(&self.sdc) {
                match e.kind {
                    EventKind::Collision => collision = true,
                    EventKind::OffRoad => off_road = true,
                    EventKind::Arrival => arrived = true,
                    EventKind::Departure => {}
                }
            }
        }
        let agent = &ep.world.agents[self.sdc_index];
        let state = agent.state;
        let applied = agent.last_action;
        let now = self.path.project(state.position);
        let steer_term = match self.cfg.smooth {
            SmoothTerm::Steering => applied.steer,
            SmoothTerm::SteeringDelta => applied.steer - ep.prev_steer,
        };
        let distance_to_goal = state.position.distance(self.route.endpoint());
        let terminated = collision || off_road || arrived;
        let elapsed = ep.world.time - ep.world.start_time;
        let truncated = !terminated && elapsed >= self.cfg.horizon - 1e-9;
        let reward = RewardBreakdown {
            r_forward: forward_reward(now.s - ep.prev.s, ep.prev.d, now.d),
            p_collision: if collision { COLLISION_PENALTY } else { 0.0 },
            p_road: if off_road { OFFROAD_PENALTY } else { 0.0 },
            p_smooth: smooth_penalty(state.speed, steer_term),
            r_dest: if terminated || truncated {
                destination_reward(distance_to_goal, self.cfg.dest_radius, terminated)
            } else {
                0.0
            },
        };
        ep.prev = now;
        ep.prev_steer = applied.steer;
        ep.done = terminated || truncated;

        if !ep.done {
            let every = (self.cfg.replan_interval / ep.world.tick).round().max(1.0) as u64;
            if ep.steps % every == 0 {
                self.replan(ep)?;
            }
        }
        if ep.world.agents[self.sdc_index].is_present() {
            ep.last_obs = self.observe(ep)?;
        }
        Ok(StepResult {
            observation: ep.last_obs.clone(),
            reward,
            terminated,
            truncated,
            info: StepInfo {
                time: ep.world.time,
                action: applied,
                state,
                s: now.s,
                d: now.d,
                collision,
                off_road,
                arrived,
                distance_to_goal,
            },
        })
    }

    fn replan(&self, ep: &mut Episode) -> Result<(), EnvError> {
        if !self.cfg.background.uses_planner() {
            return Ok(());
        }
        let schedule = NoiseSchedule {
            levels: self.cfg.levels,
            ..self.model.schedule
        };
        let replanner = Replanner::new(&self.sim, &self.model)?;
        let seed = replan_seed(ep.seed, ep.generations);
        if let Some(p) = replanner.replan(&mut ep.world, &self.assignment, &self.guide, &schedule, seed)? {
            ep.plan = Some(p);
            ep.generations += 1;
        }
        Ok(())
    }

    fn observe(&self, ep: &Episode) -> Result<EnvObservation, EnvError> {
        let replanner = Replanner::new(&self.sim, &self.model)?;
        let scene = replanner.scene(&ep.world)?.ok_or(EnvError::InactiveAgent(self.sdc))?;
        let row = scene
            .agent_ids
            .iter()
            .position(|&id| id == self.sdc)
            .ok_or(EnvError::InactiveAgent(self.sdc))?;
        let emb = self.model.encode_scene(&scene)?;
        let scene_embedding = emb.agent_step(row, scene.history_steps - 1).to_vec();

        let pose = ep.world.agents[self.sdc_index].state;
        let planned = ep
            .plan
            .as_ref()
            .and_then(|p| p.row_of(self.sdc).map(|r| p.track(r)));
        let track = planned.as_ref().unwrap_or(&self.route);
        let mut route = Vec::with_capacity(ROUTE_DIM);
        for k in 1..=ROUTE_POINTS {
            let p = state_clamped(track, ep.world.time + k as f64 * ROUTE_SPACING).position;
            let q = to_local(&pose, p);
            route.extend([q.x, q.y]);
        }
        Ok(EnvObservation { scene_embedding, route })
    }
}
