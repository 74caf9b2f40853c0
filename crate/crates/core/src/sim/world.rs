use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::events::{Event, EventKind};
use super::map_index::MapIndex;
use super::spatial::{SpatialHash, CELL_SIZE};
use super::track::Track;
use super::{detect_collisions, ARRIVAL_RADIUS};
use crate::policy::{
    bicycle_step, lane_idm, pursuit_action, traj_idm, AgentAction, LaneFollow, PolicyAssignment, PolicyKind,
    PolicyParams,
};
use crate::scenario::{AgentAttributes, AgentId, AgentState, LaneId, LightState, Scenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("policy assignment references unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} is not active")]
    InactiveAgent(AgentId),
    #[error("agent {agent}: action must be finite, got accel={accel} steer={steer}")]
    InvalidAction { agent: AgentId, accel: f64, steer: f64 },
}

/// What happens to agents involved in a collision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    /// Log and keep simulating (metrics runs).
    #[default]
    Continue,
    /// Log and stop both agents in place.
    Freeze,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Neighbor radius for observations, meters (inclusive).
    pub neighbor_radius: f64,
    pub arrival_radius: f64,
    pub collision_mode: CollisionMode,
    /// Number of past states kept per agent, current state included.
    pub history_len: usize,
    pub policy: PolicyParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            neighbor_radius: 50.0,
            arrival_radius: ARRIVAL_RADIUS,
            collision_mode: CollisionMode::Continue,
            history_len: 11,
            policy: PolicyParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.neighbor_radius > 0.0 && self.neighbor_radius.is_finite()) {
            return Err(SimError::Config("neighbor_radius must be positive".into()));
        }
        if !(self.arrival_radius > 0.0 && self.arrival_radius.is_finite()) {
            return Err(SimError::Config("arrival_radius must be positive".into()));
        }
        if self.history_len == 0 {
            return Err(SimError::Config("history_len must be at least 1".into()));
        }
        self.policy.validate().map_err(SimError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    /// Waiting for the departure of its current schedule.
    Pending,
    Active,
    /// Stopped after a collision; still an obstacle.
    Frozen,
    /// Finished all schedules.
    Arrived,
}

/// Per-policy internal state carried between steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Motion {
    #[default]
    None,
    Lane(LaneFollow),
    /// Arc length along the followed path.
    Path(f64),
}

#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub id: AgentId,
    pub attributes: AgentAttributes,
    pub status: AgentStatus,
    pub state: AgentState,
    /// Index of the current schedule.
    pub schedule: usize,
    pub route: Option<Track>,
    pub plan: Option<Track>,
    pub motion: Motion,
    /// Action applied in the last step (effective, after clamping).
    pub last_action: AgentAction,
    /// Set when a lane-following policy could not resolve a lane.
    pub no_lane: bool,
    pub off_road: bool,
    history: VecDeque<(u64, AgentState)>,
}

impl AgentRuntime {
    /// Present in the world (moving or frozen).
    pub fn is_present(&self) -> bool {
        matches!(self.status, AgentStatus::Active | AgentStatus::Frozen)
    }

    /// States at the last `n` steps ending at `step`, oldest first; `None`
    /// where the agent was not present.
    pub fn history(&self, step: u64, n: usize) -> Vec<Option<AgentState>> {
        let mut out = vec![None; n];
        for &(k, s) in &self.history {
            if k <= step && step - k < n as u64 {
                out[n - 1 - (step - k) as usize] = Some(s);
            }
        }
        out
    }

    /// The track the agent is steering along: its plan, else its route.
    pub fn guide_track(&self) -> Option<&Track> {
        self.plan.as_ref().or(self.route.as_ref())
    }
}

/// Mutable state of one simulation.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub step_index: u64,
    pub start_time: f64,
    pub tick: f64,
    pub agents: Vec<AgentRuntime>,
    /// Signal state of every controlled lane at `time`.
    pub signals: Vec<(LaneId, LightState)>,
    pub events: Vec<Event>,
    collisions: BTreeSet<(usize, usize)>,
    actions: HashMap<usize, AgentAction>,
}

impl WorldState {
    pub fn agent_index(&self, id: AgentId) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn active_count(&self) -> usize {
        self.agents.iter().filter(|a| a.status == AgentStatus::Active).count()
    }

    /// True once no agent is pending or active.
    pub fn is_finished(&self) -> bool {
        self.agents
            .iter()
            .all(|a| matches!(a.status, AgentStatus::Arrived | AgentStatus::Frozen))
    }

    /// Queues an action for an externally controlled agent for the next step.
    pub fn set_action(&mut self, idx: usize, action: AgentAction) -> Result<(), SimError> {
        let agent = &self.agents[idx];
        if !action.is_finite() {
            return Err(SimError::InvalidAction {
                agent: agent.id,
                accel: action.accel,
                steer: action.steer,
            });
        }
        if agent.status != AgentStatus::Active {
            return Err(SimError::InactiveAgent(agent.id));
        }
        self.actions.insert(idx, action);
        Ok(())
    }

    /// Replaces the motion plan of an agent. The path position is re-derived
    /// on the next step.
    pub fn set_plan(&mut self, idx: usize, plan: Option<Track>) {
        let a = &mut self.agents[idx];
        a.plan = plan;
        if matches!(a.motion, Motion::Path(_)) {
            a.motion = Motion::None;
        }
    }

    /// Pairs colliding at the current time.
    pub fn colliding_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.collisions.iter().copied()
    }
}

/// Read-only view of one agent for its policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub agent: usize,
    pub id: AgentId,
    pub time: f64,
    pub state: AgentState,
    /// Present agents within the neighbor radius, ascending index.
    pub neighbors: Vec<usize>,
    pub lane: Option<LaneId>,
}

/// Lane position of a present agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LanePos {
    pub lane: usize,
    pub s: f64,
    /// Speed projected on the lane direction, non-negative.
    pub speed: f64,
}

/// Everything policies may read during the update stage.
pub(crate) struct StepContext<'a> {
    pub world: &'a WorldState,
    pub sim: &'a Simulator,
    pub next_time: f64,
    pub lanes: Vec<Option<LanePos>>,
    /// Agents per lane, sorted by `s`.
    pub occupancy: HashMap<usize, Vec<(f64, usize)>>,
    pub observations: Vec<Observation>,
}

impl StepContext<'_> {
    pub fn params(&self) -> &PolicyParams {
        &self.sim.config.policy
    }

    pub fn index(&self) -> &MapIndex {
        &self.sim.index
    }

    pub fn tick(&self) -> f64 {
        self.world.tick
    }

    pub fn signal(&self, lane: usize) -> Option<LightState> {
        self.sim.index.signal(&self.sim.scenario.map, lane, self.world.time)
    }

    /// Closed-loop arrival test against the agent's route (or plan) end.
    pub fn reached_destination(&self, agent: &AgentRuntime, state: &AgentState) -> bool {
        let Some(track) = agent.route.as_ref().or(agent.plan.as_ref()) else {
            return false;
        };
        reached_end(track, state, self.next_time, self.sim.config.arrival_radius)
    }
}

/// Within `radius` of the track end, and past the last `radius` meters of
/// its path. Very short tracks also need their end time reached.
pub(crate) fn reached_end(track: &Track, state: &AgentState, time: f64, radius: f64) -> bool {
    if state.position.distance(track.endpoint()) > radius {
        return false;
    }
    match track.path() {
        None => time + 1e-9 >= track.end_time(),
        Some(path) => {
            let len = path.length();
            path.project(state.position).s >= len - radius && (len > radius || time + 1e-9 >= track.end_time())
        }
    }
}

/// Result of evaluating one agent's policy.
#[derive(Debug, Clone)]
pub(crate) struct Update {
    pub state: AgentState,
    pub motion: Motion,
    pub action: AgentAction,
    pub arrived: bool,
    pub no_lane: bool,
}

impl Update {
    pub fn moved(state: AgentState, motion: Motion, action: AgentAction) -> Self {
        Update {
            state,
            motion,
            action,
            arrived: false,
            no_lane: false,
        }
    }
}

/// Runs worlds over one scenario.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub(crate) scenario: Arc<Scenario>,
    pub(crate) index: MapIndex,
    pub(crate) config: SimConfig,
}

impl Simulator {
    pub fn new(scenario: Arc<Scenario>, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        if !(scenario.tick > 0.0 && scenario.tick.is_finite()) {
            return Err(SimError::Config("scenario tick must be positive".into()));
        }
        let index = MapIndex::new(&scenario.map);
        Ok(Simulator {
            scenario,
            index,
            config,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scenario_arc(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn index(&self) -> &MapIndex {
        &self.index
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// World at the scenario start with due departures activated.
    pub fn init_world(&self) -> WorldState {
        let sc = &self.scenario;
        let agents = sc
            .agents
            .iter()
            .map(|a| AgentRuntime {
                id: a.id,
                attributes: a.attributes,
                status: if a.schedules.is_empty() {
                    AgentStatus::Arrived
                } else {
                    AgentStatus::Pending
                },
                state: a
                    .schedules
                    .first()
                    .and_then(|s| s.reference_route.first())
                    .map(|p| p.state)
                    .unwrap_or_default(),
                schedule: 0,
                route: a
                    .schedules
                    .first()
                    .and_then(|s| Track::from_route(&s.reference_route, sc.tick)),
                plan: None,
                motion: Motion::None,
                last_action: AgentAction::default(),
                no_lane: false,
                off_road: false,
                history: VecDeque::new(),
            })
            .collect();
        let mut world = WorldState {
            time: sc.current_time,
            step_index: 0,
            start_time: sc.current_time,
            tick: sc.tick,
            agents,
            signals: Vec::new(),
            events: Vec::new(),
            collisions: BTreeSet::new(),
            actions: HashMap::new(),
        };
        self.activate(&mut world);
        self.refresh_signals(&mut world);
        self.record_history(&mut world);
        world
    }

    fn check_assignment(&self, world: &WorldState, assignment: &PolicyAssignment) -> Result<(), SimError> {
        for id in assignment.overrides.keys() {
            if world.agent_index(*id).is_none() {
                return Err(SimError::UnknownAgent(*id));
            }
        }
        Ok(())
    }

    /// Prepare stage: lane association, occupancy and observations.
    pub(crate) fn prepare<'a>(&'a self, world: &'a WorldState) -> StepContext<'a> {
        let mut lanes = vec![None; world.agents.len()];
        let mut occupancy: HashMap<usize, Vec<(f64, usize)>> = HashMap::new();
        let mut hash = SpatialHash::new(CELL_SIZE);
        for (i, a) in world.agents.iter().enumerate() {
            if !a.is_present() {
                continue;
            }
            hash.insert(i, a.state.position);
            let pos = match &a.motion {
                Motion::Lane(lf) => Some((lf.lane, lf.s)),
                _ => self.index.locate(&a.state).map(|(l, s, _)| (l, s)),
            };
            if let Some((lane, s)) = pos {
                let heading = self.index.lane(lane).polyline.heading_at(s);
                let speed = (a.state.speed * (a.state.heading - heading).cos()).max(0.0);
                lanes[i] = Some(LanePos { lane, s, speed });
                occupancy.entry(lane).or_default().push((s, i));
            }
        }
        for v in occupancy.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let observations = world
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.status == AgentStatus::Active)
            .map(|(i, a)| Observation {
                agent: i,
                id: a.id,
                time: world.time,
                state: a.state,
                neighbors: hash
                    .query(a.state.position, self.config.neighbor_radius)
                    .into_iter()
                    .filter(|&j| j != i)
                    .collect(),
                lane: lanes[i].map(|p: LanePos| self.index.lane(p.lane).id),
            })
            .collect();
        StepContext {
            world,
            sim: self,
            next_time: world.start_time + (world.step_index + 1) as f64 * world.tick,
            lanes,
            occupancy,
            observations,
        }
    }

    /// Observations the next step would hand to policies.
    pub fn observe(&self, world: &WorldState) -> Vec<Observation> {
        self.prepare(world).observations
    }

    fn decide(&self, ctx: &StepContext, obs: &Observation, kind: PolicyKind) -> Update {
        let world = ctx.world;
        let agent = &world.agents[obs.agent];
        let p = &self.config.policy;
        match kind {
            PolicyKind::Expert => match agent.route.as_ref().and_then(|r| r.state_at(ctx.next_time)) {
                Some(s) => Update::moved(s, Motion::None, AgentAction::default()),
                None => Update {
                    arrived: true,
                    ..Update::moved(agent.state, Motion::None, AgentAction::default())
                },
            },
            PolicyKind::BicycleExpert => {
                let route = agent.route.as_ref();
                let target = route.map_or(0.0, |r| r.speed_at(world.time));
                let wb = p.bicycle.wheelbase(agent.attributes.length);
                let action = pursuit_action(
                    &agent.state,
                    route.and_then(Track::path),
                    target,
                    wb,
                    &p.bicycle,
                    &p.pursuit,
                );
                let (state, applied) = bicycle_step(&agent.state, action, &p.bicycle, wb, world.tick);
                let exhausted = route.is_none_or(|r| ctx.next_time > r.end_time() + 1e-9);
                Update {
                    arrived: exhausted || ctx.reached_destination(agent, &state),
                    ..Update::moved(state, Motion::None, applied)
                }
            }
            PolicyKind::External => {
                let action = world.actions.get(&obs.agent).copied().unwrap_or_default();
                let wb = p.bicycle.wheelbase(agent.attributes.length);
                let (state, applied) = bicycle_step(&agent.state, action, &p.bicycle, wb, world.tick);
                Update {
                    arrived: ctx.reached_destination(agent, &state),
                    ..Update::moved(state, Motion::None, applied)
                }
            }
            PolicyKind::LaneIdm => lane_idm(ctx, obs),
            PolicyKind::TrajIdm => traj_idm(ctx, obs),
        }
    }

    /// Advances the world by one tick.
    pub fn step(&self, world: &mut WorldState, assignment: &PolicyAssignment) -> Result<(), SimError> {
        self.check_assignment(world, assignment)?;
        let updates: Vec<(usize, Update)> = {
            let ctx = self.prepare(world);
            ctx.observations
                .iter()
                .map(|obs| (obs.agent, self.decide(&ctx, obs, assignment.for_agent(obs.id))))
                .collect()
        };

        world.step_index += 1;
        world.time = world.start_time + world.step_index as f64 * world.tick;
        world.actions.clear();
        for (i, u) in updates {
            let a = &mut world.agents[i];
            a.state = u.state;
            a.motion = u.motion;
            a.last_action = u.action;
            a.no_lane = u.no_lane;
            if u.arrived {
                world.events.push(Event::new(world.time, EventKind::Arrival, vec![a.id]));
                self.finish_schedule(a, i);
            }
        }
        self.activate(world);
        self.detect_events(world);
        self.refresh_signals(world);
        self.record_history(world);
        Ok(())
    }

    /// Steps until the world time reaches `until` (inclusive).
    pub fn run_until(
        &self,
        world: &mut WorldState,
        assignment: &PolicyAssignment,
        until: f64,
    ) -> Result<(), SimError> {
        while world.time + world.tick <= until + 1e-9 {
            self.step(world, assignment)?;
        }
        Ok(())
    }

    fn finish_schedule(&self, a: &mut AgentRuntime, i: usize) {
        // world agents mirror the scenario order
        let schedules = &self.scenario.agents[i].schedules;
        a.motion = Motion::None;
        a.plan = None;
        a.off_road = false;
        if a.schedule + 1 < schedules.len() {
            a.schedule += 1;
            a.status = AgentStatus::Pending;
            a.route = Track::from_route(&schedules[a.schedule].reference_route, self.scenario.tick);
        } else {
            a.status = AgentStatus::Arrived;
        }
    }

    fn activate(&self, world: &mut WorldState) {
        let time = world.time;
        for (i, a) in world.agents.iter_mut().enumerate() {
            if a.status != AgentStatus::Pending {
                continue;
            }
            let sched = &self.scenario.agents[i].schedules[a.schedule];
            if sched.departure_time > time + 1e-9 {
                continue;
            }
            let Some(route) = &a.route else { continue };
            a.state = route.state_at(time).unwrap_or(*route.first());
            a.status = AgentStatus::Active;
            a.motion = Motion::None;
            a.last_action = AgentAction::default();
            a.history.clear();
        }
    }

    fn detect_events(&self, world: &mut WorldState) {
        let present: Vec<usize> = (0..world.agents.len()).filter(|&i| world.agents[i].is_present()).collect();
        let states: Vec<AgentState> = present.iter().map(|&i| world.agents[i].state).collect();
        let attrs: Vec<AgentAttributes> = present.iter().map(|&i| world.agents[i].attributes).collect();
        let pairs: BTreeSet<(usize, usize)> = detect_collisions(&states, &attrs)
            .into_iter()
            .map(|(a, b)| (present[a], present[b]))
            .collect();
        for &(i, j) in pairs.difference(&world.collisions) {
            let (a, b) = (world.agents[i].id, world.agents[j].id);
            world.events.push(Event::new(world.time, EventKind::Collision, vec![a, b]));
            if self.config.collision_mode == CollisionMode::Freeze {
                for k in [i, j] {
                    world.agents[k].status = AgentStatus::Frozen;
                    world.agents[k].state.speed = 0.0;
                }
            }
        }
        world.collisions = pairs;

        if self.index.has_boundaries() {
            for &i in &present {
                let off = self.index.off_road(world.agents[i].state.position);
                let a = &mut world.agents[i];
                if off && !a.off_road {
                    world.events.push(Event::new(world.time, EventKind::OffRoad, vec![a.id]));
                }
                a.off_road = off;
            }
        }
    }

    fn refresh_signals(&self, world: &mut WorldState) {
        world.signals.clear();
        for (i, lane) in self.index.lanes().iter().enumerate() {
            if let Some(s) = self.index.signal(&self.scenario.map, i, world.time) {
                world.signals.push((lane.id, s));
            }
        }
    }

    fn record_history(&self, world: &mut WorldState) {
        let k = world.step_index;
        let n = self.config.history_len;
        for a in &mut world.agents {
            if a.is_present() {
                a.history.push_back((k, a.state));
                while a.history.len() > n {
                    a.history.pop_front();
                }
            }
        }
    }
}
