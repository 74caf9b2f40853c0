use serde::{Deserialize, Serialize};

use crate::metrics::Rate;
use crate::policy::AgentAction;
use crate::scenario::AgentState;
use crate::sim::{Event, EventKind, Simulator, Track};

use super::{DrivingEnv, EnvError, EnvObservation};

/// What a policy callback may inspect besides the observation.
pub struct EnvView<'a> {
    pub time: f64,
    pub state: AgentState,
    pub route: &'a Track,
    pub sim: &'a Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Index of the environment (test scenario) used.
    pub env: usize,
    pub seed: u64,
    pub steps: usize,
    pub total_reward: f64,
    pub final_s: f64,
    pub route_length: f64,
    /// Distance to the route end when the episode stopped.
    pub final_distance: f64,
    /// World events that involve the controlled vehicle.
    pub events: Vec<Event>,
}

impl EpisodeRecord {
    fn has(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }

    pub fn collided(&self) -> bool {
        self.has(EventKind::Collision)
    }

    pub fn off_road(&self) -> bool {
        self.has(EventKind::OffRoad)
    }

    pub fn progress(&self) -> f64 {
        (self.final_s / self.route_length).clamp(0.0, 1.0)
    }

    /// Reached the destination without any collision or off-road event.
    pub fn success(&self, dest_radius: f64) -> bool {
        (self.has(EventKind::Arrival) || self.final_distance <= dest_radius) && !self.collided() && !self.off_road()
    }
}

/// Percentages (progress included) with standard errors across episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub collision_rate: Rate,
    pub offroad_rate: Rate,
    pub route_progress: Rate,
    pub success_rate: Rate,
    pub mean_reward: Rate,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn from_records(episodes: Vec<EpisodeRecord>, dest_radius: f64) -> Self {
        let pct = |f: &dyn Fn(&EpisodeRecord) -> bool| {
            Rate::of(&episodes.iter().map(|e| if f(e) { 100.0 } else { 0.0 }).collect::<Vec<_>>())
        };
        EvalReport {
            collision_rate: pct(&|e| e.collided()),
            offroad_rate: pct(&|e| e.off_road()),
            success_rate: pct(&|e| e.success(dest_radius)),
            route_progress: Rate::of(&episodes.iter().map(|e| 100.0 * e.progress()).collect::<Vec<_>>()),
            mean_reward: Rate::of(&episodes.iter().map(|e| e.total_reward).collect::<Vec<_>>()),
            episodes,
        }
    }
}

/// Runs `episodes` episodes, cycling through `envs`; episode `i` is reset
/// with `seed + i`. Test sets normally use log-replay backgrounds.
pub fn evaluate(
    envs: &mut [DrivingEnv],
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&EnvObservation, &EnvView) -> AgentAction,
) -> Result<EvalReport, EnvError> {
    if envs.is_empty() {
        return Err(EnvError::Config("evaluation needs at least one environment".into()));
    }
    let dest_radius = envs[0].cfg.dest_radius;
    let mut records = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let k = i % envs.len();
        let env = &mut envs[k];
        let ep_seed = seed.wrapping_add(i as u64);
        let mut obs = env.reset(ep_seed)?;
        let mut total = 0.0;
        let mut steps = 0;
        let mut last = None;
        while !env.is_done() {
            let world = env.world().expect("episode is running");
            let view = EnvView {
                time: world.time,
                state: world.agents[env.sdc_index].state,
                route: &env.route,
                sim: &env.sim,
            };
            let action = policy(&obs, &view);
            let out = env.step(action)?;
            total += out.reward.total();
            steps += 1;
            obs = out.observation;
            last = Some(out.info);
        }
        let world = env.world().expect("episode ran");
        let info = last.expect("episodes take at least one step");
        records.push(EpisodeRecord {
            env: k,
            seed: ep_seed,
            steps,
            total_reward: total,
            final_s: info.s,
            route_length: env.path.length(),
            final_distance: info.distance_to_goal,
            events: world
                .events
                .iter()
                .filter(|e| e.agents.contains(&env.sdc) && e.kind != EventKind::Departure)
                .cloned()
                .collect(),
        });
    }
    Ok(EvalReport::from_records(records, dest_radius))
}
