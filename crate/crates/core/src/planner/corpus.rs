//! Training data: scene graphs at a cut time paired with the future motion
//! the simulator produced after it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, Vec2};
use crate::policy::{PolicyAssignment, PolicyKind};
use crate::scenario::{straight_road, Agent, AgentAttributes, AgentId, AgentState, RoutePoint, Scenario, Schedule};
use crate::sim::{SimConfig, Simulator};

use super::autodiff::Mat;
use super::normalize::PlanNormalizer;
use super::scene::{build_scene_graph, map_chunks, world_histories, SceneConfig, SceneGraph};
use super::PlannerError;

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSample {
    pub graph: SceneGraph,
    /// Raw plan rows `[v0, dh0, v1, dh1, ...]`, headings relative to the
    /// agent's heading at the cut.
    pub target: Vec<Vec<f64>>,
    /// Rows whose whole future was observed.
    pub mask: Vec<bool>,
    /// Observed future positions per agent (empty where masked out).
    pub future: Vec<Vec<Vec2>>,
}

impl PlanSample {
    pub fn normalized_target(&self, norm: &PlanNormalizer) -> Mat {
        let cols = self.target.first().map_or(0, Vec::len);
        let mut m = Mat::zeros(self.target.len(), cols);
        for (i, r) in self.target.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&norm.normalize_row(r));
        }
        m
    }
}

/// Plan rows that reproduce `positions` exactly under plan integration.
pub fn plan_from_positions(start: &AgentState, positions: &[Vec2], tick: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * positions.len());
    let mut prev = start.position;
    let mut heading = start.heading;
    for p in positions {
        let d = *p - prev;
        let dist = d.norm();
        if dist > 1e-9 {
            heading = d.angle();
        }
        out.push(dist / tick);
        out.push(angle_diff(heading, start.heading));
        prev = *p;
    }
    out
}

/// Runs `scenario` to the cut (the last history step), builds the scene
/// graph there, then keeps running to record each agent's future.
pub fn sample_from_rollout(
    scenario: Scenario,
    assignment: &PolicyAssignment,
    scene_cfg: &SceneConfig,
    future_steps: usize,
) -> Result<PlanSample, PlannerError> {
    let chunks = map_chunks(&scenario.map, scene_cfg.chunk_length);
    let config = SimConfig {
        history_len: scene_cfg.history_steps.max(1),
        ..SimConfig::default()
    };
    let sim = Simulator::new(Arc::new(scenario), config)?;
    let mut world = sim.init_world();
    for _ in 1..scene_cfg.history_steps {
        sim.step(&mut world, assignment)?;
    }
    let hist = world_histories(&world, scene_cfg.history_steps);
    let graph = build_scene_graph(&chunks, &hist, scene_cfg)?;
    let rows: Vec<usize> = graph
        .agent_ids
        .iter()
        .map(|id| world.agent_index(*id).expect("graph agents come from the world"))
        .collect();
    let mut future: Vec<Vec<Vec2>> = vec![Vec::with_capacity(future_steps); rows.len()];
    let mut alive = vec![true; rows.len()];
    for _ in 0..future_steps {
        sim.step(&mut world, assignment)?;
        for (k, &i) in rows.iter().enumerate() {
            let a = &world.agents[i];
            if a.is_present() {
                future[k].push(a.state.position);
            } else {
                alive[k] = false;
            }
        }
    }
    let tick = world.tick;
    let mut target = Vec::with_capacity(rows.len());
    for k in 0..rows.len() {
        if alive[k] {
            target.push(plan_from_positions(&graph.agent_states[k], &future[k], tick));
        } else {
            target.push(vec![0.0; 2 * future_steps]);
            future[k].clear();
        }
    }
    Ok(PlanSample {
        graph,
        target,
        mask: alive,
        future,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub scenes: usize,
    pub seed: u64,
    pub lanes: usize,
    pub road_length: f64,
    pub lane_width: f64,
    pub speed_limit: f64,
    pub min_agents: usize,
    pub max_agents: usize,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Agents start within this distance of the road start.
    pub spawn_length: f64,
    pub min_spacing: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            scenes: 500,
            seed: 0,
            lanes: 2,
            road_length: 400.0,
            lane_width: 3.5,
            speed_limit: 20.0,
            min_agents: 2,
            max_agents: 6,
            min_speed: 4.0,
            max_speed: 16.0,
            spawn_length: 150.0,
            min_spacing: 12.0,
        }
    }
}

/// A randomly placed and oriented straight road with lane-following
/// traffic.
pub fn straight_road_scenario(cfg: &CorpusConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Vec2::new(rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0));
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let map = straight_road(cfg.lanes, cfg.road_length, cfg.lane_width, origin, heading, cfg.speed_limit);
    let n = rng.random_range(cfg.min_agents..=cfg.max_agents);
    let mut placed: Vec<(usize, f64)> = Vec::new();
    let mut agents = Vec::new();
    let mut attempts = 0;
    while agents.len() < n && attempts < 1000 {
        attempts += 1;
        let lane = rng.random_range(0..cfg.lanes);
        let s = rng.random_range(5.0..cfg.spawn_length);
        if placed.iter().any(|&(l, o)| l == lane && (o - s).abs() < cfg.min_spacing) {
            continue;
        }
        placed.push((lane, s));
        let v = rng.random_range(cfg.min_speed..cfg.max_speed);
        let local = |x: f64| origin + Vec2::new(x, lane as f64 * cfg.lane_width).rotate(heading);
        let end = cfg.road_length - 1.0;
        let duration = (end - s) / v;
        let samples = duration.ceil() as usize;
        let route = (0..=samples)
            .map(|k| {
                let t = (k as f64).min(duration);
                RoutePoint {
                    t,
                    state: AgentState::new(local(s + v * t), v, heading),
                }
            })
            .collect();
        agents.push(Agent {
            id: AgentId(agents.len() as u64 + 1),
            attributes: AgentAttributes::vehicle(rng.random_range(4.0..5.0), rng.random_range(1.8..2.1)),
            schedules: vec![Schedule {
                departure_time: 0.0,
                reference_route: route,
                waypoints: Vec::new(),
            }],
        });
    }
    Scenario::new(map, agents)
}

/// `cfg.scenes` straight-road samples under lane-following IDM traffic.
pub fn straight_road_corpus(cfg: &CorpusConfig, scene_cfg: &SceneConfig, future_steps: usize) -> Result<Vec<PlanSample>, PlannerError> {
    let assign = PolicyAssignment::uniform(PolicyKind::LaneIdm);
    (0..cfg.scenes)
        .map(|i| {
            let scenario = straight_road_scenario(cfg, cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            sample_from_rollout(scenario, &assign, scene_cfg, future_steps)
        })
        .collect()
}

/// Normalization statistics over the observed rows of a corpus.
pub fn fit_normalizer(samples: &[PlanSample], sigma_data: f64) -> PlanNormalizer {
    PlanNormalizer::fit(
        samples
            .iter()
            .flat_map(|s| s.target.iter().zip(&s.mask).filter(|(_, m)| **m).map(|(r, _)| r.as_slice())),
        sigma_data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::plan::integrate_plan;

    #[test]
    fn plan_rows_reproduce_positions() {
        let start = AgentState::new(Vec2::new(1.0, 2.0), 5.0, 0.3);
        let pts: Vec<Vec2> = (1..=20).map(|k| Vec2::new(1.0 + k as f64 * 0.5, 2.0 + (k as f64 * 0.2).sin())).collect();
        let row = plan_from_positions(&start, &pts, 0.1);
        let v: Vec<f64> = row.iter().step_by(2).copied().collect();
        let h: Vec<f64> = row.iter().skip(1).step_by(2).map(|d| d + start.heading).collect();
        let traj = integrate_plan(&v, &h, start, 0.1);
        for (a, b) in traj[1..].iter().zip(&pts) {
            assert!(a.position.distance(*b) < 1e-9);
        }
    }

    #[test]
    fn corpus_samples_are_well_formed() {
        let cfg = CorpusConfig {
            scenes: 3,
            ..CorpusConfig::default()
        };
        let data = straight_road_corpus(&cfg, &SceneConfig::default(), 80).unwrap();
        assert_eq!(data.len(), 3);
        for s in &data {
            let n = s.graph.agent_count();
            assert!((2..=6).contains(&n));
            assert_eq!(s.target.len(), n);
            assert!(s.mask.iter().all(|m| *m));
            assert!(s.target.iter().all(|r| r.len() == 160 && r.iter().all(|v| v.is_finite())));
            assert!(s.future.iter().all(|f| f.len() == 80));
        }
        let again = straight_road_corpus(&cfg, &SceneConfig::default(), 80).unwrap();
        assert_eq!(data, again);
    }
}
