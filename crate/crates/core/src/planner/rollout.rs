//! Plan generation for a scene and closed-loop rollouts that regenerate
//! plans at a fixed interval.

use crate::geometry::Vec2;
use crate::policy::{PolicyAssignment, PolicyKind};
use crate::scenario::{AgentId, AgentState};
use crate::sim::{Simulator, Track, WorldState};

use super::guides::{GuideAgent, GuideScene, GuideSpec, PlanGuide};
use super::model::PlannerModel;
use super::plan::MotionPlan;
use super::sampler::{sample, GuideObjective};
use super::scene::{build_scene_graph, map_chunks, world_histories, MapChunk, SceneGraph};
use super::schedule::NoiseSchedule;
use super::PlannerError;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPlan {
    pub plan: MotionPlan,
    pub max_guide_shift: f64,
}

/// Samples one plan for every agent in `scene`, optionally guided.
pub fn generate_plan(
    model: &PlannerModel,
    scene: &SceneGraph,
    boundaries: &[Vec<Vec2>],
    guide: &GuideSpec,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<GeneratedPlan, PlannerError> {
    let mut den = model.denoiser(scene)?;
    let rows = scene.agent_count();
    let cols = model.config.plan_width();
    let gscene = GuideScene {
        tick: model.config.tick,
        agents: (0..rows)
            .map(|a| GuideAgent {
                id: scene.agent_ids[a],
                start: scene.agent_states[a],
                length: scene.agent_attrs[a].length,
                width: scene.agent_attrs[a].width,
            })
            .collect(),
        boundaries: boundaries.to_vec(),
        norm: model.normalizer,
    };
    let pg = PlanGuide::new(&gscene, guide);
    let g: Option<(&dyn GuideObjective, _)> = if guide.is_active() {
        guide.validate()?;
        Some((&pg, guide.params))
    } else {
        None
    };
    let out = sample(&mut den, schedule, rows, cols, g, seed)?;
    Ok(GeneratedPlan {
        plan: MotionPlan::from_normalized(
            &out.plan,
            scene.agent_ids.clone(),
            &scene.agent_states,
            &model.normalizer,
            0.0,
            model.config.tick,
        ),
        max_guide_shift: out.max_guide_shift,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplanConfig {
    /// Seconds between regenerations.
    pub interval: f64,
    pub guide: GuideSpec,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

/// Derives the seed of the `k`-th regeneration.
pub fn replan_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Regenerates plans from a live world: caches the map chunks and
/// drivable boundaries of the simulator's map.
pub struct Replanner<'m> {
    model: &'m PlannerModel,
    chunks: Vec<MapChunk>,
    boundaries: Vec<Vec<Vec2>>,
}

impl<'m> Replanner<'m> {
    pub fn new(sim: &Simulator, model: &'m PlannerModel) -> Result<Self, PlannerError> {
        let th = model.config.scene.history_steps;
        if sim.config().history_len < th {
            return Err(PlannerError::Config(format!(
                "simulator keeps {} history steps, planner needs {th}",
                sim.config().history_len
            )));
        }
        Ok(Replanner {
            model,
            chunks: map_chunks(&sim.scenario().map, model.config.scene.chunk_length),
            boundaries: sim.scenario().map.boundaries().map(|b| b.to_vec()).collect(),
        })
    }

    /// Scene graph of every present agent, histories ending now.
    pub fn scene(&self, world: &WorldState) -> Result<Option<SceneGraph>, PlannerError> {
        let hist = world_histories(world, self.model.config.scene.history_steps);
        if hist.is_empty() {
            return Ok(None);
        }
        build_scene_graph(&self.chunks, &hist, &self.model.config.scene).map(Some)
    }

    /// Samples a plan for all present agents and installs it as the guide
    /// track of those assigned [`PolicyKind::TrajIdm`]. The plan starts at
    /// the world's current time.
    pub fn replan(
        &self,
        world: &mut WorldState,
        assignment: &PolicyAssignment,
        guide: &GuideSpec,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<Option<InstalledPlan>, PlannerError> {
        let Some(scene) = self.scene(world)? else {
            return Ok(None);
        };
        let out = generate_plan(self.model, &scene, &self.boundaries, guide, schedule, seed)?;
        let mut plan = out.plan;
        plan.start_time = world.time;
        let installed = InstalledPlan {
            plan,
            starts: scene.agent_states.clone(),
        };
        for (row, id) in installed.plan.agents.iter().enumerate() {
            if assignment.for_agent(*id) == PolicyKind::TrajIdm {
                let idx = world.agent_index(*id).expect("planned agents are in the world");
                world.set_plan(idx, Some(installed.track(row)));
            }
        }
        Ok(Some(installed))
    }
}

/// A generated plan with the states it was integrated from.
#[derive(Debug, Clone, PartialEq)]
pub struct InstalledPlan {
    pub plan: MotionPlan,
    pub starts: Vec<AgentState>,
}

impl InstalledPlan {
    pub fn row_of(&self, id: AgentId) -> Option<usize> {
        self.plan.agents.iter().position(|a| *a == id)
    }

    pub fn track(&self, row: usize) -> Track {
        self.plan.track(row, self.starts[row])
    }
}

/// Progress notifications from [`rollout_replan`].
pub enum ReplanEvent<'a> {
    /// A plan was generated and installed; the world has not stepped yet.
    Plan(&'a WorldState, &'a MotionPlan),
    /// The world advanced one tick.
    Step(&'a WorldState),
}

/// Steps `world` until `until`, regenerating plans every `interval` from
/// the latest history. Agents assigned [`PolicyKind::TrajIdm`] follow the
/// freshest plan. Returns the number of generations.
pub fn rollout_replan(
    sim: &Simulator,
    world: &mut WorldState,
    assignment: &PolicyAssignment,
    model: &PlannerModel,
    cfg: &ReplanConfig,
    until: f64,
    mut on_event: impl FnMut(ReplanEvent<'_>),
) -> Result<usize, PlannerError> {
    let horizon = model.config.future_steps as f64 * model.config.tick;
    if !(cfg.interval > 0.0) || cfg.interval > horizon + 1e-9 {
        return Err(PlannerError::Config(format!(
            "replan interval {} must be in (0, {horizon}]",
            cfg.interval
        )));
    }
    let replanner = Replanner::new(sim, model)?;
    let every = (cfg.interval / world.tick).round().max(1.0) as u64;
    let mut generations = 0;
    let mut steps = 0u64;
    while world.time < until - 1e-9 && !world.is_finished() {
        if steps % every == 0 {
            let seed = replan_seed(cfg.seed, generations);
            if let Some(p) = replanner.replan(world, assignment, &cfg.guide, &cfg.schedule, seed)? {
                on_event(ReplanEvent::Plan(world, &p.plan));
                generations += 1;
            }
        }
        sim.step(world, assignment)?;
        on_event(ReplanEvent::Step(world));
        steps += 1;
    }
    Ok(generations)
}
