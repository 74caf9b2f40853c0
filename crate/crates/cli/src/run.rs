//! Rollouts described by a run configuration.

use std::path::Path;
use std::sync::Arc;

use lcsim_core::config::RunConfig;
use lcsim_core::metrics::RolloutRecord;
use lcsim_core::planner::{load_checkpoint, rollout_replan, NoiseSchedule, PlannerModel, ReplanConfig, ReplanEvent};
use lcsim_core::policy::PolicyKind;
use lcsim_core::render::{render_svg, RenderOptions};
use lcsim_core::scenario::Scenario;
use lcsim_core::sim::{SimConfig, Simulator, WorldState};

use crate::error::{CliError, Result};
use crate::io::read_scenario;

/// A validated run: configuration, simulator and (for planner-driven
/// agents) the loaded model.
pub struct Prepared {
    pub config: RunConfig,
    pub scenario: Arc<Scenario>,
    pub sim: Simulator,
    pub model: Option<PlannerModel>,
}

fn uses_planner(cfg: &RunConfig) -> bool {
    cfg.policy.default == PolicyKind::TrajIdm || cfg.policy.overrides.values().any(|k| *k == PolicyKind::TrajIdm)
}

pub fn prepare(config_path: &Path) -> Result<Prepared> {
    let config = RunConfig::load(config_path)?;
    let mut scenario = read_scenario(&config.scenario)?;
    if let Some(tick) = config.tick {
        scenario.tick = tick;
        scenario.resample_routes();
    }
    for id in config.policy.overrides.keys() {
        if !scenario.agents.iter().any(|a| a.id == *id) {
            return Err(CliError::invalid(config_path, format!("policy override for unknown agent {}", id.0)));
        }
    }
    // plan-following agents without a checkpoint track their routes
    let model = match &config.checkpoint {
        Some(path) if uses_planner(&config) => Some(load_checkpoint(path).map_err(|e| CliError::invalid(path, e))?),
        _ => None,
    };
    let mut sim_config: SimConfig = config.sim;
    if let Some(m) = &model {
        sim_config.history_len = sim_config.history_len.max(m.config.scene.history_steps);
    }
    let scenario = Arc::new(scenario);
    let sim = Simulator::new(scenario.clone(), sim_config).map_err(|e| CliError::invalid(&config.scenario, e))?;
    Ok(Prepared {
        config,
        scenario,
        sim,
        model,
    })
}

/// One seed's rollout and, when rendering, one SVG per tick.
pub struct SeedRun {
    pub record: RolloutRecord,
    pub frames: Vec<String>,
}

impl Prepared {
    pub fn run_seed(&self, seed: u64) -> Result<SeedRun> {
        let sim = &self.sim;
        let cfg = &self.config;
        let render = cfg.render;
        let opts = RenderOptions::default();
        let mut world = sim.init_world();
        let mut record = RolloutRecord::start(sim, &world, seed);
        let mut frames = Vec::new();
        let mut frame = |w: &WorldState| {
            if render {
                frames.push(render_svg(&self.scenario.map, w, &opts));
            }
        };
        frame(&world);
        match &self.model {
            Some(model) => {
                let replan = ReplanConfig {
                    interval: cfg.planner.replan_interval,
                    guide: cfg.guide.clone(),
                    schedule: NoiseSchedule {
                        levels: cfg.planner.levels,
                        ..model.schedule
                    },
                    seed,
                };
                rollout_replan(sim, &mut world, &cfg.policy, model, &replan, cfg.duration, |e| {
                    if let ReplanEvent::Step(w) = e {
                        record.record(sim, w);
                        frame(w);
                    }
                })
                .map_err(|e| CliError::Runtime(format!("seed {seed}: {e}")))?;
            }
            None => {
                while world.time + world.tick <= cfg.duration + 1e-9 {
                    sim.step(&mut world, &cfg.policy)
                        .map_err(|e| CliError::Runtime(format!("seed {seed}: {e}")))?;
                    record.record(sim, &world);
                    frame(&world);
                }
            }
        }
        Ok(SeedRun { record, frames })
    }
}
