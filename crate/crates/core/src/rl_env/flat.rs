use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::planner::{load_checkpoint, ModelConfig, NoiseSchedule, PlanNormalizer, PlannerModel};
use crate::policy::AgentAction;
use crate::scenario::load;

use super::{DrivingEnv, EnvError, RewardBreakdown, StepInfo, ACTION_DIM};

/// Result of [`FlatEnv::step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub breakdown: RewardBreakdown,
    pub info: StepInfo,
}

/// Flat-array facade over [`DrivingEnv`] for language bindings: plain
/// `Vec<f64>` observations and `[accel, steer]` actions.
pub struct FlatEnv {
    env: DrivingEnv,
}

impl FlatEnv {
    /// Builds the environment described by a run config file. Without a
    /// checkpoint the scene encoder starts from seeded random weights.
    pub fn make(config: &Path) -> Result<FlatEnv, EnvError> {
        let cfg = RunConfig::load(config)?;
        let bytes = std::fs::read(&cfg.scenario).map_err(|e| EnvError::Scenario(format!("{}: {e}", cfg.scenario.display())))?;
        let mut scenario = load(&bytes).map_err(|e| EnvError::Scenario(e.to_string()))?;
        if let Some(tick) = cfg.tick {
            scenario.tick = tick;
            scenario.resample_routes();
        }
        let model = match &cfg.checkpoint {
            Some(path) => load_checkpoint(path)?,
            None => {
                let mc = ModelConfig::default();
                let norm = PlanNormalizer::identity(NoiseSchedule::default().sigma_data);
                PlannerModel::new(mc, NoiseSchedule::default(), norm, cfg.seeds[0])?
            }
        };
        let env = DrivingEnv::new(Arc::new(scenario), cfg.sim, Arc::new(model), cfg.env)?;
        Ok(FlatEnv { env })
    }

    pub fn from_env(env: DrivingEnv) -> Self {
        FlatEnv { env }
    }

    pub fn inner(&self) -> &DrivingEnv {
        &self.env
    }

    pub fn version(&self) -> &'static str {
        super::VERSION
    }

    pub fn observation_dim(&self) -> usize {
        self.env.observation_dim()
    }

    pub fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    pub fn action_low(&self) -> [f64; ACTION_DIM] {
        self.env.action_bounds().0
    }

    pub fn action_high(&self) -> [f64; ACTION_DIM] {
        self.env.action_bounds().1
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        Ok(self.env.reset(seed)?.to_flat())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<FlatStep, EnvError> {
        let &[accel, steer] = action else {
            return Err(EnvError::BadAction(action.to_vec()));
        };
        let out = self.env.step(AgentAction::new(accel, steer))?;
        Ok(FlatStep {
            observation: out.observation.to_flat(),
            reward: out.reward.total(),
            terminated: out.terminated,
            truncated: out.truncated,
            breakdown: out.reward,
            info: out.info,
        })
    }
}
