//! Guided diffusion motion planner: scene graph, attention encoder,
//! preconditioned denoiser, guided sampler, guide costs and training.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod guides;
pub mod model;
pub mod normalize;
pub mod plan;
pub mod rollout;
pub mod sampler;
pub mod scene;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use corpus::{PlanSample, CorpusConfig};
pub use guides::{GoalTarget, GuideAgent, GuideKind, GuideScene, GuideSpec, GuideTerm, PlanGuide};
pub use model::{ModelConfig, PlannerModel, SceneEmbedding};
pub use normalize::PlanNormalizer;
pub use plan::{integrate_plan, MotionPlan};
pub use rollout::{generate_plan, rollout_replan, GeneratedPlan, InstalledPlan, ReplanConfig, ReplanEvent, Replanner};
pub use sampler::{sample, Denoiser, FnGuide, GaussianDenoiser, GuideObjective, GuideParams, Sampled};
pub use scene::{build_scene_graph, AgentHistory, SceneConfig, SceneGraph};
pub use schedule::{score, NoiseSchedule, Precond};
pub use train::{evaluate_min_ade, train, LossRecord, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite values at sampling level {level} (sigma {sigma})")]
    NonFinite { level: usize, sigma: f64 },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("no active agents to plan for")]
    NoAgents,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
