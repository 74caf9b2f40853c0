//! Fixtures shared by the benchmarks.

use lcsim_core::planner::corpus::{straight_road_scenario, sample_from_rollout};
use lcsim_core::planner::{CorpusConfig, ModelConfig, NoiseSchedule, PlanNormalizer, PlannerModel, SceneGraph};
use lcsim_core::policy::{PolicyAssignment, PolicyKind};
use lcsim_core::router::complete_routes;
use lcsim_core::scenario::{generate_grid, GridParams, Scenario};

/// 3×3 grid, two lanes per direction, `agents` routed vehicles.
pub fn grid_scenario(agents: usize, seed: u64) -> Scenario {
    let mut s = generate_grid(&GridParams::new(3, 3, 150.0, 2, agents, seed)).expect("grid parameters are valid");
    complete_routes(&mut s, 10.0).expect("generated trips are routable");
    s
}

/// Untrained default-size model; timing does not depend on the weights.
pub fn model() -> PlannerModel {
    PlannerModel::new(ModelConfig::default(), NoiseSchedule::default(), PlanNormalizer::identity(0.1), 0)
        .expect("default config is valid")
}

/// Scene graph of one straight-road corpus scene.
pub fn scene(model: &PlannerModel, seed: u64) -> SceneGraph {
    let mut sc = straight_road_scenario(&CorpusConfig::default(), seed);
    sc.resample_routes();
    let assign = PolicyAssignment::uniform(PolicyKind::LaneIdm);
    sample_from_rollout(sc, &assign, &model.config.scene, model.config.future_steps)
        .expect("corpus scenes roll out")
        .graph
}
