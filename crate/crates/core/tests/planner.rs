use std::sync::Arc;

use lcsim_core::geometry::Vec2;
use lcsim_core::planner::autodiff::Mat;
use lcsim_core::planner::corpus::straight_road_scenario;
use lcsim_core::planner::scene::{build_scene_graph, map_chunks, AgentHistory, MapChunk, SceneGraph};
use lcsim_core::planner::{
    integrate_plan, rollout_replan, sample, train, CorpusConfig, GuideSpec, ModelConfig, NoiseSchedule, PlanNormalizer,
    PlanSample, PlannerModel, ReplanConfig, ReplanEvent, SceneConfig, TrainConfig,
};
use lcsim_core::policy::{PolicyAssignment, PolicyKind};
use lcsim_core::router::complete_routes;
use lcsim_core::scenario::{generate_grid, straight_road, AgentAttributes, AgentId, AgentState, GridParams};
use lcsim_core::sim::{SimConfig, Simulator};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn small(future_steps: usize) -> ModelConfig {
    ModelConfig {
        hidden: 16,
        heads: 2,
        head_dim: 8,
        future_steps,
        freq_bands: 8,
        edge_hidden: 8,
        ..ModelConfig::default()
    }
}

fn history(id: u64, p: Vec2, heading: f64, speed: f64) -> AgentHistory {
    let dir = Vec2::from_heading(heading);
    AgentHistory {
        id: AgentId(id),
        attributes: AgentAttributes::vehicle(4.5, 1.9),
        states: (0..10)
            .map(|k| {
                let back = (9 - k) as f64 * 0.1 * speed;
                (k > 1).then(|| AgentState::new(p - dir * back, speed, heading))
            })
            .collect(),
    }
}

fn transform_chunks(chunks: &[MapChunk], rot: f64, shift: Vec2) -> Vec<MapChunk> {
    chunks
        .iter()
        .map(|c| MapChunk {
            position: c.position.rotate(rot) + shift,
            heading: c.heading + rot,
            feats: c.feats,
        })
        .collect()
}

fn transform_history(h: &AgentHistory, rot: f64, shift: Vec2) -> AgentHistory {
    AgentHistory {
        states: h
            .states
            .iter()
            .map(|s| s.map(|s| AgentState::new(s.position.rotate(rot) + shift, s.speed, s.heading + rot)))
            .collect(),
        ..h.clone()
    }
}

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn road_scene() -> (Vec<MapChunk>, Vec<AgentHistory>) {
    let map = straight_road(2, 400.0, 3.5, Vec2::new(-50.0, 0.0), 0.0, 20.0);
    let agents = vec![
        // off the chunk grid so no distance sits exactly on an edge radius
        history(1, Vec2::new(0.7, 0.1), 0.0, 10.0),
        history(2, Vec2::new(10.3, 3.6), 0.05, 8.0),
        history(3, Vec2::new(30.9, -0.2), -0.02, 12.0),
    ];
    (map_chunks(&map, 20.0), agents)
}

#[test]
fn encoding_ignores_global_pose() {
    let model = PlannerModel::new(small(10), NoiseSchedule::default(), PlanNormalizer::identity(0.1), 4).unwrap();
    let cfg = &model.config.scene;
    let (chunks, agents) = road_scene();
    let base = model.encode_scene(&build_scene_graph(&chunks, &agents, cfg).unwrap()).unwrap();
    for (rot, shift) in [(0.0, Vec2::new(100.0, 50.0)), (1.3, Vec2::new(-740.0, 2210.0)), (-2.9, Vec2::default())] {
        let moved: Vec<AgentHistory> = agents.iter().map(|h| transform_history(h, rot, shift)).collect();
        let g = build_scene_graph(&transform_chunks(&chunks, rot, shift), &moved, cfg).unwrap();
        let e = model.encode_scene(&g).unwrap();
        assert!(max_diff(&base.agents, &e.agents) < 1e-5, "rot {rot}");
        assert!(max_diff(&base.map, &e.map) < 1e-5, "rot {rot}");
    }
}

#[test]
fn far_agents_do_not_affect_embeddings() {
    let model = PlannerModel::new(small(10), NoiseSchedule::default(), PlanNormalizer::identity(0.1), 4).unwrap();
    let cfg = &model.config.scene;
    let (chunks, mut agents) = road_scene();
    let near = build_scene_graph(&chunks, &agents, cfg).unwrap();
    agents.push(history(9, Vec2::new(230.0, 0.0), 0.0, 10.0));
    let far = build_scene_graph(&chunks, &agents, cfg).unwrap();
    let (a, b) = (model.encode_scene(&near).unwrap(), model.encode_scene(&far).unwrap());
    let th = near.history_steps;
    for agent in 0..3 {
        for step in 0..th {
            let (x, y) = (a.agent_step(agent, step), b.agent_step(agent, step));
            let d = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(d < 1e-5, "agent {agent} step {step}: {d}");
        }
    }
}

#[test]
fn zero_weights_give_constant_embeddings() {
    let mut model = PlannerModel::new(small(10), NoiseSchedule::default(), PlanNormalizer::identity(0.1), 4).unwrap();
    let zeros: Vec<(String, Mat)> = model
        .params
        .iter()
        .map(|(_, name, m)| (name.to_string(), Mat::zeros(m.rows, m.cols)))
        .collect();
    model.load_params(zeros).unwrap();
    let (chunks, agents) = road_scene();
    let g = build_scene_graph(&chunks, &agents, &model.config.scene).unwrap();
    let e = model.encode_scene(&g).unwrap();
    assert_eq!((e.agents.rows, e.agents.cols), (3 * g.history_steps, 16));
    assert_eq!((e.map.rows, e.map.cols), (g.map_count(), 16));
    for m in [&e.agents, &e.map] {
        for r in 1..m.rows {
            assert_eq!(m.row(r), m.row(0));
        }
    }
}

/// One scene repeated: every agent drives at 10 m/s straight ahead.
fn constant_dataset(cfg: &ModelConfig, copies: usize) -> Vec<PlanSample> {
    let map = straight_road(2, 300.0, 3.5, Vec2::default(), 0.0, 20.0);
    let agents = [history(1, Vec2::new(40.0, 0.0), 0.0, 10.0), history(2, Vec2::new(60.0, 3.5), 0.0, 10.0)];
    let graph: SceneGraph = build_scene_graph(&map_chunks(&map, 20.0), &agents, &cfg.scene).unwrap();
    let row: Vec<f64> = (0..cfg.future_steps).flat_map(|_| [10.0, 0.0]).collect();
    let sample = PlanSample {
        future: graph
            .agent_states
            .iter()
            .map(|s| {
                integrate_plan(&vec![10.0; cfg.future_steps], &vec![0.0; cfg.future_steps], *s, cfg.tick)[1..]
                    .iter()
                    .map(|s| s.position)
                    .collect()
            })
            .collect(),
        target: vec![row; 2],
        mask: vec![true; 2],
        graph,
    };
    vec![sample; copies]
}

#[test]
fn memorizes_a_constant_plan() {
    let cfg = small(20);
    let norm = PlanNormalizer {
        speed_mean: 8.0,
        speed_std: 4.0,
        heading_mean: 0.0,
        heading_std: 0.1,
        sigma_data: 0.1,
    };
    let data = constant_dataset(&cfg, 8);
    let mut model = PlannerModel::new(cfg, NoiseSchedule::default(), norm, 2).unwrap();
    let before = model.params.clone();
    let none = train(&mut model, &data, &TrainConfig { steps: 0, ..TrainConfig::default() }, |_| {}).unwrap();
    assert!(none.losses.is_empty());
    assert!(model.params.iter().zip(before.iter()).all(|(a, b)| a.2 == b.2), "zero steps changed parameters");

    let tc = TrainConfig {
        steps: 2000,
        batch_size: 4,
        learning_rate: 3e-3,
        edm_weighting: true,
        ..TrainConfig::default()
    };
    let rep = train(&mut model, &data, &tc, |_| {}).unwrap();
    let (first, last) = (rep.mean_loss(0, 20), rep.mean_loss(1950, 2000));
    assert!(last <= 0.1 * first, "loss {first} -> {last}");

    let target = data[0].normalized_target(&model.normalizer);
    let g = &data[0].graph;
    let mut den = model.denoiser(g).unwrap();
    for seed in 0..3 {
        let out = sample(&mut den, &model.schedule, 2, model.config.plan_width(), None, seed).unwrap();
        let err = max_diff(&out.plan, &target);
        assert!(err < 0.1, "seed {seed}: max deviation {err} normalized units");
    }
}

fn straight_sim(history_len: usize) -> Simulator {
    let mut sc = straight_road_scenario(&CorpusConfig::default(), 17);
    sc.resample_routes();
    Simulator::new(Arc::new(sc), SimConfig { history_len, ..SimConfig::default() }).unwrap()
}

#[test]
fn generation_count_follows_interval() {
    let model = PlannerModel::new(small(80), NoiseSchedule::default(), PlanNormalizer::identity(0.1), 4).unwrap();
    let sim = straight_sim(10);
    let assign = PolicyAssignment::uniform(PolicyKind::TrajIdm);
    for (interval, expect) in [(8.0, 1), (1.0, 8)] {
        let cfg = ReplanConfig {
            interval,
            guide: GuideSpec::default(),
            schedule: NoiseSchedule { levels: 2, ..NoiseSchedule::default() },
            seed: 1,
        };
        let mut world = sim.init_world();
        let mut plan_steps = Vec::new();
        let n = rollout_replan(&sim, &mut world, &assign, &model, &cfg, 8.0, |e| {
            if let ReplanEvent::Plan(w, _) = e {
                plan_steps.push(w.step_index)
            }
        })
        .unwrap();
        assert_eq!(n, expect);
        assert_eq!(plan_steps.len(), expect);
        assert!(plan_steps.windows(2).all(|w| w[1] - w[0] == 10), "{plan_steps:?}");
    }
    let bad = ReplanConfig {
        interval: 9.0,
        guide: GuideSpec::default(),
        schedule: NoiseSchedule::default(),
        seed: 0,
    };
    assert!(rollout_replan(&sim, &mut sim.init_world(), &assign, &model, &bad, 8.0, |_| {}).is_err());
    let short = straight_sim(4);
    assert!(rollout_replan(&short, &mut short.init_world(), &assign, &model, &bad, 8.0, |_| {}).is_err());
}

#[test]
fn replanned_rollout_is_deterministic() {
    let model = PlannerModel::new(small(30), NoiseSchedule::default(), PlanNormalizer::identity(0.1), 6).unwrap();
    let mut sc = generate_grid(&GridParams::new(2, 2, 80.0, 1, 8, 5)).unwrap();
    complete_routes(&mut sc, 10.0).unwrap();
    let sim = Simulator::new(Arc::new(sc), SimConfig::default()).unwrap();
    let assign = PolicyAssignment::uniform(PolicyKind::TrajIdm);
    let run = || {
        let cfg = ReplanConfig {
            interval: 1.0,
            guide: GuideSpec::default(),
            schedule: NoiseSchedule { levels: 3, ..NoiseSchedule::default() },
            seed: 11,
        };
        let mut world = sim.init_world();
        let mut h = Sha256::new();
        rollout_replan(&sim, &mut world, &assign, &model, &cfg, 6.0, |e| {
            if let ReplanEvent::Step(w) = e {
                for a in &w.agents {
                    for v in [a.state.position.x, a.state.position.y, a.state.speed, a.state.heading] {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        })
        .unwrap();
        h.finalize()
    };
    assert_eq!(run(), run());
}

#[test]
fn scene_config_radii_gate_edges() {
    let cfg = SceneConfig::default();
    let chunks: Vec<MapChunk> = Vec::new();
    let pair = |d: f64| {
        build_scene_graph(
            &chunks,
            &[history(1, Vec2::default(), 0.0, 5.0), history(2, Vec2::new(d, 0.0), 0.0, 5.0)],
            &cfg,
        )
        .unwrap()
    };
    assert_eq!(pair(10.0).a2a.len(), 2);
    assert_eq!(pair(60.0).a2a.len(), 0);
}

proptest! {
    #[test]
    fn plan_endpoint_never_outruns_top_speed(
        speeds in prop::collection::vec(0.0..30.0f64, 1..100),
        turn in -0.2..0.2f64,
        heading in -3.2..3.2f64,
    ) {
        let n = speeds.len();
        let headings: Vec<f64> = (0..n).map(|k| heading + turn * k as f64).collect();
        let start = AgentState::new(Vec2::new(5.0, -2.0), 0.0, heading);
        let traj = integrate_plan(&speeds, &headings, start, 0.1);
        let vmax = speeds.iter().cloned().fold(0.0, f64::max);
        let moved = traj.last().unwrap().position.distance(start.position);
        prop_assert!(moved <= vmax * 0.1 * n as f64 + 1e-9);
    }
}
