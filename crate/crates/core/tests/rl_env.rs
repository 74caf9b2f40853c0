use std::sync::Arc;

use lcsim_core::geometry::Vec2;
use lcsim_core::planner::{ModelConfig, NoiseSchedule, PlanNormalizer, PlannerModel};
use lcsim_core::policy::{pursuit_action, AgentAction, PolicyAssignment, PolicyKind};
use lcsim_core::rl_env::{
    evaluate, BackgroundMode, DrivingEnv, EnvConfig, EnvError, EpisodeRecord, FlatEnv, ROUTE_DIM, VERSION,
};
use lcsim_core::scenario::{
    save, straight_road, Agent, AgentAttributes, AgentId, AgentState, RoutePoint, Scenario, Schedule,
};
use lcsim_core::sim::{EventKind, SimConfig, Simulator};
use proptest::prelude::*;

/// `(lane, start s, speed, duration)` per agent on a 2-lane, 300 m road
/// along +x; agent 1 is the first entry.
fn road(agents: &[(usize, f64, f64, f64)]) -> Scenario {
    let map = straight_road(2, 300.0, 3.5, Vec2::new(0.0, 0.0), 0.0, 20.0);
    let agents = agents
        .iter()
        .enumerate()
        .map(|(i, &(lane, s, v, dur))| {
            let n = (dur / 0.1).round() as usize;
            let route = (0..=n)
                .map(|k| {
                    let t = k as f64 * 0.1;
                    RoutePoint {
                        t,
                        state: AgentState::new(Vec2::new(s + v * t, lane as f64 * 3.5), v, 0.0),
                    }
                })
                .collect();
            Agent {
                id: AgentId(i as u64 + 1),
                attributes: AgentAttributes::vehicle(4.5, 1.9),
                schedules: vec![Schedule {
                    departure_time: 0.0,
                    reference_route: route,
                    waypoints: Vec::new(),
                }],
            }
        })
        .collect();
    Scenario::new(map, agents)
}

fn model() -> Arc<PlannerModel> {
    let cfg = ModelConfig::default();
    Arc::new(PlannerModel::new(cfg, NoiseSchedule::default(), PlanNormalizer::identity(0.1), 3).unwrap())
}

fn env(s: Scenario, cfg: EnvConfig) -> DrivingEnv {
    DrivingEnv::new(Arc::new(s), SimConfig::default(), model(), cfg).unwrap()
}

fn traffic() -> Scenario {
    road(&[(0, 10.0, 8.0, 9.0), (0, 40.0, 8.0, 9.0), (1, 20.0, 9.0, 9.0), (1, 60.0, 7.0, 9.0)])
}

/// Pure pursuit along the route at route speed.
fn expert(view: &lcsim_core::rl_env::EnvView) -> AgentAction {
    let p = &view.sim.config().policy;
    pursuit_action(
        &view.state,
        view.route.path(),
        view.route.speed_at(view.time),
        p.bicycle.wheelbase(4.5),
        &p.bicycle,
        &p.pursuit,
    )
}

#[test]
fn observation_layout_and_version() {
    let mut e = env(traffic(), EnvConfig::default());
    assert_eq!(VERSION, env!("CARGO_PKG_VERSION"));
    assert_eq!(e.observation_dim(), ModelConfig::default().hidden + 20);
    assert_eq!(e.action_bounds(), ([-6.0, -0.3], [6.0, 0.3]));
    let obs = e.reset(1).unwrap();
    assert_eq!(obs.scene_embedding.len(), ModelConfig::default().hidden);
    assert_eq!(obs.route.len(), ROUTE_DIM);
    assert_eq!(obs.to_flat().len(), e.observation_dim());
    // route at 8 m/s along the heading: points 0.8 m apart straight ahead
    for k in 0..10 {
        assert!((obs.route[2 * k] - 0.8 * (k + 1) as f64).abs() < 1e-9, "{:?}", obs.route);
        assert!(obs.route[2 * k + 1].abs() < 1e-9);
    }
}

#[test]
fn reset_is_deterministic() {
    for background in [BackgroundMode::LogReplay, BackgroundMode::DiffusionUnguided] {
        let cfg = EnvConfig {
            background,
            levels: 4,
            ..EnvConfig::default()
        };
        let mut a = env(traffic(), cfg.clone());
        let mut b = env(traffic(), cfg);
        assert_eq!(a.reset(9).unwrap(), b.reset(9).unwrap());
        for _ in 0..12 {
            let ra = a.step(AgentAction::new(0.5, 0.01)).unwrap();
            let rb = b.step(AgentAction::new(0.5, 0.01)).unwrap();
            assert_eq!(ra, rb);
        }
    }
}

#[test]
fn stepping_matches_the_simulator() {
    let s = Arc::new(traffic());
    let mut e = DrivingEnv::new(s.clone(), SimConfig::default(), model(), EnvConfig::default()).unwrap();
    let sim = Simulator::new(s, SimConfig::default()).unwrap();
    let assign = PolicyAssignment::uniform(PolicyKind::Expert).with(AgentId(1), PolicyKind::External);
    let mut world = sim.init_world();
    e.reset(0).unwrap();
    for k in 0..60 {
        let a = AgentAction::new((k as f64 * 0.37).sin() * 9.0, (k as f64 * 0.21).cos() * 0.5);
        let out = e.step(a).unwrap();
        world.set_action(0, a).unwrap();
        sim.step(&mut world, &assign).unwrap();
        assert_eq!(out.info.state, world.agents[0].state, "step {k}");
        assert_eq!(e.world().unwrap().agents[0].state, world.agents[0].state);
        if out.terminated || out.truncated {
            break;
        }
    }
}

#[test]
fn collision_terminates_with_penalty() {
    // stopped car 25 m ahead in the SDC's lane
    let mut e = env(road(&[(0, 10.0, 10.0, 9.0), (0, 35.0, 0.0, 9.0)]), EnvConfig::default());
    e.reset(0).unwrap();
    let mut hit = None;
    for _ in 0..90 {
        let out = e.step(AgentAction::new(2.0, 0.0)).unwrap();
        if out.terminated {
            hit = Some(out);
            break;
        }
        assert_eq!(out.reward.p_collision, 0.0);
    }
    let out = hit.expect("the SDC runs into the stopped car");
    assert!(out.info.collision);
    assert_eq!(out.reward.p_collision, -10.0);
    assert_eq!(out.reward.p_road, 0.0);
    assert_eq!(out.reward.r_dest, -5.0);
    assert!(matches!(e.step(AgentAction::default()), Err(EnvError::EpisodeOver)));
}

#[test]
fn leaving_the_road_terminates_with_penalty() {
    let mut e = env(road(&[(0, 10.0, 10.0, 9.0)]), EnvConfig::default());
    e.reset(0).unwrap();
    let out = loop {
        let out = e.step(AgentAction::new(0.0, -0.3)).unwrap();
        if out.terminated || out.truncated {
            break out;
        }
        assert_eq!(out.reward.p_road, 0.0);
    };
    assert!(out.terminated && out.info.off_road);
    assert_eq!(out.reward.p_road, -5.0);
    assert_eq!(out.reward.p_collision, 0.0);
}

#[test]
fn arrival_earns_destination_reward() {
    // a 4 s route: the expert arrives well inside the horizon
    let mut e = env(road(&[(0, 10.0, 10.0, 4.0)]), EnvConfig::default());
    let mut obs_view;
    e.reset(0).unwrap();
    let out = loop {
        let w = e.world().unwrap();
        obs_view = lcsim_core::rl_env::EnvView {
            time: w.time,
            state: w.agents[0].state,
            route: e.route(),
            sim: e.simulator(),
        };
        let a = expert(&obs_view);
        let out = e.step(a).unwrap();
        if out.terminated || out.truncated {
            break out;
        }
        assert_eq!(out.reward.r_dest, 0.0);
    };
    assert!(out.terminated && out.info.arrived, "{:?}", out.info);
    assert!(out.info.distance_to_goal <= 2.5);
    assert_eq!(out.reward.r_dest, 10.0);
}

#[test]
fn truncation_at_horizon_without_penalty() {
    let cfg = EnvConfig {
        horizon: 2.0,
        ..EnvConfig::default()
    };
    let mut e = env(traffic(), cfg);
    e.reset(0).unwrap();
    let mut n = 0;
    let last = loop {
        let out = e.step(AgentAction::default()).unwrap();
        n += 1;
        if out.terminated || out.truncated {
            break out;
        }
    };
    assert_eq!(n, 20);
    assert!(last.truncated && !last.terminated);
    assert_eq!(last.reward.r_dest, 0.0);
}

#[test]
fn forward_term_follows_route_coordinates() {
    let mut e = env(traffic(), EnvConfig::default());
    e.reset(0).unwrap();
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..40 {
        let out = e.step(AgentAction::new(1.0, if k < 10 { 0.05 } else { -0.02 })).unwrap();
        if let Some((s, d)) = prev {
            let expect = 0.1 * ((out.info.s - s) - (out.info.d.abs() - d.abs()));
            assert!((out.reward.r_forward - expect).abs() < 1e-12);
        }
        prev = Some((out.info.s, out.info.d));
    }
}

#[test]
fn step_before_reset_is_an_error() {
    let mut e = env(traffic(), EnvConfig::default());
    assert!(matches!(e.step(AgentAction::default()), Err(EnvError::NotReset)));
    e.reset(0).unwrap();
    assert!(matches!(
        e.step(AgentAction::new(f64::NAN, 0.0)),
        Err(EnvError::BadAction(_))
    ));
}

#[test]
fn unknown_or_inactive_sdc_is_rejected() {
    let cfg = EnvConfig {
        sdc: Some(AgentId(77)),
        ..EnvConfig::default()
    };
    let r = DrivingEnv::new(Arc::new(traffic()), SimConfig::default(), model(), cfg);
    assert!(matches!(r, Err(EnvError::UnknownAgent(AgentId(77)))));
}

#[test]
fn planner_backgrounds_drive_from_plans() {
    for background in [
        BackgroundMode::DiffusionUnguided,
        BackgroundMode::DiffusionAdversarial {
            weight: 1.0,
            params: Default::default(),
        },
    ] {
        let cfg = EnvConfig {
            background,
            levels: 4,
            horizon: 3.0,
            ..EnvConfig::default()
        };
        let mut e = env(traffic(), cfg);
        e.reset(5).unwrap();
        let w = e.world().unwrap();
        assert!(w.agents[1..].iter().all(|a| a.plan.is_some()));
        assert!(w.agents[0].plan.is_none(), "the SDC is never handed a plan");
        loop {
            let out = e.step(AgentAction::default()).unwrap();
            assert!(out.observation.to_flat().iter().all(|v| v.is_finite()));
            if out.terminated || out.truncated {
                break;
            }
        }
    }
}

#[test]
fn evaluation_aggregates_episode_logs() {
    let cfg = EnvConfig {
        horizon: 5.0,
        ..EnvConfig::default()
    };
    let mut envs = vec![
        env(road(&[(0, 10.0, 10.0, 4.0), (1, 10.0, 10.0, 9.0)]), cfg.clone()),
        env(road(&[(1, 20.0, 8.0, 4.0), (0, 40.0, 9.0, 9.0)]), cfg.clone()),
    ];
    let report = evaluate(&mut envs, 4, 0, |_, view| expert(view)).unwrap();
    assert_eq!(report.success_rate.mean, 100.0);
    assert_eq!(report.collision_rate.mean, 0.0);
    // arrival fires within the arrival radius of the route end
    assert!(report.route_progress.mean > 90.0, "{:?}", report.route_progress);

    // zero acceleration holds speed in the bicycle model, so "idle" brakes
    let idle = evaluate(&mut envs, 2, 0, |_, _| AgentAction::new(-6.0, 0.0)).unwrap();
    assert_eq!(idle.success_rate.mean, 0.0);
    // progress is the braking distance only
    assert!(idle.route_progress.mean < 30.0, "{:?}", idle.route_progress);

    // random drivers; aggregates recomputed from the raw event logs
    let mut k = 0u64;
    let noisy = evaluate(&mut envs, 100, 7, |_, _| {
        k += 1;
        let x = ((k * 2_654_435_761) % 1000) as f64 / 1000.0;
        AgentAction::new(6.0 * (2.0 * x - 1.0), 0.3 * (1.0 - 2.0 * ((k * 40_503) % 997) as f64 / 997.0))
    })
    .unwrap();
    assert_eq!(noisy.episodes.len(), 100);
    let count = |f: &dyn Fn(&EpisodeRecord) -> bool| noisy.episodes.iter().filter(|e| f(e)).count() as f64;
    let coll = count(&|e| e.events.iter().any(|ev| ev.kind == EventKind::Collision));
    let off = count(&|e| e.events.iter().any(|ev| ev.kind == EventKind::OffRoad));
    assert!((noisy.collision_rate.mean - coll).abs() < 1e-9);
    assert!((noisy.offroad_rate.mean - off).abs() < 1e-9);
    let mean_reward = noisy.episodes.iter().map(|e| e.total_reward).sum::<f64>() / 100.0;
    assert!((noisy.mean_reward.mean - mean_reward).abs() < 1e-9);
}

#[test]
fn flat_env_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.lcs.json"), save(&traffic()).unwrap()).unwrap();
    let cfg = dir.path().join("env.toml");
    std::fs::write(&cfg, "scenario = \"s.lcs.json\"\nseeds = [4]\n[env]\nhorizon = 1.0\n").unwrap();
    let mut a = FlatEnv::make(&cfg).unwrap();
    let mut b = FlatEnv::make(&cfg).unwrap();
    assert_eq!(a.version(), VERSION);
    assert_eq!(a.observation_dim(), ModelConfig::default().hidden + 20);
    assert_eq!((a.action_low(), a.action_high()), ([-6.0, -0.3], [6.0, 0.3]));
    let oa = a.reset(3).unwrap();
    assert_eq!(oa.len(), a.observation_dim());
    assert_eq!(oa, b.reset(3).unwrap());
    assert!(matches!(a.step(&[1.0]), Err(EnvError::BadAction(_))));
    // out-of-range commands are clamped exactly like the simulator does
    let s1 = a.step(&[50.0, -2.0]).unwrap();
    let s2 = b.step(&[6.0, -0.3]).unwrap();
    assert_eq!(s1, s2);
    assert_eq!((s1.info.action.accel, s1.info.action.steer), (6.0, -0.3));
    assert_eq!(s1.reward, s1.breakdown.total());
    std::fs::write(&cfg, "scenario = \"s.lcs.json\"\n[env]\nhorizon = -1.0\n").unwrap();
    assert!(FlatEnv::make(&cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reward_total_is_component_sum(actions in prop::collection::vec((-10.0..10.0f64, -1.0..1.0f64), 1..60)) {
        let mut e = env(traffic(), EnvConfig::default());
        e.reset(0).unwrap();
        let mut ended = false;
        for (a, s) in actions {
            if ended {
                prop_assert!(matches!(e.step(AgentAction::new(a, s)), Err(EnvError::EpisodeOver)));
                continue;
            }
            let out = e.step(AgentAction::new(a, s)).unwrap();
            let r = out.reward;
            prop_assert_eq!(r.total(), r.r_forward + r.p_collision + r.p_road + r.p_smooth + r.r_dest);
            prop_assert!(r.p_collision == 0.0 || out.info.collision);
            prop_assert!(r.p_road == 0.0 || out.info.off_road);
            prop_assert!(r.r_dest == 0.0 || out.terminated || out.truncated);
            prop_assert!(r.p_smooth <= 0.0);
            prop_assert!(out.info.action.accel.abs() <= 6.0 && out.info.action.steer.abs() <= 0.3);
            ended = out.terminated || out.truncated;
        }
    }
}
