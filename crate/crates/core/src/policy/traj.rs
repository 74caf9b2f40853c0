//! Path following of the motion plan with IDM speed control.

use crate::geometry::angle_diff;
use crate::scenario::AgentState;
use crate::sim::{Motion, Observation, StepContext, Update};

use super::{advance, idm_accel, AgentAction, IdmParams, Leader};

/// Nearest agent ahead inside the corridor of half-width `half_width`
/// around the path.
fn corridor_leader(ctx: &StepContext, obs: &Observation, path: &crate::geometry::Polyline, s: f64, half_width: f64) -> Option<Leader> {
    let me = &ctx.world.agents[obs.agent];
    let mut best: Option<Leader> = None;
    for &j in &obs.neighbors {
        let other = &ctx.world.agents[j];
        let f = path.project(other.state.position);
        if f.s <= s || f.d.abs() > half_width {
            continue;
        }
        let gap = f.s - s - (me.attributes.length + other.attributes.length) / 2.0;
        let along = other.state.speed * angle_diff(other.state.heading, path.heading_at(f.s)).cos();
        best = Leader::nearest(best, Some(Leader::new(along.max(0.0), gap)));
    }
    best
}

pub(crate) fn traj_idm(ctx: &StepContext, obs: &Observation) -> Update {
    let agent = &ctx.world.agents[obs.agent];
    let p = ctx.params();
    let dt = ctx.tick();
    let Some(track) = agent.guide_track() else {
        return Update {
            arrived: true,
            ..Update::moved(agent.state, Motion::None, AgentAction::default())
        };
    };
    let Some(path) = track.path() else {
        // stationary plan: hold position until it runs out
        let state = AgentState::new(agent.state.position, 0.0, agent.state.heading);
        let exhausted = ctx.next_time > track.end_time() + 1e-9;
        return Update {
            arrived: exhausted && agent.plan.is_none(),
            ..Update::moved(state, Motion::None, AgentAction::default())
        };
    };
    let s = match agent.motion {
        Motion::Path(s) => s,
        _ => path.project(agent.state.position).s,
    };
    let len = path.length();
    let idm = IdmParams {
        v_target: track.speed_at(ctx.next_time).max(p.min_plan_speed),
        ..p.idm
    };
    let v = agent.state.speed;
    // the path end acts as a stopped obstacle at which the center halts
    let end = Leader::new(0.0, len - s + idm.min_gap);
    let leader = Leader::nearest(
        corridor_leader(ctx, obs, path, s, agent.attributes.width),
        Some(end),
    );
    let a = idm_accel(v, leader, &idm);
    let (ds, v_new) = advance(v, a, dt);
    let s_new = (s + ds).min(len);
    let state = AgentState::new(path.point_at(s_new), v_new, path.heading_at(s_new));
    let plan_done = agent.plan.is_some()
        && ctx.next_time > track.end_time() + 1e-9
        && s_new >= len - 1e-6
        && agent.route.is_none();
    Update {
        arrived: plan_done || ctx.reached_destination(agent, &state),
        ..Update::moved(state, Motion::Path(s_new), AgentAction::new(a, 0.0))
    }
}
