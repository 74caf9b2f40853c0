//! Lane following with IDM longitudinal control and MOBIL lane changes.

use crate::geometry::{normalize_angle, Vec2};
use crate::scenario::{AgentState, LightState};
use crate::sim::{Motion, Observation, StepContext, Track, Update};

use super::{advance, idm_accel, mobil_incentive, AccelPair, AgentAction, Leader, MobilInput};

/// Lane-following state: lane index, arc length and lateral offset from the
/// centerline. A nonzero `lateral_rate` blends the offset back to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneFollow {
    pub lane: usize,
    pub s: f64,
    pub offset: f64,
    pub lateral_rate: f64,
    /// Successor chosen for the current lane.
    pub next: Option<usize>,
}

/// Successor that keeps closest to the route path; the smallest id without
/// a route.
pub(crate) fn pick_successor(ctx: &StepContext, lane: usize, route: Option<&Track>) -> Option<usize> {
    let succ = &ctx.index().lane(lane).successors;
    if succ.len() <= 1 {
        return succ.first().copied();
    }
    let Some(path) = route.and_then(Track::path) else {
        return succ.first().copied();
    };
    let mut best: Option<(f64, usize)> = None;
    for &l in succ {
        let g = &ctx.index().lane(l).polyline;
        let probe = g.point_at(g.length() * 0.75);
        let d = path.project(probe).d.abs();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, l));
        }
    }
    best.map(|(_, l)| l)
}

/// Nearest leader along the lane chain starting at `(lane, s)`, including a
/// virtual stopped leader before a red light the agent can still stop for.
#[allow(clippy::too_many_arguments)]
pub(crate) fn chain_leader(
    ctx: &StepContext,
    me: usize,
    exclude: usize,
    lane: usize,
    s: f64,
    first_next: Option<usize>,
    speed: f64,
    length: f64,
) -> Option<Leader> {
    let world = ctx.world;
    let p = ctx.params();
    let route = world.agents[me].route.as_ref();
    let mut cur = lane;
    let mut base = -s;
    for hop in 0..16 {
        let from = if hop == 0 { s } else { f64::NEG_INFINITY };
        if let Some(occ) = ctx.occupancy.get(&cur) {
            for &(so, o) in occ {
                if o == me || o == exclude || so < from || (so == from && o < me) {
                    continue;
                }
                let along = base + so;
                let other = &world.agents[o];
                let gap = along - (length + other.attributes.length) / 2.0;
                let v = ctx.lanes[o].map_or(0.0, |lp| lp.speed);
                return Some(Leader::new(v, gap));
            }
        }
        let remaining = base + ctx.index().lane(cur).length();
        if remaining > p.leader_horizon {
            return None;
        }
        let next = if hop == 0 { first_next } else { pick_successor(ctx, cur, route) };
        let next = next?;
        if ctx.signal(next) == Some(LightState::Red) {
            let gap = remaining - length / 2.0;
            let stoppable = speed * speed / (2.0 * gap) <= 2.0 * p.idm.comfortable_decel;
            if gap > 0.0 && stoppable {
                return Some(Leader::new(0.0, gap));
            }
        }
        base = remaining;
        cur = next;
    }
    None
}

/// Nearest agent behind `s` on `lane` (same lane only).
fn follower(ctx: &StepContext, me: usize, lane: usize, s: f64) -> Option<(usize, f64)> {
    ctx.occupancy
        .get(&lane)?
        .iter()
        .rev()
        .find(|&&(so, o)| o != me && (so < s || (so == s && o > me)))
        .map(|&(so, o)| (o, so))
}

fn initial_follow(ctx: &StepContext, obs: &Observation) -> Option<LaneFollow> {
    let agent = &ctx.world.agents[obs.agent];
    let lp = ctx.lanes[obs.agent]?;
    let g = &ctx.index().lane(lp.lane).polyline;
    let mut d = g.project(agent.state.position).d;
    if d.abs() < 1e-6 {
        d = 0.0;
    }
    Some(LaneFollow {
        lane: lp.lane,
        s: lp.s,
        offset: d,
        lateral_rate: -d / ctx.params().lane_change_duration,
        next: pick_successor(ctx, lp.lane, agent.route.as_ref()),
    })
}

/// Best MOBIL lane change, as the new lane-following state.
fn consider_change(ctx: &StepContext, obs: &Observation, lf: &LaneFollow, a_self: f64) -> Option<LaneFollow> {
    let me = obs.agent;
    let agent = &ctx.world.agents[me];
    let p = ctx.params();
    let len = agent.attributes.length;
    let v = agent.state.speed;
    let lane = ctx.index().lane(lf.lane);

    let old_follower = follower(ctx, me, lf.lane, lf.s).map(|(o, so)| {
        let of = &ctx.world.agents[o];
        let vo = ctx.lanes[o].map_or(0.0, |l| l.speed);
        let gap = lf.s - so - (len + of.attributes.length) / 2.0;
        let before = idm_accel(vo, Some(Leader::new(v, gap)), &p.idm);
        let after = idm_accel(
            vo,
            chain_leader(ctx, o, me, lf.lane, so, lf.next, vo, of.attributes.length),
            &p.idm,
        );
        AccelPair::new(before, after)
    });

    let mut best: Option<(f64, LaneFollow)> = None;
    for target in [lane.left, lane.right].into_iter().flatten() {
        let tg = &ctx.index().lane(target).polyline;
        let f = tg.project(agent.state.position);
        // leave room to finish the blend on this lane
        if f.s + v * p.lane_change_duration > tg.length() {
            continue;
        }
        let next = pick_successor(ctx, target, agent.route.as_ref());
        let a_new = idm_accel(v, chain_leader(ctx, me, me, target, f.s, next, v, len), &p.idm);
        let new_follower = follower(ctx, me, target, f.s).map(|(o, so)| {
            let nf = &ctx.world.agents[o];
            let vo = ctx.lanes[o].map_or(0.0, |l| l.speed);
            let nf_next = pick_successor(ctx, target, nf.route.as_ref());
            let before = idm_accel(
                vo,
                chain_leader(ctx, o, me, target, so, nf_next, vo, nf.attributes.length),
                &p.idm,
            );
            let gap = f.s - so - (len + nf.attributes.length) / 2.0;
            AccelPair::new(before, idm_accel(vo, Some(Leader::new(v, gap)), &p.idm))
        });
        let input = MobilInput {
            own: AccelPair::new(a_self, a_new),
            new_follower,
            old_follower,
        };
        if let Some(inc) = mobil_incentive(&input, &p.mobil) {
            if best.as_ref().is_none_or(|(b, _)| inc > *b) {
                best = Some((
                    inc,
                    LaneFollow {
                        lane: target,
                        s: f.s,
                        offset: f.d,
                        lateral_rate: -f.d / p.lane_change_duration,
                        next,
                    },
                ));
            }
        }
    }
    best.map(|(_, lf)| lf)
}

/// One lane-following step.
pub(crate) fn lane_idm(ctx: &StepContext, obs: &Observation) -> Update {
    let me = obs.agent;
    let agent = &ctx.world.agents[me];
    let p = ctx.params();
    let dt = ctx.tick();
    let mut lf = match &agent.motion {
        Motion::Lane(lf) => lf.clone(),
        _ => match initial_follow(ctx, obs) {
            Some(lf) => lf,
            None => {
                // coast straight ahead
                let s = &agent.state;
                let state = AgentState::new(s.position + Vec2::from_heading(s.heading) * (s.speed * dt), s.speed, s.heading);
                return Update {
                    no_lane: true,
                    ..Update::moved(state, Motion::None, AgentAction::default())
                };
            }
        },
    };
    let v = agent.state.speed;
    let len = agent.attributes.length;
    let leader = chain_leader(ctx, me, me, lf.lane, lf.s, lf.next, v, len);
    let mut a = idm_accel(v, leader, &p.idm);
    if lf.lateral_rate == 0.0 {
        if let Some(changed) = consider_change(ctx, obs, &lf, a) {
            a = idm_accel(v, chain_leader(ctx, me, me, changed.lane, changed.s, changed.next, v, len), &p.idm);
            lf = changed;
        }
    }

    let (ds, v_new) = advance(v, a, dt);
    lf.s += ds;
    let mut arrived = false;
    loop {
        let l = ctx.index().lane(lf.lane).length();
        if lf.s <= l {
            break;
        }
        match lf.next {
            Some(n) => {
                lf.s -= l;
                lf.lane = n;
                lf.next = pick_successor(ctx, n, agent.route.as_ref());
            }
            None => {
                // dead end: the agent leaves the network
                lf.s = l;
                arrived = true;
                break;
            }
        }
    }
    if lf.lateral_rate != 0.0 {
        let next_offset = lf.offset + lf.lateral_rate * dt;
        if next_offset * lf.offset <= 0.0 {
            lf.offset = 0.0;
            lf.lateral_rate = 0.0;
        } else {
            lf.offset = next_offset;
        }
    }
    let g = &ctx.index().lane(lf.lane).polyline;
    let heading = g.heading_at(lf.s);
    let position = g.point_at(lf.s) + Vec2::from_heading(heading).perp() * lf.offset;
    let yaw = if lf.lateral_rate != 0.0 {
        (lf.lateral_rate / v_new.max(0.1)).atan()
    } else {
        0.0
    };
    let state = AgentState::new(position, v_new, normalize_angle(heading + yaw));
    let arrived = arrived || ctx.reached_destination(agent, &state);
    Update {
        arrived,
        ..Update::moved(state, Motion::Lane(lf), AgentAction::new(a, 0.0))
    }
}
