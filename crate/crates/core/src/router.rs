//! Lane-level routing: a directed lane graph, A* search over traversal time
//! and expansion of lane sequences into timed reference routes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::geometry::{Polyline, Vec2};
use crate::scenario::{AgentId, AgentState, LaneId, LaneType, Map, RoutePoint, Scenario};

/// Cost of a lateral (lane change) edge, seconds.
pub const LANE_CHANGE_PENALTY: f64 = 5.0;
/// Acceleration used for reference speed profiles, m/s^2.
pub const REFERENCE_ACCEL: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("lane {0} is not a driving lane in the graph")]
    UnknownLane(LaneId),
    #[error("no path from lane {from} to lane {to}")]
    NoPath { from: LaneId, to: LaneId },
    #[error("route is empty")]
    EmptyRoute,
    #[error("lanes {0} and {1} are not connected")]
    NotConnected(LaneId, LaneId),
    #[error("target speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("tick must be positive, got {0}")]
    BadTick(f64),
    #[error("no driving lane near waypoint ({0}, {1})")]
    NoLaneNear(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Successor,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: LaneId,
    pub cost: f64,
    pub kind: EdgeKind,
}

/// Directed graph over driving lanes. Node order is ascending lane id.
#[derive(Debug, Clone)]
pub struct LaneGraph {
    ids: Vec<LaneId>,
    index: BTreeMap<LaneId, usize>,
    adjacency: Vec<Vec<(usize, f64, EdgeKind)>>,
    ends: Vec<Vec2>,
    max_speed: f64,
}

impl LaneGraph {
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn nodes(&self) -> &[LaneId] {
        &self.ids
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (LaneId, Edge)> + '_ {
        self.adjacency.iter().enumerate().flat_map(move |(i, adj)| {
            adj.iter().map(move |&(j, cost, kind)| {
                (
                    self.ids[i],
                    Edge {
                        to: self.ids[j],
                        cost,
                        kind,
                    },
                )
            })
        })
    }

    pub fn edges_from(&self, lane: LaneId) -> Vec<Edge> {
        self.index
            .get(&lane)
            .map(|&i| {
                self.adjacency[i]
                    .iter()
                    .map(|&(j, cost, kind)| Edge {
                        to: self.ids[j],
                        cost,
                        kind,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn contains(&self, lane: LaneId) -> bool {
        self.index.contains_key(&lane)
    }

    /// Largest lane speed limit, used by the admissible heuristic.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    fn heuristic(&self, node: usize, goal: usize) -> f64 {
        if self.max_speed > 0.0 {
            self.ends[node].distance(self.ends[goal]) / self.max_speed
        } else {
            0.0
        }
    }

    /// Minimum-time lane sequence from `origin` to `dest`.
    ///
    /// Path cost counts the full traversal of every lane after the origin plus
    /// the fixed penalty per lane change. Equal-cost paths resolve to the
    /// lexicographically smallest lane id sequence.
    pub fn route(&self, origin: LaneId, dest: LaneId) -> Result<Vec<LaneId>, RouteError> {
        let start = *self.index.get(&origin).ok_or(RouteError::UnknownLane(origin))?;
        let goal = *self.index.get(&dest).ok_or(RouteError::UnknownLane(dest))?;
        if start == goal {
            return Ok(vec![origin]);
        }

        #[derive(PartialEq)]
        struct Entry {
            f: f64,
            g: f64,
            path: Vec<usize>,
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, o: &Self) -> Ordering {
                // reversed: BinaryHeap is a max-heap
                o.f.total_cmp(&self.f).then_with(|| o.path.cmp(&self.path))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }

        let n = self.ids.len();
        let mut best_g = vec![f64::INFINITY; n];
        let mut best_path: Vec<Option<Vec<usize>>> = vec![None; n];
        best_g[start] = 0.0;
        best_path[start] = Some(vec![start]);
        let mut heap = BinaryHeap::new();
        heap.push(Entry {
            f: self.heuristic(start, goal),
            g: 0.0,
            path: vec![start],
        });

        while let Some(Entry { g, path, .. }) = heap.pop() {
            let node = *path.last().unwrap();
            if g > best_g[node] || best_path[node].as_ref() != Some(&path) {
                continue;
            }
            if node == goal {
                return Ok(path.into_iter().map(|i| self.ids[i]).collect());
            }
            for &(next, cost, _) in &self.adjacency[node] {
                if path.contains(&next) {
                    continue;
                }
                let ng = g + cost;
                let mut np = path.clone();
                np.push(next);
                let better = ng < best_g[next]
                    || (ng == best_g[next]
                        && best_path[next].as_ref().map(|p| np < *p).unwrap_or(true));
                if better {
                    best_g[next] = ng;
                    best_path[next] = Some(np.clone());
                    heap.push(Entry {
                        f: ng + self.heuristic(next, goal),
                        g: ng,
                        path: np,
                    });
                }
            }
        }
        Err(RouteError::NoPath {
            from: origin,
            to: dest,
        })
    }

    /// Sum of edge costs along `path`, or `None` if some hop is not an edge.
    pub fn path_cost(&self, path: &[LaneId]) -> Option<f64> {
        let mut acc = 0.0;
        for w in path.windows(2) {
            let i = *self.index.get(&w[0])?;
            let j = *self.index.get(&w[1])?;
            let (_, c, _) = self.adjacency[i].iter().find(|e| e.0 == j)?;
            acc += c;
        }
        Some(acc)
    }
}

/// Builds the lane graph over all driving lanes of `map`.
///
/// Successor edges cost the traversal time of the target lane at its speed
/// limit. Each neighbor link yields one lateral edge costing
/// [`LANE_CHANGE_PENALTY`].
pub fn build_graph(map: &Map) -> LaneGraph {
    let mut driving: Vec<_> = map
        .lanes
        .iter()
        .filter(|l| l.lane_type == LaneType::Driving && l.centerline.len() >= 2)
        .collect();
    driving.sort_by_key(|l| l.id);
    let ids: Vec<LaneId> = driving.iter().map(|l| l.id).collect();
    let index: BTreeMap<LaneId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let travel: Vec<f64> = driving.iter().map(|l| l.length() / l.max_speed).collect();
    let mut adjacency = vec![Vec::new(); ids.len()];
    for (i, lane) in driving.iter().enumerate() {
        let mut out: BTreeMap<usize, (f64, EdgeKind)> = BTreeMap::new();
        for s in &lane.successors {
            if let Some(&j) = index.get(s) {
                out.insert(j, (travel[j], EdgeKind::Successor));
            }
        }
        for nb in [lane.left_neighbor, lane.right_neighbor].into_iter().flatten() {
            if let Some(&j) = index.get(&nb) {
                out.entry(j).or_insert((LANE_CHANGE_PENALTY, EdgeKind::Lateral));
            }
        }
        adjacency[i] = out.into_iter().map(|(j, (c, k))| (j, c, k)).collect();
    }
    let max_speed = driving.iter().map(|l| l.max_speed).fold(0.0, f64::max);
    LaneGraph {
        ends: driving.iter().map(|l| *l.centerline.last().unwrap()).collect(),
        ids,
        index,
        adjacency,
        max_speed,
    }
}

/// Convenience wrapper for [`LaneGraph::route`].
pub fn route(graph: &LaneGraph, origin: LaneId, dest: LaneId) -> Result<Vec<LaneId>, RouteError> {
    graph.route(origin, dest)
}

/// A lane sequence with the origin and destination arc positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneRoute {
    pub lanes: Vec<LaneId>,
    pub origin_s: f64,
    pub dest_s: f64,
}

/// Path geometry of a lane route with per-segment speed limits.
#[derive(Debug, Clone)]
pub struct RoutePath {
    pub polyline: Option<Polyline>,
    pub start: Vec2,
    /// Speed limit of each polyline segment.
    pub limits: Vec<f64>,
}

impl RoutePath {
    pub fn length(&self) -> f64 {
        self.polyline.as_ref().map(Polyline::length).unwrap_or(0.0)
    }
}

/// Concatenates lane centerlines into one path. Lane changes happen at the
/// middle of the remaining part of the lane being left.
pub fn route_path(map: &Map, route: &LaneRoute, target_speed: f64) -> Result<RoutePath, RouteError> {
    if route.lanes.is_empty() {
        return Err(RouteError::EmptyRoute);
    }
    let lanes: Vec<_> = route
        .lanes
        .iter()
        .map(|id| map.lane(*id).ok_or(RouteError::UnknownLane(*id)))
        .collect::<Result<_, _>>()?;
    let lines: Vec<Polyline> = lanes.iter().map(|l| l.polyline()).collect();

    let mut pieces: Vec<(usize, f64, f64)> = Vec::new();
    let mut from = route.origin_s.clamp(0.0, lines[0].length());
    for i in 0..lanes.len() {
        let len = lines[i].length();
        let last = i + 1 == lanes.len();
        if last {
            let to = route.dest_s.clamp(from, len);
            pieces.push((i, from, to));
            break;
        }
        let next = lanes[i + 1];
        if lanes[i].successors.contains(&next.id) {
            pieces.push((i, from, len));
            from = 0.0;
        } else if lanes[i].left_neighbor == Some(next.id) || lanes[i].right_neighbor == Some(next.id) {
            let mid = 0.5 * (from + len);
            pieces.push((i, from, mid));
            let p = lines[i].point_at(mid);
            from = lines[i + 1].project(p).s;
        } else {
            return Err(RouteError::NotConnected(lanes[i].id, next.id));
        }
    }

    let mut points: Vec<Vec2> = Vec::new();
    let mut limits: Vec<f64> = Vec::new();
    for &(i, a, b) in &pieces {
        let limit = target_speed.min(lanes[i].max_speed);
        let pts = if b > a {
            lines[i].slice(a, b)
        } else {
            vec![lines[i].point_at(a)]
        };
        for p in pts {
            if let Some(last) = points.last() {
                if last.distance(p) <= 1e-9 {
                    continue;
                }
                limits.push(limit);
            }
            points.push(p);
        }
    }
    let start = points[0];
    let polyline = (points.len() >= 2).then(|| Polyline::new(points));
    Ok(RoutePath {
        polyline,
        start,
        limits,
    })
}

/// One constant-acceleration piece of a speed profile.
#[derive(Debug, Clone, Copy)]
struct Piece {
    t0: f64,
    s0: f64,
    v0: f64,
    accel: f64,
    duration: f64,
}

/// Trapezoidal speed profile over arc length: starts and ends at rest,
/// accelerates and brakes at a fixed rate and respects per-segment limits.
#[derive(Debug, Clone)]
pub struct SpeedProfile {
    pieces: Vec<Piece>,
    length: f64,
}

impl SpeedProfile {
    /// `knots` are increasing arc lengths starting at zero; `limits[i]` is the
    /// speed limit on `[knots[i], knots[i+1]]`.
    pub fn new(knots: &[f64], limits: &[f64], accel: f64) -> Self {
        assert_eq!(knots.len(), limits.len() + 1);
        let n = limits.len();
        let length = *knots.last().unwrap_or(&0.0);
        if n == 0 {
            return SpeedProfile {
                pieces: Vec::new(),
                length,
            };
        }
        let vsq: Vec<f64> = limits.iter().map(|v| v * v).collect();
        let mut cap = vec![0.0; n + 1];
        for i in 1..n {
            cap[i] = vsq[i - 1].min(vsq[i]);
        }
        let mut fwd = vec![0.0; n + 1];
        for i in 0..n {
            fwd[i + 1] = (fwd[i] + 2.0 * accel * (knots[i + 1] - knots[i])).min(cap[i + 1]);
        }
        let mut bwd = vec![0.0; n + 1];
        for i in (0..n).rev() {
            bwd[i] = (bwd[i + 1] + 2.0 * accel * (knots[i + 1] - knots[i])).min(cap[i]);
        }

        let mut pieces = Vec::new();
        let mut t = 0.0;
        for i in 0..n {
            let (sa, sb) = (knots[i], knots[i + 1]);
            let (c, f0, b1) = (vsq[i], fwd[i], bwd[i + 1]);
            let v2 = |s: f64| {
                c.min(f0 + 2.0 * accel * (s - sa))
                    .min(b1 + 2.0 * accel * (sb - s))
                    .max(0.0)
            };
            let mut cuts = vec![sa, sb];
            for s in [
                sa + (c - f0) / (2.0 * accel),
                sb - (c - b1) / (2.0 * accel),
                (b1 + 2.0 * accel * sb - f0 + 2.0 * accel * sa) / (4.0 * accel),
            ] {
                if s > sa && s < sb {
                    cuts.push(s);
                }
            }
            cuts.sort_by(f64::total_cmp);
            for w in cuts.windows(2) {
                let ds = w[1] - w[0];
                if ds <= 0.0 {
                    continue;
                }
                let va = v2(w[0]).sqrt();
                let vb = v2(w[1]).sqrt();
                if va + vb <= 0.0 {
                    continue;
                }
                let duration = 2.0 * ds / (va + vb);
                pieces.push(Piece {
                    t0: t,
                    s0: w[0],
                    v0: va,
                    accel: (vb - va) / duration,
                    duration,
                });
                t += duration;
            }
        }
        SpeedProfile { pieces, length }
    }

    pub fn duration(&self) -> f64 {
        self.pieces.last().map(|p| p.t0 + p.duration).unwrap_or(0.0)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Arc length and speed at time `t` since departure.
    pub fn at(&self, t: f64) -> (f64, f64) {
        if self.pieces.is_empty() || t >= self.duration() {
            return (self.length, 0.0);
        }
        if t <= 0.0 {
            return (0.0, 0.0);
        }
        let k = self.pieces.partition_point(|p| p.t0 <= t).saturating_sub(1);
        let p = &self.pieces[k];
        let tau = (t - p.t0).min(p.duration);
        let s = p.s0 + p.v0 * tau + 0.5 * p.accel * tau * tau;
        let v = (p.v0 + p.accel * tau).max(0.0);
        (s.min(self.length), v)
    }
}

/// Expands a lane route into a reference route sampled every `tick` from
/// `depart_time`, following a trapezoidal speed profile that starts and ends
/// at rest with acceleration [`REFERENCE_ACCEL`].
pub fn expand_route(
    map: &Map,
    route: &LaneRoute,
    depart_time: f64,
    target_speed: f64,
    tick: f64,
) -> Result<Vec<RoutePoint>, RouteError> {
    if !(target_speed > 0.0) {
        return Err(RouteError::BadSpeed(target_speed));
    }
    if !(tick > 0.0) {
        return Err(RouteError::BadTick(tick));
    }
    let path = route_path(map, route, target_speed)?;
    let Some(line) = path.polyline.as_ref() else {
        let heading = map
            .lane(route.lanes[0])
            .map(|l| l.polyline().heading_at(route.origin_s))
            .unwrap_or(0.0);
        return Ok(vec![RoutePoint {
            t: depart_time,
            state: AgentState::new(path.start, 0.0, heading),
        }]);
    };
    let profile = SpeedProfile::new(line.cumulative(), &path.limits, REFERENCE_ACCEL);
    let steps = (profile.duration() / tick - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * tick;
        let (s, v) = profile.at(t);
        out.push(RoutePoint {
            t: depart_time + t,
            state: AgentState::new(line.point_at(s), v, line.heading_at(s)),
        });
    }
    Ok(out)
}

/// Nearest driving lane to `p` as `(lane, s)`; ties go to the smaller id.
pub fn snap_to_lane(map: &Map, p: Vec2) -> Option<(LaneId, f64)> {
    let mut best: Option<(f64, LaneId, f64)> = None;
    for lane in map.lanes.iter().filter(|l| l.lane_type == LaneType::Driving) {
        let f = lane.polyline().project(p);
        let key = (f.d.abs(), lane.id);
        if best.is_none_or(|(d, id, _)| key < (d, id)) {
            best = Some((f.d.abs(), lane.id, f.s));
        }
    }
    best.map(|(_, id, s)| (id, s))
}

/// Lane route visiting every waypoint position in order.
pub fn waypoint_route(map: &Map, graph: &LaneGraph, waypoints: &[Vec2]) -> Result<LaneRoute, RouteError> {
    let snapped = waypoints
        .iter()
        .map(|p| snap_to_lane(map, *p).ok_or(RouteError::NoLaneNear(p.x, p.y)))
        .collect::<Result<Vec<_>, _>>()?;
    let (first, last) = match (snapped.first(), snapped.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(RouteError::EmptyRoute),
    };
    let mut lanes = vec![first.0];
    for w in snapped.windows(2) {
        let leg = graph.route(w[0].0, w[1].0)?;
        lanes.extend_from_slice(&leg[1..]);
    }
    Ok(LaneRoute {
        lanes,
        origin_s: first.1,
        dest_s: last.1,
    })
}

/// Fills empty reference routes of selected agents from their waypoints,
/// departing at the schedule's departure time. Returns how many schedules
/// were completed.
pub fn complete_routes_for(
    scenario: &mut Scenario,
    select: impl Fn(AgentId) -> bool,
    target_speed: f64,
) -> Result<usize, RouteError> {
    let graph = build_graph(&scenario.map);
    let tick = scenario.tick;
    let mut done = 0;
    for agent in scenario.agents.iter_mut().filter(|a| select(a.id)) {
        for sched in &mut agent.schedules {
            if !sched.reference_route.is_empty() || sched.waypoints.is_empty() {
                continue;
            }
            let pts: Vec<Vec2> = sched.waypoints.iter().map(|w| w.position).collect();
            let route = waypoint_route(&scenario.map, &graph, &pts)?;
            sched.reference_route = expand_route(&scenario.map, &route, sched.departure_time, target_speed, tick)?;
            done += 1;
        }
    }
    Ok(done)
}

pub fn complete_routes(scenario: &mut Scenario, target_speed: f64) -> Result<usize, RouteError> {
    complete_routes_for(scenario, |_| true, target_speed)
}


#[cfg(test)]
mod completion_tests {
    use super::*;
    use crate::scenario::{generate_grid, GridParams};

    #[test]
    fn completed_routes_end_at_waypoints() {
        let mut s = generate_grid(&GridParams::new(2, 2, 150.0, 1, 8, 3)).unwrap();
        assert_eq!(complete_routes(&mut s, 10.0).unwrap(), 8);
        for a in &s.agents {
            let sch = &a.schedules[0];
            let r = &sch.reference_route;
            assert!(r[0].state.position.distance(sch.waypoints[0].position) < 1e-6);
            assert!(r.last().unwrap().state.position.distance(sch.waypoints[1].position) < 1e-6);
            assert_eq!(r[0].t, sch.departure_time);
        }
        // idempotent
        assert_eq!(complete_routes(&mut s, 10.0).unwrap(), 0);
    }
}
