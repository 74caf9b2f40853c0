//! Heterogeneous scene graph: agent nodes (one per history step), map nodes
//! (fixed-length lane chunks) and radius-limited edges whose features are
//! expressed in the receiving node's frame, so nothing depends on absolute
//! position or orientation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, Vec2};
use crate::scenario::{AgentAttributes, AgentId, AgentState, AgentType, LaneType, Map};
use crate::sim::WorldState;

use super::autodiff::Mat;
use super::PlannerError;

pub const AGENT_FEATURES: usize = 11;
pub const MAP_FEATURES: usize = 6;
pub const EDGE_FEATURES: usize = 5;
/// Width of the sinusoidal step-offset encoding.
pub const POS_FEATURES: usize = 16;

const POS_SCALE: f64 = 10.0;
const EDGE_SCALE: f64 = 50.0;
const SPEED_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub a2a_radius: f64,
    pub pl2a_radius: f64,
    pub pl2m_radius: f64,
    pub a2m_radius: f64,
    pub m2m_radius: f64,
    pub chunk_length: f64,
    pub history_steps: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            a2a_radius: 50.0,
            pl2a_radius: 50.0,
            pl2m_radius: 150.0,
            a2m_radius: 150.0,
            m2m_radius: 50.0,
            chunk_length: 20.0,
            history_steps: 10,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let radii = [self.a2a_radius, self.pl2a_radius, self.pl2m_radius, self.a2m_radius, self.m2m_radius];
        if radii.iter().all(|r| *r >= 0.0 && r.is_finite()) && self.chunk_length > 0.0 && self.history_steps >= 1 {
            Ok(())
        } else {
            Err(PlannerError::Config(format!("invalid scene configuration {self:?}")))
        }
    }

    fn max_radius(&self) -> f64 {
        self.pl2a_radius.max(self.pl2m_radius).max(self.m2m_radius)
    }
}

/// Observed history of one agent, oldest first; the last entry is the
/// current state and must be present.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentHistory {
    pub id: AgentId,
    pub attributes: AgentAttributes,
    pub states: Vec<Option<AgentState>>,
}

impl AgentHistory {
    pub fn current(&self) -> Option<AgentState> {
        self.states.last().copied().flatten()
    }
}

/// Histories of every present agent, in world order.
pub fn world_histories(world: &WorldState, steps: usize) -> Vec<AgentHistory> {
    world
        .agents
        .iter()
        .filter(|a| a.is_present())
        .map(|a| {
            let mut states = a.history(world.step_index, steps);
            if let Some(last) = states.last_mut() {
                *last = Some(a.state);
            }
            AgentHistory {
                id: a.id,
                attributes: a.attributes,
                states,
            }
        })
        .collect()
}

/// Directed edges `src -> dst` with per-edge features.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    pub feats: Mat,
}

impl EdgeSet {
    fn from_list(list: Vec<(usize, usize, Vec<f64>)>, width: usize) -> Self {
        let mut list = list;
        list.sort_by_key(|e| (e.1, e.0));
        let mut feats = Mat::zeros(list.len(), width);
        for (k, e) in list.iter().enumerate() {
            feats.row_mut(k).copy_from_slice(&e.2);
        }
        EdgeSet {
            src: Arc::new(list.iter().map(|e| e.0).collect()),
            dst: Arc::new(list.iter().map(|e| e.1).collect()),
            feats,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn contains(&self, src: usize, dst: usize) -> bool {
        self.src.iter().zip(self.dst.iter()).any(|(s, d)| *s == src && *d == dst)
    }

    fn shifted(parts: &[(&EdgeSet, usize, usize)]) -> EdgeSet {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let width = parts.first().map_or(0, |p| p.0.feats.cols);
        let mut data = Vec::new();
        for (e, so, doff) in parts {
            src.extend(e.src.iter().map(|s| s + so));
            dst.extend(e.dst.iter().map(|d| d + doff));
            data.extend_from_slice(&e.feats.data);
        }
        let rows = src.len();
        EdgeSet {
            src: Arc::new(src),
            dst: Arc::new(dst),
            feats: Mat::from_vec(rows, width, data),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub history_steps: usize,
    pub agent_ids: Vec<AgentId>,
    pub agent_states: Vec<AgentState>,
    pub agent_attrs: Vec<AgentAttributes>,
    /// `[A * T_h, AGENT_FEATURES]`, row `a * T_h + k`, oldest step first.
    pub agent_feats: Mat,
    pub map_poses: Vec<(Vec2, f64)>,
    pub map_feats: Mat,
    /// History row -> agent (valid steps only), with step-offset encodings.
    pub temporal: EdgeSet,
    pub m2m: EdgeSet,
    pub pl2a: EdgeSet,
    pub a2a: EdgeSet,
    pub pl2m: EdgeSet,
    pub a2m: EdgeSet,
    /// `a2m` plus self loops, for self-attention across plans.
    pub plan_self: EdgeSet,
}

/// Relative feature of a node at `(p, th)` as seen from `(q, qh)`.
pub fn edge_features(q: Vec2, qh: f64, p: Vec2, th: f64) -> [f64; EDGE_FEATURES] {
    let rel = (p - q).rotate(-qh);
    let dh = angle_diff(th, qh);
    [rel.x / EDGE_SCALE, rel.y / EDGE_SCALE, rel.norm() / EDGE_SCALE, dh.cos(), dh.sin()]
}

/// Sinusoidal encoding of an offset in steps.
pub fn step_encoding(offset: f64) -> [f64; POS_FEATURES] {
    let mut out = [0.0; POS_FEATURES];
    for k in 0..POS_FEATURES / 2 {
        let f = 1.0 / 2f64.powi(k as i32);
        out[2 * k] = (offset * f).sin();
        out[2 * k + 1] = (offset * f).cos();
    }
    out
}

fn agent_features(attrs: &AgentAttributes, cur: &AgentState, s: Option<&AgentState>) -> [f64; AGENT_FEATURES] {
    let mut f = [0.0; AGENT_FEATURES];
    let Some(s) = s else { return f };
    let rel = (s.position - cur.position).rotate(-cur.heading);
    let dh = angle_diff(s.heading, cur.heading);
    f[0] = s.speed / SPEED_SCALE;
    f[1] = rel.x / POS_SCALE;
    f[2] = rel.y / POS_SCALE;
    f[3] = dh.cos();
    f[4] = dh.sin();
    f[5] = attrs.length / 5.0;
    f[6] = attrs.width / 2.0;
    f[match attrs.agent_type {
        AgentType::Vehicle => 7,
        AgentType::Pedestrian => 8,
        AgentType::Cyclist => 9,
    }] = 1.0;
    f[10] = 1.0;
    f
}

/// Lane chunk: midpoint pose and location-free features.
#[derive(Debug, Clone, PartialEq)]
pub struct MapChunk {
    pub position: Vec2,
    pub heading: f64,
    pub feats: [f64; MAP_FEATURES],
}

/// Splits every lane into chunks of at most `chunk_length` metres.
pub fn map_chunks(map: &Map, chunk_length: f64) -> Vec<MapChunk> {
    let mut out = Vec::new();
    for lane in &map.lanes {
        let g = lane.polyline();
        let len = g.length();
        if len <= 0.0 {
            continue;
        }
        let n = (len / chunk_length).ceil().max(1.0) as usize;
        let seg = len / n as f64;
        for k in 0..n {
            let (a, b) = (seg * k as f64, seg * (k + 1) as f64);
            let mid = 0.5 * (a + b);
            let turn = angle_diff(g.heading_at(b - 1e-6), g.heading_at(a + 1e-6));
            let mut feats = [0.0; MAP_FEATURES];
            feats[match lane.lane_type {
                LaneType::Driving => 0,
                LaneType::Biking => 1,
                LaneType::Walking => 2,
            }] = 1.0;
            feats[3] = seg / 20.0;
            feats[4] = 10.0 * turn / seg;
            feats[5] = lane.max_speed / 20.0;
            out.push(MapChunk {
                position: g.point_at(mid),
                heading: g.heading_at(mid),
                feats,
            });
        }
    }
    out
}

/// Builds the scene graph. Map chunks farther than every radius from every
/// agent are dropped.
pub fn build_scene_graph(chunks: &[MapChunk], agents: &[AgentHistory], cfg: &SceneConfig) -> Result<SceneGraph, PlannerError> {
    cfg.validate()?;
    if agents.is_empty() {
        return Err(PlannerError::NoAgents);
    }
    let th = cfg.history_steps;
    let mut cur = Vec::with_capacity(agents.len());
    for a in agents {
        if a.states.len() != th {
            return Err(PlannerError::Config(format!("agent {} has {} history steps, expected {th}", a.id, a.states.len())));
        }
        let c = a.current().ok_or_else(|| PlannerError::Config(format!("agent {} has no current state", a.id)))?;
        if !c.is_finite() {
            return Err(PlannerError::NonFiniteInput);
        }
        cur.push(c);
    }
    let n = agents.len();
    let mut agent_feats = Mat::zeros(n * th, AGENT_FEATURES);
    let mut temporal = Vec::new();
    for (a, h) in agents.iter().enumerate() {
        for (k, s) in h.states.iter().enumerate() {
            agent_feats.row_mut(a * th + k).copy_from_slice(&agent_features(&h.attributes, &cur[a], s.as_ref()));
            if s.is_some() {
                temporal.push((a * th + k, a, step_encoding(k as f64 - (th - 1) as f64).to_vec()));
            }
        }
    }

    let keep_r2 = cfg.max_radius().powi(2);
    let kept: Vec<&MapChunk> = chunks
        .iter()
        .filter(|c| cur.iter().any(|s| (c.position - s.position).norm_sq() <= keep_r2))
        .collect();
    let mut map_feats = Mat::zeros(kept.len(), MAP_FEATURES);
    for (i, c) in kept.iter().enumerate() {
        map_feats.row_mut(i).copy_from_slice(&c.feats);
    }

    let within = |p: Vec2, q: Vec2, r: f64| (p - q).norm_sq() <= r * r;
    let mut m2m = Vec::new();
    for (i, ci) in kept.iter().enumerate() {
        for (j, cj) in kept.iter().enumerate() {
            if i != j && within(ci.position, cj.position, cfg.m2m_radius) {
                m2m.push((j, i, edge_features(ci.position, ci.heading, cj.position, cj.heading).to_vec()));
            }
        }
    }
    let (mut pl2a, mut pl2m, mut a2a, mut a2m, mut plan_self) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (a, s) in cur.iter().enumerate() {
        for (j, c) in kept.iter().enumerate() {
            let f = || edge_features(s.position, s.heading, c.position, c.heading).to_vec();
            if within(s.position, c.position, cfg.pl2a_radius) {
                pl2a.push((j, a, f()));
            }
            if within(s.position, c.position, cfg.pl2m_radius) {
                pl2m.push((j, a, f()));
            }
        }
        for (b, o) in cur.iter().enumerate() {
            let f = || edge_features(s.position, s.heading, o.position, o.heading).to_vec();
            if a == b {
                plan_self.push((b, a, f()));
                continue;
            }
            if within(s.position, o.position, cfg.a2a_radius) {
                a2a.push((b, a, f()));
            }
            if within(s.position, o.position, cfg.a2m_radius) {
                a2m.push((b, a, f()));
                plan_self.push((b, a, f()));
            }
        }
    }
    Ok(SceneGraph {
        history_steps: th,
        agent_ids: agents.iter().map(|a| a.id).collect(),
        agent_states: cur,
        agent_attrs: agents.iter().map(|a| a.attributes).collect(),
        agent_feats,
        map_poses: kept.iter().map(|c| (c.position, c.heading)).collect(),
        map_feats,
        temporal: EdgeSet::from_list(temporal, POS_FEATURES),
        m2m: EdgeSet::from_list(m2m, EDGE_FEATURES),
        pl2a: EdgeSet::from_list(pl2a, EDGE_FEATURES),
        a2a: EdgeSet::from_list(a2a, EDGE_FEATURES),
        pl2m: EdgeSet::from_list(pl2m, EDGE_FEATURES),
        a2m: EdgeSet::from_list(a2m, EDGE_FEATURES),
        plan_self: EdgeSet::from_list(plan_self, EDGE_FEATURES),
    })
}

impl SceneGraph {
    pub fn agent_count(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn map_count(&self) -> usize {
        self.map_poses.len()
    }

    /// Disjoint union of several graphs, agents and map nodes in order.
    pub fn batch(graphs: &[&SceneGraph]) -> SceneGraph {
        assert!(!graphs.is_empty());
        let th = graphs[0].history_steps;
        assert!(graphs.iter().all(|g| g.history_steps == th));
        let (mut ao, mut mo) = (Vec::new(), Vec::new());
        let (mut na, mut nm) = (0, 0);
        for g in graphs {
            ao.push(na);
            mo.push(nm);
            na += g.agent_count();
            nm += g.map_count();
        }
        let cat = |f: &dyn Fn(&SceneGraph) -> &Mat| {
            let cols = f(graphs[0]).cols;
            let data: Vec<f64> = graphs.iter().flat_map(|g| f(g).data.iter().copied()).collect();
            Mat::from_vec(data.len() / cols.max(1), cols, data)
        };
        let edges = |f: &dyn Fn(&SceneGraph) -> &EdgeSet, src_map: bool, src_hist: bool, dst_map: bool| {
            let parts: Vec<(&EdgeSet, usize, usize)> = graphs
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let so = if src_map {
                        mo[i]
                    } else if src_hist {
                        ao[i] * th
                    } else {
                        ao[i]
                    };
                    (f(g), so, if dst_map { mo[i] } else { ao[i] })
                })
                .collect();
            EdgeSet::shifted(&parts)
        };
        SceneGraph {
            history_steps: th,
            agent_ids: graphs.iter().flat_map(|g| g.agent_ids.iter().copied()).collect(),
            agent_states: graphs.iter().flat_map(|g| g.agent_states.iter().copied()).collect(),
            agent_attrs: graphs.iter().flat_map(|g| g.agent_attrs.iter().copied()).collect(),
            agent_feats: cat(&|g| &g.agent_feats),
            map_poses: graphs.iter().flat_map(|g| g.map_poses.iter().copied()).collect(),
            map_feats: cat(&|g| &g.map_feats),
            temporal: edges(&|g| &g.temporal, false, true, false),
            m2m: edges(&|g| &g.m2m, true, false, true),
            pl2a: edges(&|g| &g.pl2a, true, false, false),
            a2a: edges(&|g| &g.a2a, false, false, false),
            pl2m: edges(&|g| &g.pl2m, true, false, false),
            a2m: edges(&|g| &g.a2m, false, false, false),
            plan_self: edges(&|g| &g.plan_self, false, false, false),
        }
    }
}
