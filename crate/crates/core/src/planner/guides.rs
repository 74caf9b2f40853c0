//! Guide cost library. Each cost is evaluated on the trajectory obtained by
//! integrating the denormalized plan, and its gradient is carried back
//! through the integration and normalization, so the sampler can ascend
//! `G = -Σ weight · cost` directly in normalized plan space.

use serde::{Deserialize, Serialize};

use crate::geometry::{closest_boundary_point, point_in_polygon, Vec2};
use crate::scenario::{AgentId, AgentState};

use super::autodiff::Mat;
use super::normalize::PlanNormalizer;
use super::sampler::{GuideObjective, GuideParams};
use super::PlannerError;

/// Smoothing of the speed magnitude in headway denominators.
const SPEED_EPS: f64 = 0.1;
/// Disc pairs farther apart than this (beyond the margin) contribute less
/// than 1e-13 and are skipped.
const DISC_CUTOFF: f64 = 30.0;

/// A target location for one agent, at one future tick or at every tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalTarget {
    pub agent: AgentId,
    pub position: Vec2,
    /// 1-based future tick; `None` applies the cost at every tick.
    #[serde(default)]
    pub tick: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuideKind {
    MaxAcceleration {
        max_accel: f64,
    },
    TargetVelocity {
        speed: f64,
    },
    TimeHeadway {
        headway: f64,
        /// Divide by the squared speed instead of the speed.
        #[serde(default)]
        squared_speed: bool,
    },
    RelativeDistance {
        distance: f64,
    },
    GoalPoint {
        goals: Vec<GoalTarget>,
    },
    NoCollision {
        margin: f64,
    },
    NoOffroad {
        margin: f64,
    },
    AdversarialApproach {
        target: AgentId,
    },
}

impl GuideKind {
    pub const NAMES: [&'static str; 8] = [
        "max_acceleration",
        "target_velocity",
        "time_headway",
        "relative_distance",
        "goal_point",
        "no_collision",
        "no_offroad",
        "adversarial_approach",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GuideKind::MaxAcceleration { .. } => "max_acceleration",
            GuideKind::TargetVelocity { .. } => "target_velocity",
            GuideKind::TimeHeadway { .. } => "time_headway",
            GuideKind::RelativeDistance { .. } => "relative_distance",
            GuideKind::GoalPoint { .. } => "goal_point",
            GuideKind::NoCollision { .. } => "no_collision",
            GuideKind::NoOffroad { .. } => "no_offroad",
            GuideKind::AdversarialApproach { .. } => "adversarial_approach",
        }
    }
}

/// One weighted cost. `agents` restricts the cost to the listed agents
/// (empty: every planned agent); goal targets name their own agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideTerm {
    #[serde(flatten)]
    pub kind: GuideKind,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub agents: Vec<AgentId>,
}

fn one() -> f64 {
    1.0
}

impl GuideTerm {
    pub fn new(kind: GuideKind, weight: f64) -> Self {
        GuideTerm {
            kind,
            weight,
            agents: Vec::new(),
        }
    }

    pub fn for_agents(mut self, agents: Vec<AgentId>) -> Self {
        self.agents = agents;
        self
    }
}

/// Cost terms plus the sampler's guidance parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideSpec {
    #[serde(default)]
    pub terms: Vec<GuideTerm>,
    #[serde(default)]
    pub params: GuideParams,
}

impl GuideSpec {
    pub fn is_active(&self) -> bool {
        !self.terms.is_empty() && self.params.steps > 0
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        self.params.validate()?;
        for t in &self.terms {
            if !(t.weight >= 0.0 && t.weight.is_finite()) {
                return Err(PlannerError::Config(format!("guide {} has invalid weight {}", t.kind.name(), t.weight)));
            }
            let bad = match &t.kind {
                GuideKind::MaxAcceleration { max_accel } => !(*max_accel >= 0.0),
                GuideKind::TargetVelocity { speed } => !speed.is_finite(),
                GuideKind::TimeHeadway { headway, .. } => !(*headway >= 0.0),
                GuideKind::RelativeDistance { distance } => !(*distance >= 0.0),
                GuideKind::GoalPoint { goals } => goals.iter().any(|g| !g.position.is_finite() || g.tick == Some(0)),
                GuideKind::NoCollision { margin } | GuideKind::NoOffroad { margin } => !margin.is_finite(),
                GuideKind::AdversarialApproach { .. } => false,
            };
            if bad {
                return Err(PlannerError::Config(format!("guide {} has invalid parameters", t.kind.name())));
            }
        }
        Ok(())
    }
}

/// Planned agent as seen by the guides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuideAgent {
    pub id: AgentId,
    pub start: AgentState,
    pub length: f64,
    pub width: f64,
}

/// Everything the costs need besides the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideScene {
    pub tick: f64,
    pub agents: Vec<GuideAgent>,
    /// Drivable-area polygons; off-road costs vanish without them.
    pub boundaries: Vec<Vec<Vec2>>,
    pub norm: PlanNormalizer,
}

impl GuideScene {
    pub fn row_of(&self, id: AgentId) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }
}

/// Physical trajectory of every planned agent.
struct Phys {
    v: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    /// `p[a][0]` is the start; `p[a][t + 1]` follows plan tick `t`.
    p: Vec<Vec<Vec2>>,
}

struct PhysGrad {
    v: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    p: Vec<Vec<Vec2>>,
}

impl PhysGrad {
    fn zeros(a: usize, t: usize) -> Self {
        PhysGrad {
            v: vec![vec![0.0; t]; a],
            h: vec![vec![0.0; t]; a],
            p: vec![vec![Vec2::default(); t + 1]; a],
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Resolved follower pair at one tick: `follower` is behind `leader`.
struct Pair {
    follower: usize,
    leader: usize,
}

/// Guide objective over a normalized plan for a fixed scene.
pub struct PlanGuide<'a> {
    pub scene: &'a GuideScene,
    pub terms: &'a [GuideTerm],
}

impl<'a> PlanGuide<'a> {
    pub fn new(scene: &'a GuideScene, spec: &'a GuideSpec) -> Self {
        PlanGuide {
            scene,
            terms: &spec.terms,
        }
    }

    fn phys(&self, x: &Mat) -> Phys {
        let s = self.scene;
        let steps = x.cols / 2;
        let (mut v, mut h, mut p) = (Vec::new(), Vec::new(), Vec::new());
        for (a, ag) in s.agents.iter().enumerate() {
            let row = s.norm.denormalize_row(x.row(a));
            let va: Vec<f64> = row.iter().step_by(2).copied().collect();
            let ha: Vec<f64> = row.iter().skip(1).step_by(2).map(|d| ag.start.heading + d).collect();
            let mut pa = Vec::with_capacity(steps + 1);
            let mut cur = ag.start.position;
            pa.push(cur);
            for t in 0..steps {
                cur += Vec2::from_heading(ha[t]) * (va[t] * s.tick);
                pa.push(cur);
            }
            v.push(va);
            h.push(ha);
            p.push(pa);
        }
        Phys { v, h, p }
    }

    fn selected(&self, term: &GuideTerm) -> Vec<bool> {
        let s = self.scene;
        if term.agents.is_empty() {
            vec![true; s.agents.len()]
        } else {
            s.agents.iter().map(|a| term.agents.contains(&a.id)).collect()
        }
    }

    /// Follower pairs at plan tick `t`: the nearest agent ahead of each
    /// follower within its lateral corridor.
    fn pairs(&self, ph: &Phys, t: usize, followers: &[bool]) -> Vec<Pair> {
        let s = self.scene;
        let mut out = Vec::new();
        for j in 0..s.agents.len() {
            if !followers[j] {
                continue;
            }
            let u = Vec2::from_heading(ph.h[j][t]);
            let mut best: Option<(f64, usize)> = None;
            for i in 0..s.agents.len() {
                if i == j {
                    continue;
                }
                let rel = ph.p[i][t + 1] - ph.p[j][t + 1];
                let along = rel.dot(u);
                let lateral = rel.cross(u).abs();
                if along > 0.0 && lateral <= 0.5 * (s.agents[i].width + s.agents[j].width) && best.is_none_or(|(b, _)| along < b) {
                    best = Some((along, i));
                }
            }
            if let Some((_, i)) = best {
                out.push(Pair { follower: j, leader: i });
            }
        }
        out
    }

    fn term_cost(&self, term: &GuideTerm, ph: &Phys, g: &mut PhysGrad, w: f64) -> f64 {
        let s = self.scene;
        let dt = s.tick;
        let n = s.agents.len();
        let steps = ph.v.first().map_or(0, Vec::len);
        let sel = self.selected(term);
        let mut cost = 0.0;
        match &term.kind {
            GuideKind::MaxAcceleration { max_accel } => {
                for a in (0..n).filter(|&a| sel[a]) {
                    for t in 0..steps {
                        let prev = if t == 0 { s.agents[a].start.speed } else { ph.v[a][t - 1] };
                        let acc = (ph.v[a][t] - prev) / dt;
                        let ex = acc.abs() - max_accel;
                        if ex > 0.0 {
                            cost += ex;
                            let d = w * acc.signum() / dt;
                            g.v[a][t] += d;
                            if t > 0 {
                                g.v[a][t - 1] -= d;
                            }
                        }
                    }
                }
            }
            GuideKind::TargetVelocity { speed } => {
                for a in (0..n).filter(|&a| sel[a]) {
                    for t in 0..steps {
                        let e = ph.v[a][t] - speed;
                        cost += e * e;
                        g.v[a][t] += w * 2.0 * e;
                    }
                }
            }
            GuideKind::TimeHeadway { headway, squared_speed } => {
                for t in 0..steps {
                    for pr in self.pairs(ph, t, &sel) {
                        let (i, j) = (pr.leader, pr.follower);
                        let rel = ph.p[i][t + 1] - ph.p[j][t + 1];
                        let dis = rel.norm();
                        let v = ph.v[j][t];
                        let (q, dq_dv) = if *squared_speed {
                            let den = v * v + SPEED_EPS * SPEED_EPS;
                            (1.0 / den, -2.0 * v / (den * den))
                        } else {
                            let den = (v * v + SPEED_EPS * SPEED_EPS).sqrt();
                            (1.0 / den, -v / (den * den * den))
                        };
                        let r = dis * q - headway;
                        cost += r.abs();
                        let sg = w * r.signum();
                        if dis > 0.0 {
                            let dp = rel * (sg * q / dis);
                            g.p[i][t + 1] += dp;
                            g.p[j][t + 1] += -dp;
                        }
                        g.v[j][t] += sg * dis * dq_dv;
                    }
                }
            }
            GuideKind::RelativeDistance { distance } => {
                for t in 0..steps {
                    for pr in self.pairs(ph, t, &sel) {
                        let (i, j) = (pr.leader, pr.follower);
                        let rel = ph.p[i][t + 1] - ph.p[j][t + 1];
                        let dis = rel.norm();
                        let r = dis - distance;
                        cost += r.abs();
                        if dis > 0.0 {
                            let dp = rel * (w * r.signum() / dis);
                            g.p[i][t + 1] += dp;
                            g.p[j][t + 1] += -dp;
                        }
                    }
                }
            }
            GuideKind::GoalPoint { goals } => {
                for goal in goals {
                    let Some(a) = s.row_of(goal.agent) else { continue };
                    let ticks = match goal.tick {
                        Some(k) => k.min(steps)..k.min(steps) + 1,
                        None => 1..steps + 1,
                    };
                    for k in ticks {
                        let e = ph.p[a][k] - goal.position;
                        cost += e.norm_sq();
                        g.p[a][k] += e * (2.0 * w);
                    }
                }
            }
            GuideKind::AdversarialApproach { target } => {
                if let Some(b) = s.row_of(*target) {
                    for a in (0..n).filter(|&a| sel[a] && a != b) {
                        for k in 1..=steps {
                            let e = ph.p[a][k] - ph.p[b][k];
                            cost += e.norm_sq();
                            g.p[a][k] += e * (2.0 * w);
                            g.p[b][k] += e * (-2.0 * w);
                        }
                    }
                }
            }
            GuideKind::NoCollision { margin } => {
                let discs: Vec<(Vec<f64>, f64)> = s.agents.iter().map(|a| disc_cover(a.length, a.width)).collect();
                for a in 0..n {
                    for b in a + 1..n {
                        if !(sel[a] || sel[b]) {
                            continue;
                        }
                        for t in 0..steps {
                            let (ua, ub) = (Vec2::from_heading(ph.h[a][t]), Vec2::from_heading(ph.h[b][t]));
                            let (pa, pb) = (ph.p[a][t + 1], ph.p[b][t + 1]);
                            let reach = s.agents[a].length + s.agents[b].length;
                            if pa.distance(pb) > reach + margin.max(0.0) + DISC_CUTOFF {
                                continue;
                            }
                            for &oa in &discs[a].0 {
                                for &ob in &discs[b].0 {
                                    let ca = pa + ua * oa;
                                    let cb = pb + ub * ob;
                                    let rel = ca - cb;
                                    let dist = rel.norm();
                                    let gap = dist - discs[a].1 - discs[b].1;
                                    cost += softplus(margin - gap);
                                    if dist > 1e-12 {
                                        let dir = rel * (-w * sigmoid(margin - gap) / dist);
                                        g.p[a][t + 1] += dir;
                                        g.p[b][t + 1] += -dir;
                                        g.h[a][t] += dir.dot(ua.perp()) * oa;
                                        g.h[b][t] -= dir.dot(ub.perp()) * ob;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            GuideKind::NoOffroad { margin } => {
                if s.boundaries.is_empty() {
                    return 0.0;
                }
                for a in (0..n).filter(|&a| sel[a]) {
                    for k in 1..=steps {
                        let p = ph.p[a][k];
                        let (sd, grad) = union_signed_distance(p, &s.boundaries);
                        cost += softplus(sd + margin);
                        g.p[a][k] += grad * (w * sigmoid(sd + margin));
                    }
                }
            }
        }
        cost
    }

    /// Weighted total cost and its gradient with respect to the normalized
    /// plan.
    pub fn cost_and_grad(&self, x: &Mat) -> (f64, Mat) {
        let s = self.scene;
        let steps = x.cols / 2;
        let ph = self.phys(x);
        let mut g = PhysGrad::zeros(s.agents.len(), steps);
        let mut total = 0.0;
        for term in self.terms {
            if term.weight == 0.0 {
                continue;
            }
            total += term.weight * self.term_cost(term, &ph, &mut g, term.weight);
        }
        // back through the integration: p_k = p_0 + Σ_{t<k} v_t u(h_t) dt
        let (ks, kh) = s.norm.scales();
        let mut out = Mat::zeros(x.rows, x.cols);
        for a in 0..s.agents.len() {
            let mut acc = Vec2::default();
            for t in (0..steps).rev() {
                acc += g.p[a][t + 1];
                let u = Vec2::from_heading(ph.h[a][t]);
                let gv = g.v[a][t] + s.tick * u.dot(acc);
                let gh = g.h[a][t] + s.tick * ph.v[a][t] * u.perp().dot(acc);
                out.set(a, 2 * t, gv * ks);
                out.set(a, 2 * t + 1, gh * kh);
            }
        }
        (total, out)
    }
}

impl GuideObjective for PlanGuide<'_> {
    fn value_and_grad(&self, x: &Mat) -> (f64, Mat) {
        let (c, g) = self.cost_and_grad(x);
        (-c, g.scaled(-1.0))
    }
}

/// Disc offsets along the heading and the common radius covering a
/// `length x width` box.
fn disc_cover(length: f64, width: f64) -> (Vec<f64>, f64) {
    let n = (length / width.max(1e-6)).round().max(1.0) as usize;
    let seg = length / n as f64;
    let offsets = (0..n).map(|k| -0.5 * length + seg * (k as f64 + 0.5)).collect();
    (offsets, ((0.5 * seg).powi(2) + (0.5 * width).powi(2)).sqrt())
}

/// Minimum signed distance over the polygons (negative inside) and its
/// gradient.
fn union_signed_distance(p: Vec2, polygons: &[Vec<Vec2>]) -> (f64, Vec2) {
    let mut best = (f64::INFINITY, Vec2::default());
    for poly in polygons {
        let q = closest_boundary_point(p, poly);
        let rel = p - q;
        let d = rel.norm();
        let inside = point_in_polygon(p, poly);
        let sd = if inside { -d } else { d };
        if sd < best.0 {
            let dir = if d > 0.0 { rel * (1.0 / d) } else { Vec2::default() };
            best = (sd, if inside { -dir } else { dir });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene() -> GuideScene {
        let mk = |id, x: f64, y: f64, v, h| GuideAgent {
            id: AgentId(id),
            start: AgentState::new(Vec2::new(x, y), v, h),
            length: 4.5,
            width: 2.0,
        };
        GuideScene {
            tick: 0.1,
            agents: vec![mk(1, 0.0, 0.0, 8.0, 0.0), mk(2, 12.0, 0.4, 6.0, 0.05), mk(3, 5.0, 3.0, 7.0, -0.1)],
            boundaries: vec![vec![
                Vec2::new(-10.0, -2.0),
                Vec2::new(60.0, -2.0),
                Vec2::new(60.0, 5.0),
                Vec2::new(-10.0, 5.0),
            ]],
            norm: PlanNormalizer {
                speed_mean: 7.0,
                speed_std: 2.0,
                heading_mean: 0.0,
                heading_std: 0.1,
                sigma_data: 0.1,
            },
        }
    }

    fn all_kinds() -> Vec<GuideKind> {
        vec![
            GuideKind::MaxAcceleration { max_accel: 1.0 },
            GuideKind::TargetVelocity { speed: 9.0 },
            GuideKind::TimeHeadway {
                headway: 1.0,
                squared_speed: false,
            },
            GuideKind::TimeHeadway {
                headway: 1.0,
                squared_speed: true,
            },
            GuideKind::RelativeDistance { distance: 6.0 },
            GuideKind::GoalPoint {
                goals: vec![
                    GoalTarget {
                        agent: AgentId(1),
                        position: Vec2::new(20.0, 3.0),
                        tick: None,
                    },
                    GoalTarget {
                        agent: AgentId(3),
                        position: Vec2::new(8.0, 0.0),
                        tick: Some(4),
                    },
                ],
            },
            GuideKind::NoCollision { margin: 0.5 },
            GuideKind::NoOffroad { margin: 0.5 },
            GuideKind::AdversarialApproach { target: AgentId(2) },
        ]
    }

    #[test]
    fn every_kind_matches_finite_differences() {
        let sc = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in all_kinds() {
            let spec = GuideSpec {
                terms: vec![GuideTerm::new(kind.clone(), 1.3)],
                params: GuideParams::default(),
            };
            let guide = PlanGuide::new(&sc, &spec);
            for _ in 0..5 {
                let x = Mat::from_vec(3, 12, (0..36).map(|_| rng.random_range(-0.15..0.15)).collect());
                let (c, g) = guide.cost_and_grad(&x);
                assert!(c >= 0.0);
                let h = 1e-6;
                let mut fd = Mat::zeros(3, 12);
                for k in 0..36 {
                    let (mut up, mut dn) = (x.clone(), x.clone());
                    up.data[k] += h;
                    dn.data[k] -= h;
                    fd.data[k] = (guide.cost_and_grad(&up).0 - guide.cost_and_grad(&dn).0) / (2.0 * h);
                }
                let err = fd.zip(&g, |a, b| a - b).sum_sq().sqrt();
                let scale = g.sum_sq().sqrt().max(1e-9);
                assert!(err / scale < 1e-4 || err < 1e-9, "{}: rel err {}", kind.name(), err / scale);
            }
        }
    }

    #[test]
    fn zero_costs() {
        let sc = scene();
        // every agent at the target speed, straight
        let mut x = Mat::zeros(3, 8);
        for a in 0..3 {
            for t in 0..4 {
                let (nv, nh) = sc.norm.normalize(9.0, 0.0);
                x.set(a, 2 * t, nv);
                x.set(a, 2 * t + 1, nh);
            }
        }
        let spec = GuideSpec {
            terms: vec![GuideTerm::new(GuideKind::TargetVelocity { speed: 9.0 }, 1.0)],
            ..GuideSpec::default()
        };
        let (c, g) = PlanGuide::new(&sc, &spec).cost_and_grad(&x);
        assert_eq!(c, 0.0);
        assert!(g.data.iter().all(|v| *v == 0.0));
        // gentle plan: within the acceleration bound
        let spec = GuideSpec {
            terms: vec![GuideTerm::new(GuideKind::MaxAcceleration { max_accel: 100.0 }, 1.0)],
            ..GuideSpec::default()
        };
        assert_eq!(PlanGuide::new(&sc, &spec).cost_and_grad(&x).0, 0.0);
    }

    #[test]
    fn guide_objective_is_negated_cost() {
        let sc = scene();
        let spec = GuideSpec {
            terms: vec![GuideTerm::new(GuideKind::TargetVelocity { speed: 3.0 }, 2.0)],
            ..GuideSpec::default()
        };
        let g = PlanGuide::new(&sc, &spec);
        let x = Mat::filled(3, 4, 0.05);
        let (c, gc) = g.cost_and_grad(&x);
        let (v, gv) = g.value_and_grad(&x);
        assert_eq!(v, -c);
        assert_eq!(gv, gc.scaled(-1.0));
    }

    #[test]
    fn agent_filter_restricts_cost() {
        let sc = scene();
        let term = GuideTerm::new(GuideKind::TargetVelocity { speed: 20.0 }, 1.0).for_agents(vec![AgentId(2)]);
        let spec = GuideSpec {
            terms: vec![term],
            ..GuideSpec::default()
        };
        let (_, g) = PlanGuide::new(&sc, &spec).cost_and_grad(&Mat::zeros(3, 4));
        assert!(g.row(0).iter().chain(g.row(2)).all(|v| *v == 0.0));
        assert!(g.row(1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn spec_validation_and_serde() {
        let mut spec = GuideSpec {
            terms: vec![GuideTerm::new(GuideKind::NoCollision { margin: 0.5 }, 1.0)],
            params: GuideParams::default(),
        };
        spec.validate().unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"no_collision\""));
        assert_eq!(serde_json::from_str::<GuideSpec>(&text).unwrap(), spec);
        assert!(serde_json::from_str::<GuideTerm>(r#"{"kind":"warp_drive","weight":1}"#).is_err());
        spec.terms[0].weight = -1.0;
        assert!(spec.validate().is_err());
        spec.terms[0].weight = 1.0;
        spec.params.beta = 0.0;
        assert!(spec.validate().is_err());
    }
}
