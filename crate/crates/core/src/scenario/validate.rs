use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{AgentId, ContainerId, LaneId, Scenario};
use crate::geometry::{is_simple_polygon, normalize_angle};

/// Which scenario element a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum ElementRef {
    Lane(LaneId),
    Road(ContainerId),
    Junction(ContainerId),
    Agent(AgentId),
    Scenario,
}

impl fmt::Display for ElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementRef::Lane(id) => write!(f, "lane {id}"),
            ElementRef::Road(id) => write!(f, "road {id}"),
            ElementRef::Junction(id) => write!(f, "junction {id}"),
            ElementRef::Agent(id) => write!(f, "agent {id}"),
            ElementRef::Scenario => write!(f, "scenario"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    DuplicateId,
    CenterlineTooShort,
    RepeatedPoint,
    NonFinite,
    DanglingPredecessor,
    DanglingSuccessor,
    DanglingNeighbor,
    NeighborParentMismatch,
    NonPositiveSpeedLimit,
    NonPositiveWidth,
    MissingParent,
    MultipleParents,
    ParentMismatch,
    DanglingLane,
    BoundaryNotSimple,
    NonPositivePhaseDuration,
    PhaseLengthMismatch,
    SignalLaneOutsideJunction,
    NonPositiveShape,
    RouteTimeNotIncreasing,
    NegativeSpeed,
    HeadingNotNormalized,
    WaypointsOutOfOrder,
    NonPositiveTick,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::DuplicateId => "duplicate-id",
            Rule::CenterlineTooShort => "centerline-too-short",
            Rule::RepeatedPoint => "repeated-point",
            Rule::NonFinite => "non-finite",
            Rule::DanglingPredecessor => "dangling-predecessor",
            Rule::DanglingSuccessor => "dangling-successor",
            Rule::DanglingNeighbor => "dangling-neighbor",
            Rule::NeighborParentMismatch => "neighbor-parent-mismatch",
            Rule::NonPositiveSpeedLimit => "non-positive-speed-limit",
            Rule::NonPositiveWidth => "non-positive-width",
            Rule::MissingParent => "missing-parent",
            Rule::MultipleParents => "multiple-parents",
            Rule::ParentMismatch => "parent-mismatch",
            Rule::DanglingLane => "dangling-lane",
            Rule::BoundaryNotSimple => "boundary-not-simple",
            Rule::NonPositivePhaseDuration => "non-positive-phase-duration",
            Rule::PhaseLengthMismatch => "phase-length-mismatch",
            Rule::SignalLaneOutsideJunction => "signal-lane-outside-junction",
            Rule::NonPositiveShape => "non-positive-shape",
            Rule::RouteTimeNotIncreasing => "route-time-not-increasing",
            Rule::NegativeSpeed => "negative-speed",
            Rule::HeadingNotNormalized => "heading-not-normalized",
            Rule::WaypointsOutOfOrder => "waypoints-out-of-order",
            Rule::NonPositiveTick => "non-positive-tick",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A broken scenario invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub element: ElementRef,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.rule)
    }
}

/// Checks every scenario invariant; an empty result means the scenario is
/// well formed. Violations are sorted and deduplicated.
pub fn validate(scenario: &Scenario) -> Vec<Violation> {
    let mut out = BTreeSet::new();
    let mut push = |element, rule| {
        out.insert(Violation { element, rule });
    };
    let map = &scenario.map;

    if !(scenario.tick > 0.0) || !scenario.tick.is_finite() {
        push(ElementRef::Scenario, Rule::NonPositiveTick);
    }

    let mut lanes: BTreeMap<LaneId, usize> = BTreeMap::new();
    for (i, lane) in map.lanes.iter().enumerate() {
        if lanes.insert(lane.id, i).is_some() {
            push(ElementRef::Lane(lane.id), Rule::DuplicateId);
        }
    }

    let mut containers: BTreeMap<ContainerId, ElementRef> = BTreeMap::new();
    for r in &map.roads {
        if containers.insert(r.id, ElementRef::Road(r.id)).is_some() {
            push(ElementRef::Road(r.id), Rule::DuplicateId);
        }
    }
    for j in &map.junctions {
        if containers.insert(j.id, ElementRef::Junction(j.id)).is_some() {
            push(ElementRef::Junction(j.id), Rule::DuplicateId);
        }
    }

    // which containers list each lane
    let mut listed_in: BTreeMap<LaneId, Vec<ContainerId>> = BTreeMap::new();
    let container_lists = map
        .roads
        .iter()
        .map(|r| (ElementRef::Road(r.id), r.id, &r.lane_ids, &r.boundary))
        .chain(
            map.junctions
                .iter()
                .map(|j| (ElementRef::Junction(j.id), j.id, &j.lane_ids, &j.boundary)),
        );
    for (element, cid, lane_ids, boundary) in container_lists {
        if !is_simple_polygon(boundary) {
            push(element, Rule::BoundaryNotSimple);
        }
        if boundary.iter().any(|p| !p.is_finite()) {
            push(element, Rule::NonFinite);
        }
        let mut seen = BTreeSet::new();
        for lid in lane_ids {
            if !lanes.contains_key(lid) {
                push(element, Rule::DanglingLane);
                continue;
            }
            if seen.insert(*lid) {
                listed_in.entry(*lid).or_default().push(cid);
            }
        }
    }

    for lane in &map.lanes {
        let me = ElementRef::Lane(lane.id);
        if lane.centerline.len() < 2 {
            push(me, Rule::CenterlineTooShort);
        }
        if lane.centerline.windows(2).any(|w| w[0] == w[1]) {
            push(me, Rule::RepeatedPoint);
        }
        if lane.centerline.iter().any(|p| !p.is_finite()) {
            push(me, Rule::NonFinite);
        }
        if lane.predecessors.iter().any(|id| !lanes.contains_key(id)) {
            push(me, Rule::DanglingPredecessor);
        }
        if lane.successors.iter().any(|id| !lanes.contains_key(id)) {
            push(me, Rule::DanglingSuccessor);
        }
        for nb in [lane.left_neighbor, lane.right_neighbor].into_iter().flatten() {
            match lanes.get(&nb) {
                None => push(me, Rule::DanglingNeighbor),
                Some(&k) if map.lanes[k].parent != lane.parent => {
                    push(me, Rule::NeighborParentMismatch)
                }
                _ => {}
            }
        }
        if !(lane.max_speed > 0.0) || !lane.max_speed.is_finite() {
            push(me, Rule::NonPositiveSpeedLimit);
        }
        if !(lane.width > 0.0) || !lane.width.is_finite() {
            push(me, Rule::NonPositiveWidth);
        }
        if !containers.contains_key(&lane.parent) {
            push(me, Rule::MissingParent);
        }
        match listed_in.get(&lane.id).map(Vec::as_slice) {
            None | Some([]) => push(me, Rule::MissingParent),
            Some([only]) => {
                if *only != lane.parent {
                    push(me, Rule::ParentMismatch);
                }
            }
            Some(_) => push(me, Rule::MultipleParents),
        }
    }

    for j in &map.junctions {
        let me = ElementRef::Junction(j.id);
        let own: BTreeSet<LaneId> = j.lane_ids.iter().copied().collect();
        for prog in &j.traffic_lights {
            if prog.controlled_lane_ids.iter().any(|l| !own.contains(l)) {
                push(me, Rule::SignalLaneOutsideJunction);
            }
            for phase in &prog.phases {
                if !(phase.duration > 0.0) || !phase.duration.is_finite() {
                    push(me, Rule::NonPositivePhaseDuration);
                }
                if phase.states.len() != prog.controlled_lane_ids.len() {
                    push(me, Rule::PhaseLengthMismatch);
                }
            }
        }
    }

    let mut agent_ids = BTreeSet::new();
    for agent in &scenario.agents {
        let me = ElementRef::Agent(agent.id);
        if !agent_ids.insert(agent.id) {
            push(me, Rule::DuplicateId);
        }
        let a = &agent.attributes;
        if !(a.length > 0.0) || !(a.width > 0.0) || !a.length.is_finite() || !a.width.is_finite() {
            push(me, Rule::NonPositiveShape);
        }
        for sched in &agent.schedules {
            if !sched.departure_time.is_finite() {
                push(me, Rule::NonFinite);
            }
            let route = &sched.reference_route;
            if route.windows(2).any(|w| !(w[1].t > w[0].t)) {
                push(me, Rule::RouteTimeNotIncreasing);
            }
            for p in route {
                if !p.state.is_finite() || !p.t.is_finite() {
                    push(me, Rule::NonFinite);
                } else {
                    if p.state.speed < 0.0 {
                        push(me, Rule::NegativeSpeed);
                    }
                    if normalize_angle(p.state.heading) != p.state.heading {
                        push(me, Rule::HeadingNotNormalized);
                    }
                }
            }
            if sched
                .waypoints
                .windows(2)
                .any(|w| !(w[1].arrival_time >= w[0].arrival_time))
            {
                push(me, Rule::WaypointsOutOfOrder);
            }
            if sched
                .waypoints
                .iter()
                .any(|w| !w.position.is_finite() || !w.arrival_time.is_finite())
            {
                push(me, Rule::NonFinite);
            }
        }
    }

    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::scenario::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vec2> {
        vec![
            Vec2::new(x0, y0),
            Vec2::new(x1, y0),
            Vec2::new(x1, y1),
            Vec2::new(x0, y1),
        ]
    }

    fn lane(id: u64, y: f64, parent: u64) -> Lane {
        Lane {
            id: LaneId(id),
            lane_type: LaneType::Driving,
            centerline: vec![Vec2::new(0.0, y), Vec2::new(100.0, y)],
            predecessors: vec![],
            successors: vec![],
            left_neighbor: None,
            right_neighbor: None,
            parent: ContainerId(parent),
            max_speed: 13.9,
            width: 3.5,
        }
    }

    pub(crate) fn two_lane_map() -> Map {
        let mut a = lane(3, -1.75, 100);
        let mut b = lane(7, -5.25, 100);
        a.right_neighbor = Some(LaneId(7));
        b.left_neighbor = Some(LaneId(3));
        Map {
            lanes: vec![a, b],
            roads: vec![Road {
                id: ContainerId(100),
                lane_ids: vec![LaneId(3), LaneId(7)],
                boundary: rect(0.0, -7.0, 100.0, 0.0),
            }],
            junctions: vec![],
        }
    }

    #[test]
    fn clean_two_lane_map() {
        let s = Scenario::new(two_lane_map(), vec![]);
        assert_eq!(validate(&s), vec![]);
    }

    #[test]
    fn dangling_successor() {
        let mut map = two_lane_map();
        map.lanes[1].successors.push(LaneId(999));
        let v = validate(&Scenario::new(map, vec![]));
        assert_eq!(
            v,
            vec![Violation {
                element: ElementRef::Lane(LaneId(7)),
                rule: Rule::DanglingSuccessor
            }]
        );
        assert_eq!(v[0].to_string(), "lane 7: dangling-successor");
    }

    #[test]
    fn lane_in_two_roads() {
        let mut map = two_lane_map();
        map.roads.push(Road {
            id: ContainerId(101),
            lane_ids: vec![LaneId(3)],
            boundary: rect(0.0, 0.0, 100.0, 7.0),
        });
        let v = validate(&Scenario::new(map, vec![]));
        assert_eq!(
            v,
            vec![Violation {
                element: ElementRef::Lane(LaneId(3)),
                rule: Rule::MultipleParents
            }]
        );
    }

    #[test]
    fn signal_and_agent_rules() {
        let mut map = two_lane_map();
        map.junctions.push(Junction {
            id: ContainerId(200),
            lane_ids: vec![],
            boundary: rect(100.0, -7.0, 110.0, 0.0),
            traffic_lights: vec![SignalProgram {
                controlled_lane_ids: vec![LaneId(3)],
                phases: vec![SignalPhase {
                    duration: 0.0,
                    states: vec![],
                }],
            }],
        });
        let agents = vec![Agent {
            id: AgentId(1),
            attributes: AgentAttributes::vehicle(0.0, 2.0),
            schedules: vec![Schedule {
                departure_time: 0.0,
                reference_route: vec![
                    RoutePoint {
                        t: 0.1,
                        state: AgentState::new(Vec2::ZERO, -1.0, 0.0),
                    },
                    RoutePoint {
                        t: 0.1,
                        state: AgentState::new(Vec2::ZERO, 1.0, 4.0),
                    },
                ],
                waypoints: vec![],
            }],
        }];
        let rules: Vec<Rule> = validate(&Scenario::new(map, agents))
            .into_iter()
            .map(|v| v.rule)
            .collect();
        for r in [
            Rule::SignalLaneOutsideJunction,
            Rule::NonPositivePhaseDuration,
            Rule::PhaseLengthMismatch,
            Rule::NonPositiveShape,
            Rule::RouteTimeNotIncreasing,
            Rule::NegativeSpeed,
            Rule::HeadingNotNormalized,
        ] {
            assert!(rules.contains(&r), "missing {r}");
        }
    }
}
