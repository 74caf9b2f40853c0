use std::collections::{BTreeMap, HashMap};

use crate::geometry::{angle_diff, point_in_polygon, Polyline, Vec2};
use crate::scenario::{AgentState, LaneId, LaneType, LightState, Map};

/// Lateral slack added to half the lane width for lane association, meters.
pub const LANE_TOLERANCE: f64 = 0.5;

const GRID_CELL: f64 = 25.0;

/// Precomputed lane geometry with dense indices.
#[derive(Debug, Clone)]
pub struct LaneGeom {
    pub id: LaneId,
    pub lane_type: LaneType,
    pub polyline: Polyline,
    pub width: f64,
    pub max_speed: f64,
    pub successors: Vec<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Whether a signal program controls this lane.
    pub controlled: bool,
}

impl LaneGeom {
    pub fn length(&self) -> f64 {
        self.polyline.length()
    }
}

#[derive(Debug, Clone)]
struct Area {
    polygon: Vec<Vec2>,
    min: Vec2,
    max: Vec2,
}

/// Read-only spatial index over a map: lane lookup and drivable area.
#[derive(Debug, Clone)]
pub struct MapIndex {
    lanes: Vec<LaneGeom>,
    by_id: BTreeMap<LaneId, usize>,
    grid: HashMap<(i64, i64), Vec<usize>>,
    areas: Vec<Area>,
}

fn cell_of(p: Vec2) -> (i64, i64) {
    ((p.x / GRID_CELL).floor() as i64, (p.y / GRID_CELL).floor() as i64)
}

impl MapIndex {
    pub fn new(map: &Map) -> Self {
        let by_id: BTreeMap<LaneId, usize> = map.lane_index();
        let controlled: std::collections::BTreeSet<LaneId> = map
            .junctions
            .iter()
            .flat_map(|j| j.traffic_lights.iter())
            .flat_map(|p| p.controlled_lane_ids.iter().copied())
            .collect();
        let resolve = |ids: &[LaneId]| -> Vec<usize> {
            let mut v: Vec<usize> = ids.iter().filter_map(|i| by_id.get(i).copied()).collect();
            v.sort_by_key(|&i| map.lanes[i].id);
            v
        };
        let lanes: Vec<LaneGeom> = map
            .lanes
            .iter()
            .map(|l| LaneGeom {
                id: l.id,
                lane_type: l.lane_type,
                polyline: l.polyline(),
                width: l.width,
                max_speed: l.max_speed,
                successors: resolve(&l.successors),
                left: l.left_neighbor.and_then(|i| by_id.get(&i).copied()),
                right: l.right_neighbor.and_then(|i| by_id.get(&i).copied()),
                controlled: controlled.contains(&l.id),
            })
            .collect();

        // register every lane in each cell its segments' padded boxes touch
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, lane) in lanes.iter().enumerate() {
            let pad = lane.width / 2.0 + LANE_TOLERANCE;
            for w in lane.polyline.points().windows(2) {
                let lo = cell_of(Vec2::new(w[0].x.min(w[1].x) - pad, w[0].y.min(w[1].y) - pad));
                let hi = cell_of(Vec2::new(w[0].x.max(w[1].x) + pad, w[0].y.max(w[1].y) + pad));
                for gx in lo.0..=hi.0 {
                    for gy in lo.1..=hi.1 {
                        let v = grid.entry((gx, gy)).or_default();
                        if v.last() != Some(&i) {
                            v.push(i);
                        }
                    }
                }
            }
        }
        for v in grid.values_mut() {
            v.sort_unstable();
            v.dedup();
        }

        let areas = map
            .boundaries()
            .filter(|b| b.len() >= 3)
            .map(|b| {
                let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
                let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
                for p in b {
                    min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
                    max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
                }
                Area {
                    polygon: b.to_vec(),
                    min,
                    max,
                }
            })
            .collect();

        MapIndex {
            lanes,
            by_id,
            grid,
            areas,
        }
    }

    pub fn lanes(&self) -> &[LaneGeom] {
        &self.lanes
    }

    pub fn lane(&self, idx: usize) -> &LaneGeom {
        &self.lanes[idx]
    }

    pub fn index_of(&self, id: LaneId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    /// Lanes whose padded geometry touches the cell containing `p`.
    pub fn candidate_lanes(&self, p: Vec2) -> &[usize] {
        self.grid.get(&cell_of(p)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Driving lane associated with a pose, as `(lane index, s, d)`.
    pub fn locate(&self, state: &AgentState) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for &i in self.candidate_lanes(state.position) {
            let lane = &self.lanes[i];
            if lane.lane_type != LaneType::Driving {
                continue;
            }
            let f = lane.polyline.project(state.position);
            if f.d.abs() > lane.width / 2.0 + LANE_TOLERANCE {
                continue;
            }
            if angle_diff(state.heading, lane.polyline.heading_at(f.s)).abs() >= std::f64::consts::FRAC_PI_2 {
                continue;
            }
            let better = match best {
                None => true,
                Some((j, _, d)) => {
                    f.d.abs() < d.abs() || (f.d.abs() == d.abs() && lane.id < self.lanes[j].id)
                }
            };
            if better {
                best = Some((i, f.s, f.d));
            }
        }
        best
    }

    pub fn current_lane(&self, state: &AgentState) -> Option<LaneId> {
        self.locate(state).map(|(i, _, _)| self.lanes[i].id)
    }

    /// True when `p` lies outside every road and junction boundary.
    pub fn off_road(&self, p: Vec2) -> bool {
        !self.areas.iter().any(|a| {
            p.x >= a.min.x && p.x <= a.max.x && p.y >= a.min.y && p.y <= a.max.y && point_in_polygon(p, &a.polygon)
        })
    }

    pub fn has_boundaries(&self) -> bool {
        !self.areas.is_empty()
    }

    /// Signal state for a lane at `time`; uncontrolled lanes are `None`.
    pub fn signal(&self, map: &Map, idx: usize, time: f64) -> Option<LightState> {
        if !self.lanes[idx].controlled {
            return None;
        }
        map.signal_state(self.lanes[idx].id, time)
    }
}

/// Lane association of a pose, see [`MapIndex::locate`].
pub fn current_lane(state: &AgentState, map: &Map) -> Option<LaneId> {
    MapIndex::new(map).current_lane(state)
}

/// Whether the agent center is outside the drivable area of `map`.
pub fn off_road(state: &AgentState, map: &Map) -> bool {
    !map.boundaries().any(|b| point_in_polygon(state.position, b))
}
