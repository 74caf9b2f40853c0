use super::*;
use crate::geometry::Vec2;

/// Id of the single road of [`straight_road`].
pub const STRAIGHT_ROAD_ID: ContainerId = ContainerId(1000);

/// A straight multi-lane road starting at `origin` in direction `heading`.
/// Lane `k` (id `k + 1`) is offset `k * lane_width` to the left of lane 0.
pub fn straight_road(lanes: usize, length: f64, lane_width: f64, origin: Vec2, heading: f64, max_speed: f64) -> Map {
    assert!(lanes >= 1 && length > 0.0 && lane_width > 0.0);
    let fwd = Vec2::from_heading(heading);
    let left = fwd.perp();
    let id = |k: usize| LaneId(k as u64 + 1);
    let lane_list = (0..lanes)
        .map(|k| {
            let o = origin + left * (k as f64 * lane_width);
            Lane {
                id: id(k),
                lane_type: LaneType::Driving,
                centerline: vec![o, o + fwd * length],
                predecessors: vec![],
                successors: vec![],
                left_neighbor: (k + 1 < lanes).then(|| id(k + 1)),
                right_neighbor: (k > 0).then(|| id(k - 1)),
                parent: STRAIGHT_ROAD_ID,
                max_speed,
                width: lane_width,
            }
        })
        .collect();
    let lo = origin - left * (lane_width / 2.0);
    let hi = origin + left * ((lanes as f64 - 0.5) * lane_width);
    Map {
        lanes: lane_list,
        roads: vec![Road {
            id: STRAIGHT_ROAD_ID,
            lane_ids: (0..lanes).map(id).collect(),
            boundary: vec![lo, lo + fwd * length, hi + fwd * length, hi],
        }],
        junctions: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_road_validates() {
        let map = straight_road(3, 200.0, 3.5, Vec2::new(5.0, -2.0), 0.7, 15.0);
        let s = Scenario::new(map, vec![]);
        assert!(validate(&s).is_empty(), "{:?}", validate(&s));
    }
}
