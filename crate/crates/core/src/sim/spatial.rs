use std::collections::HashMap;

use crate::geometry::Vec2;

/// Default cell edge, meters.
pub const CELL_SIZE: f64 = 25.0;

/// Uniform hash grid over item positions for radius queries.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<(usize, Vec2)>,
}

impl SpatialHash {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        SpatialHash {
            cell,
            cells: HashMap::new(),
            points: Vec::new(),
        }
    }

    pub fn build(cell: f64, items: impl IntoIterator<Item = (usize, Vec2)>) -> Self {
        let mut h = SpatialHash::new(cell);
        for (id, p) in items {
            h.insert(id, p);
        }
        h
    }

    fn key(&self, p: Vec2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    pub fn insert(&mut self, id: usize, p: Vec2) {
        let slot = self.points.len();
        self.points.push((id, p));
        self.cells.entry(self.key(p)).or_default().push(slot);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ids within `radius` of `center` (boundary inclusive), ascending.
    pub fn query(&self, center: Vec2, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r = (radius / self.cell).ceil() as i64;
        let (cx, cy) = self.key(center);
        let r2 = radius * radius;
        for gx in cx - r..=cx + r {
            for gy in cy - r..=cy + r {
                if let Some(slots) = self.cells.get(&(gx, gy)) {
                    for &s in slots {
                        let (id, p) = self.points[s];
                        if (p - center).norm_sq() <= r2 {
                            out.push(id);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Unordered pairs `(i, j)`, `i < j`, whose points are within `radius`.
    pub fn pairs_within(&self, radius: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &(id, p) in &self.points {
            for other in self.query(p, radius) {
                if id < other {
                    out.push((id, other));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundary_is_inclusive() {
        let h = SpatialHash::build(25.0, [(0, Vec2::ZERO), (1, Vec2::new(50.0, 0.0)), (2, Vec2::new(50.001, 0.0))]);
        assert_eq!(h.query(Vec2::ZERO, 50.0), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(pts in prop::collection::vec((-200.0..200.0f64, -200.0..200.0f64), 1..60),
                               qx in -200.0..200.0f64, qy in -200.0..200.0f64, r in 0.0..120.0f64) {
            let items: Vec<_> = pts.iter().enumerate().map(|(i, &(x, y))| (i, Vec2::new(x, y))).collect();
            let h = SpatialHash::build(CELL_SIZE, items.clone());
            let q = Vec2::new(qx, qy);
            let brute: Vec<usize> = items.iter().filter(|(_, p)| (*p - q).norm_sq() <= r * r).map(|(i, _)| *i).collect();
            prop_assert_eq!(h.query(q, r), brute);
        }
    }
}
