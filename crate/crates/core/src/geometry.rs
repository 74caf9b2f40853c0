//! Planar geometry used throughout the simulator: vectors, polylines with
//! Frenet projection, polygons and oriented boxes.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point or displacement in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2 { x: v[0], y: v[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector pointing along `heading`.
    pub fn from_heading(heading: f64) -> Self {
        Vec2::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Shortest signed angular difference `a - b`, in (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Frenet coordinates of a point relative to a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frenet {
    /// Arc length of the closest point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel.
    pub d: f64,
    /// Index of the segment holding the closest point.
    pub segment: usize,
}

/// A polyline with cached cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline. Panics if fewer than two points are given.
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least two points");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Polyline { points, cumulative }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    /// Arc length at the start of each vertex.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Point at arc length `s`, clamped to the polyline.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        if seg_len <= 0.0 {
            return self.points[i];
        }
        let t = (s - self.cumulative[i]) / seg_len;
        self.points[i].lerp(self.points[i + 1], t)
    }

    /// Tangent heading at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let mut i = self.segment_at(s);
        // skip degenerate segments
        while i + 1 < self.points.len() - 1 && self.points[i].distance(self.points[i + 1]) == 0.0 {
            i += 1;
        }
        (self.points[i + 1] - self.points[i]).angle()
    }

    /// Projects `p` onto the polyline. Ties between equally close segments go
    /// to the one with smaller arc length.
    pub fn project(&self, p: Vec2) -> Frenet {
        let mut best = Frenet {
            s: 0.0,
            d: 0.0,
            segment: 0,
        };
        let mut best_dist = f64::INFINITY;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let len_sq = ab.norm_sq();
            let t = if len_sq > 0.0 {
                ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a + ab * t;
            let dist = p.distance(q);
            if dist < best_dist {
                best_dist = dist;
                let side = if len_sq > 0.0 { ab.cross(p - a) } else { 0.0 };
                let sign = if side < 0.0 { -1.0 } else { 1.0 };
                best = Frenet {
                    s: self.cumulative[i] + t * len_sq.sqrt(),
                    d: sign * dist,
                    segment: i,
                };
            }
        }
        best
    }

    /// Sub-polyline between arc lengths `from` and `to` (`from <= to`).
    pub fn slice(&self, from: f64, to: f64) -> Vec<Vec2> {
        let from = from.clamp(0.0, self.length());
        let to = to.clamp(from, self.length());
        let mut out = vec![self.point_at(from)];
        for (i, &c) in self.cumulative.iter().enumerate() {
            if c > from && c < to {
                out.push(self.points[i]);
            }
        }
        let last = self.point_at(to);
        if out.last().map(|p| p.distance(last) > 0.0).unwrap_or(true) {
            out.push(last);
        }
        out
    }
}

/// Frenet projection of `point` onto `polyline`.
pub fn frenet_project(polyline: &Polyline, point: Vec2) -> (f64, f64) {
    let f = polyline.project(point);
    (f.s, f.d)
}

/// Even-odd point in polygon test. The polygon is implicitly closed.
pub fn point_in_polygon(p: Vec2, polygon: &[Vec2]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
        (b - a).cross(c - a)
    }
    fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
        p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when the closed polygon has at least three vertices, no repeated
/// consecutive vertices and no two non-adjacent edges touching.
pub fn is_simple_polygon(polygon: &[Vec2]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if polygon[i] == polygon[(i + 1) % n] {
            return false;
        }
    }
    for i in 0..n {
        let (a1, a2) = (polygon[i], polygon[(i + 1) % n]);
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (polygon[j], polygon[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    // a degenerate polygon with zero area is not simple either
    polygon_area(polygon).abs() > 0.0
}

/// Signed shoelace area, positive for counter-clockwise winding.
pub fn polygon_area(polygon: &[Vec2]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += polygon[i].cross(polygon[(i + 1) % n]);
    }
    0.5 * acc
}

/// Closest point on the polygon boundary to `p`.
pub fn closest_boundary_point(p: Vec2, polygon: &[Vec2]) -> Vec2 {
    let n = polygon.len();
    let mut best = polygon[0];
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        let ab = b - a;
        let len_sq = ab.norm_sq();
        let t = if len_sq > 0.0 {
            ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = a + ab * t;
        let d = p.distance(q);
        if d < best_d {
            best_d = d;
            best = q;
        }
    }
    best
}

/// Signed distance to the polygon boundary: positive outside, negative inside.
pub fn signed_distance(p: Vec2, polygon: &[Vec2]) -> f64 {
    let d = p.distance(closest_boundary_point(p, polygon));
    if point_in_polygon(p, polygon) {
        -d
    } else {
        d
    }
}

/// Oriented rectangle: centre, heading, full length and width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        OrientedBox {
            center,
            heading,
            length,
            width,
        }
    }

    fn axes(&self) -> [Vec2; 2] {
        let f = Vec2::from_heading(self.heading);
        [f, f.perp()]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let [f, l] = self.axes();
        let hf = f * (0.5 * self.length);
        let hl = l * (0.5 * self.width);
        let c = self.center;
        [c + hf - hl, c + hf + hl, c - hf + hl, c - hf - hl]
    }

    /// Half-extent of the box projected onto a unit axis.
    fn radius_on(&self, axis: Vec2) -> f64 {
        let [f, l] = self.axes();
        0.5 * self.length * f.dot(axis).abs() + 0.5 * self.width * l.dot(axis).abs()
    }

    /// Separating-axis overlap test. Touching boxes count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let gap = other.center - self.center;
        for axis in self.axes().into_iter().chain(other.axes()) {
            let dist = gap.dot(axis).abs();
            if dist > self.radius_on(axis) + other.radius_on(axis) {
                return false;
            }
        }
        true
    }

    /// Point containment, boundary inclusive.
    pub fn contains(&self, p: Vec2) -> bool {
        let [f, l] = self.axes();
        let r = p - self.center;
        r.dot(f).abs() <= 0.5 * self.length && r.dot(l).abs() <= 0.5 * self.width
    }
}
