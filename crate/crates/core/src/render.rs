//! Top-down SVG frames of a running simulation.

use std::fmt::Write;

use crate::geometry::Vec2;
use crate::scenario::{LightState, Map};
use crate::sim::{footprint, AgentStatus, WorldState};

/// Pixels per meter and margin around the map, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub scale: f64,
    pub margin: f64,
    /// Draw each agent's current plan or route.
    pub tracks: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            scale: 2.0,
            margin: 10.0,
            tracks: true,
        }
    }
}

struct Frame {
    min: Vec2,
    max: Vec2,
    scale: f64,
}

impl Frame {
    // SVG y grows downwards
    fn pt(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.min.x) * self.scale, (self.max.y - p.y) * self.scale)
    }

    fn path(&self, pts: &[Vec2], close: bool) -> String {
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.pt(*p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        if close {
            d.push('Z');
        }
        d
    }
}

fn bounds(map: &Map, world: &WorldState) -> (Vec2, Vec2) {
    let pts = map
        .lanes
        .iter()
        .flat_map(|l| l.centerline.iter().copied())
        .chain(map.boundaries().flat_map(|b| b.iter().copied()))
        .chain(world.agents.iter().filter(|a| a.is_present()).map(|a| a.state.position));
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
        max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
    }
    if !min.x.is_finite() {
        return (Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0));
    }
    (min, max)
}

/// One frame: road surfaces, lane centerlines tinted by signal state,
/// agents as oriented boxes (red when colliding, grey when frozen).
pub fn render_svg(map: &Map, world: &WorldState, opts: &RenderOptions) -> String {
    let (lo, hi) = bounds(map, world);
    let m = Vec2::new(opts.margin, opts.margin);
    let f = Frame {
        min: lo - m,
        max: hi + m,
        scale: opts.scale,
    };
    let w = (f.max.x - f.min.x) * f.scale;
    let h = (f.max.y - f.min.y) * f.scale;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#f4f4f0"/>"##);
    for b in map.boundaries() {
        let _ = writeln!(s, r##"<path d="{}" fill="#c8c8c8" stroke="#888" stroke-width="0.5"/>"##, f.path(b, true));
    }
    for lane in &map.lanes {
        let color = match world.signals.iter().find(|(id, _)| *id == lane.id).map(|x| x.1) {
            Some(LightState::Red) => "#d33",
            Some(LightState::Yellow) => "#db3",
            Some(LightState::Green) => "#3a3",
            _ => "#fff",
        };
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1" stroke-dasharray="4 3"/>"#,
            f.path(&lane.centerline, false)
        );
    }
    let colliding: Vec<usize> = world.colliding_pairs().flat_map(|(a, b)| [a, b]).collect();
    for (i, a) in world.agents.iter().enumerate() {
        if !a.is_present() {
            continue;
        }
        if opts.tracks {
            if let Some(path) = a.guide_track().and_then(|t| t.path()) {
                let _ = writeln!(
                    s,
                    r##"<path d="{}" fill="none" stroke="#36c" stroke-opacity="0.5" stroke-width="0.8"/>"##,
                    f.path(path.points(), false)
                );
            }
        }
        let fill = if colliding.contains(&i) {
            "#e22"
        } else if a.status == AgentStatus::Frozen {
            "#777"
        } else {
            "#248"
        };
        let corners = footprint(&a.state, &a.attributes).corners();
        let _ = writeln!(s, r#"<path d="{}" fill="{fill}"><title>{}</title></path>"#, f.path(&corners, true), a.id);
    }
    let _ = writeln!(s, r#"<text x="4" y="14" font-family="monospace" font-size="12">t = {:.1} s</text>"#, world.time);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_grid, GridParams};
    use crate::router::complete_routes;
    use crate::sim::{SimConfig, Simulator};
    use std::sync::Arc;

    #[test]
    fn frame_lists_every_present_agent() {
        let mut sc = generate_grid(&GridParams::new(2, 2, 80.0, 1, 6, 3)).unwrap();
        complete_routes(&mut sc, 10.0).unwrap();
        let sim = Simulator::new(Arc::new(sc), SimConfig::default()).unwrap();
        let mut world = sim.init_world();
        sim.run_until(&mut world, &Default::default(), 10.0).unwrap();
        let svg = render_svg(&sim.scenario().map, &world, &RenderOptions::default());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let present = world.agents.iter().filter(|a| a.is_present()).count();
        assert_eq!(svg.matches("<title>").count(), present);
        assert!(!svg.contains("NaN"));
    }
}
