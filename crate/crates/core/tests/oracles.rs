//! Cross-checks of geometry and routing against independent brute-force
//! implementations.

use std::collections::BTreeMap;

use lcsim_core::geometry::{point_in_polygon, OrientedBox, Vec2};
use lcsim_core::router::{build_graph, LaneGraph};
use lcsim_core::scenario::{generate_grid, GridParams, LaneId};
use lcsim_core::sim::MapIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox {
    OrientedBox::new(
        Vec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)),
        rng.random_range(-3.2..3.2),
        rng.random_range(0.5..6.0),
        rng.random_range(0.5..3.0),
    )
}

/// Point-sampling overlap: 4096 sample points spread over each box.
fn sampled_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let n = 45; // 46 * 46 ~ 2k per box
    [(a, b), (b, a)].iter().any(|(p, q)| {
        let c = p.corners();
        (0..=n).any(|i| {
            (0..=n).any(|j| {
                let pt = c[0] + (c[1] - c[0]) * (i as f64 / n as f64) + (c[3] - c[0]) * (j as f64 / n as f64);
                q.contains(pt)
            })
        })
    })
}

#[test]
fn sat_matches_point_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = 0;
    let mut checked = 0;
    while checked < 500 {
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let sampled = sampled_overlap(&a, &b);
        let sat = a.overlaps(&b);
        if sat != sampled {
            // sampling can only miss slivers thinner than its grid spacing
            let shrink = |o: &OrientedBox| OrientedBox::new(o.center, o.heading, o.length * 0.97, o.width * 0.97);
            let grow = |o: &OrientedBox| OrientedBox::new(o.center, o.heading, o.length * 1.03, o.width * 1.03);
            assert!(
                sat && !shrink(&a).overlaps(&shrink(&b)) || !sat && grow(&a).overlaps(&grow(&b)),
                "disagreement on a non-marginal pair {a:?} {b:?}"
            );
        }
        hits += sat as usize;
        checked += 1;
    }
    assert!(hits > 50 && hits < 450, "degenerate sample: {hits} overlaps");
}

/// Winding number of `polygon` around `p` (nonzero rule).
fn winding_number(p: Vec2, polygon: &[Vec2]) -> i32 {
    let mut w = 0;
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        let side = (b - a).cross(p - a);
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                w += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            w -= 1;
        }
    }
    w
}

#[test]
fn point_in_polygon_matches_winding_number() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        // random star-shaped simple polygon, where winding and even-odd agree
        let n = rng.random_range(3..12);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let poly: Vec<Vec2> = angles
            .iter()
            .map(|&a| Vec2::from_heading(a) * rng.random_range(1.0..10.0))
            .collect();
        for _ in 0..50 {
            let p = Vec2::new(rng.random_range(-11.0..11.0), rng.random_range(-11.0..11.0));
            assert_eq!(point_in_polygon(p, &poly), winding_number(p, &poly) != 0, "{p:?} in {poly:?}");
        }
    }
}

#[test]
fn off_road_matches_winding_number_on_grid_map() {
    let s = generate_grid(&GridParams::new(2, 3, 120.0, 2, 0, 9)).unwrap();
    let index = MapIndex::new(&s.map);
    let polys: Vec<Vec<Vec2>> = s.map.boundaries().map(|b| b.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let p = Vec2::new(rng.random_range(-80.0..330.0), rng.random_range(-80.0..200.0));
        let inside = polys.iter().any(|poly| winding_number(p, poly) != 0);
        assert_eq!(index.off_road(p), !inside, "{p:?}");
    }
}

/// Plain Dijkstra over the public edge list.
fn dijkstra(graph: &LaneGraph, from: LaneId, to: LaneId) -> Option<f64> {
    let mut dist: BTreeMap<LaneId, f64> = BTreeMap::new();
    let mut done: BTreeMap<LaneId, bool> = BTreeMap::new();
    dist.insert(from, 0.0);
    loop {
        let (&u, &du) = dist
            .iter()
            .filter(|(k, _)| !done.contains_key(k))
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        if u == to {
            return Some(du);
        }
        done.insert(u, true);
        for e in graph.edges_from(u) {
            let nd = du + e.cost;
            if dist.get(&e.to).is_none_or(|&d| nd < d) {
                dist.insert(e.to, nd);
            }
        }
    }
}

#[test]
fn a_star_matches_dijkstra() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.random_range(1..4);
        let cols = rng.random_range(1..4);
        let lanes = rng.random_range(1..3);
        let s = generate_grid(&GridParams::new(rows, cols, 100.0, lanes, 0, seed)).unwrap();
        let graph = build_graph(&s.map);
        let nodes = graph.nodes().to_vec();
        for _ in 0..5 {
            let a = nodes[rng.random_range(0..nodes.len())];
            let b = nodes[rng.random_range(0..nodes.len())];
            let oracle = dijkstra(&graph, a, b);
            match graph.route(a, b) {
                Ok(path) => {
                    let cost = graph.path_cost(&path).unwrap();
                    let best = oracle.expect("oracle finds a path too");
                    assert!((cost - best).abs() < 1e-9, "seed {seed}: {cost} vs {best}");
                }
                Err(_) => assert!(oracle.is_none(), "seed {seed}: A* missed a path"),
            }
        }
    }
}
