//! Synthetic Manhattan-grid scenario generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::*;
use crate::geometry::Vec2;
use crate::router::{build_graph, expand_route, LaneRoute};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least one row and one column")]
    EmptyGrid,
    #[error("lanes_per_road must be at least 1")]
    NoLanes,
    #[error("block length {block_len} m cannot fit junctions of {junction} m with {lanes} lane(s) per direction")]
    BlockTooShort {
        block_len: f64,
        junction: f64,
        lanes: usize,
    },
    #[error("could not find a routable origin/destination pair for agent {0}")]
    NoRoutablePair(usize),
}

/// Parameters of [`generate_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub rows: usize,
    pub cols: usize,
    pub block_len: f64,
    pub lanes_per_road: usize,
    pub n_agents: usize,
    pub seed: u64,
    pub lane_width: f64,
    pub road_speed: f64,
    pub turn_speed: f64,
    /// Cruise speed of the free-flow trip used to derive arrival times.
    pub trip_speed: f64,
    /// Departures are drawn uniformly from `[0, departure_window]`.
    pub departure_window: f64,
    /// Green time per approach pair, seconds.
    pub green: f64,
    pub yellow: f64,
}

impl GridParams {
    pub fn new(
        rows: usize,
        cols: usize,
        block_len: f64,
        lanes_per_road: usize,
        n_agents: usize,
        seed: u64,
    ) -> Self {
        GridParams {
            rows,
            cols,
            block_len,
            lanes_per_road,
            n_agents,
            seed,
            lane_width: DEFAULT_LANE_WIDTH,
            road_speed: 13.9,
            turn_speed: 8.0,
            trip_speed: 10.0,
            departure_window: 10.0,
            green: 27.0,
            yellow: 3.0,
        }
    }
}

const MIN_ROAD_LEN: f64 = 10.0;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Dir {
    E,
    N,
    W,
    S,
}

impl Dir {
    fn unit(self) -> Vec2 {
        match self {
            Dir::E => Vec2::new(1.0, 0.0),
            Dir::N => Vec2::new(0.0, 1.0),
            Dir::W => Vec2::new(-1.0, 0.0),
            Dir::S => Vec2::new(0.0, -1.0),
        }
    }

    fn from_unit(v: Vec2) -> Dir {
        if v.x > 0.5 {
            Dir::E
        } else if v.x < -0.5 {
            Dir::W
        } else if v.y > 0.5 {
            Dir::N
        } else {
            Dir::S
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn is_north_south(self) -> bool {
        matches!(self, Dir::N | Dir::S)
    }
}

/// Lanes meeting one junction arm, indexed by lane rank (0 = innermost).
#[derive(Default, Clone)]
struct Arm {
    incoming: Vec<usize>,
    outgoing: Vec<usize>,
}

struct Builder {
    lanes: Vec<Lane>,
    roads: Vec<Road>,
    junctions: Vec<Junction>,
    next_lane: u64,
}

impl Builder {
    fn add_lane(&mut self, centerline: Vec<Vec2>, parent: ContainerId, max_speed: f64, width: f64) -> usize {
        self.next_lane += 1;
        self.lanes.push(Lane {
            id: LaneId(self.next_lane),
            lane_type: LaneType::Driving,
            centerline,
            predecessors: Vec::new(),
            successors: Vec::new(),
            left_neighbor: None,
            right_neighbor: None,
            parent,
            max_speed,
            width,
        });
        self.lanes.len() - 1
    }

    fn link(&mut self, from: usize, to: usize) {
        let (fid, tid) = (self.lanes[from].id, self.lanes[to].id);
        self.lanes[from].successors.push(tid);
        self.lanes[to].predecessors.push(fid);
    }
}

fn quad_bezier(a: Vec2, c: Vec2, b: Vec2, segments: usize) -> Vec<Vec2> {
    (0..=segments)
        .map(|k| {
            let t = k as f64 / segments as f64;
            let u = 1.0 - t;
            a * (u * u) + c * (2.0 * u * t) + b * (t * t)
        })
        .collect()
}

/// Generates a `rows x cols` grid of signalized junctions joined by two-way
/// roads, with an approach road on every outer arm. Agents receive
/// origin/destination waypoints; arrival times come from a free-flow trip
/// stretched by a random factor. Output is a pure function of `params`.
pub fn generate_grid(params: &GridParams) -> Result<Scenario, GridError> {
    let GridParams {
        rows,
        cols,
        block_len,
        lanes_per_road: n,
        ..
    } = *params;
    if rows == 0 || cols == 0 {
        return Err(GridError::EmptyGrid);
    }
    if n == 0 {
        return Err(GridError::NoLanes);
    }
    let w = params.lane_width;
    let half = n as f64 * w;
    let road_len = block_len - 2.0 * half;
    if !(road_len >= MIN_ROAD_LEN) {
        return Err(GridError::BlockTooShort {
            block_len,
            junction: 2.0 * half,
            lanes: n,
        });
    }

    let mut b = Builder {
        lanes: Vec::new(),
        roads: Vec::new(),
        junctions: Vec::new(),
        next_lane: 0,
    };
    let center = |r: usize, c: usize| Vec2::new(c as f64 * block_len, r as f64 * block_len);
    let junction_id = |r: usize, c: usize| ContainerId((r * cols + c + 1) as u64);
    let mut arms: Vec<[Arm; 4]> = vec![Default::default(); rows * cols];
    let mut next_container = (rows * cols) as u64;

    // (start, unit, junction at start, junction at end)
    let mut segments: Vec<(Vec2, Vec2, Option<(usize, usize)>, Option<(usize, usize)>)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let p = center(r, c);
            if c == 0 {
                segments.push((p - Vec2::new(half + road_len, 0.0), Dir::E.unit(), None, Some((r, c))));
            }
            if c + 1 < cols {
                segments.push((p + Vec2::new(half, 0.0), Dir::E.unit(), Some((r, c)), Some((r, c + 1))));
            } else {
                segments.push((p + Vec2::new(half, 0.0), Dir::E.unit(), Some((r, c)), None));
            }
            if r == 0 {
                segments.push((p - Vec2::new(0.0, half + road_len), Dir::N.unit(), None, Some((r, c))));
            }
            if r + 1 < rows {
                segments.push((p + Vec2::new(0.0, half), Dir::N.unit(), Some((r, c)), Some((r + 1, c))));
            } else {
                segments.push((p + Vec2::new(0.0, half), Dir::N.unit(), Some((r, c)), None));
            }
        }
    }

    for (start, u, at_start, at_end) in segments {
        next_container += 1;
        let rid = ContainerId(next_container);
        let end = start + u * road_len;
        let left = u.perp();
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for k in 0..n {
            let off = (k as f64 + 0.5) * w;
            fwd.push(b.add_lane(
                vec![start - left * off, end - left * off],
                rid,
                params.road_speed,
                w,
            ));
        }
        for k in 0..n {
            let off = (k as f64 + 0.5) * w;
            bwd.push(b.add_lane(
                vec![end + left * off, start + left * off],
                rid,
                params.road_speed,
                w,
            ));
        }
        for group in [&fwd, &bwd] {
            for k in 0..n {
                if k > 0 {
                    b.lanes[group[k]].left_neighbor = Some(b.lanes[group[k - 1]].id);
                }
                if k + 1 < n {
                    b.lanes[group[k]].right_neighbor = Some(b.lanes[group[k + 1]].id);
                }
            }
        }
        let dir = Dir::from_unit(u);
        if let Some((r, c)) = at_end {
            // the road lies on the arm opposite to its direction of travel
            let arm = &mut arms[r * cols + c][Dir::from_unit(-u).index()];
            arm.incoming = fwd.clone();
            arm.outgoing = bwd.clone();
        }
        if let Some((r, c)) = at_start {
            let arm = &mut arms[r * cols + c][dir.index()];
            arm.incoming = bwd.clone();
            arm.outgoing = fwd.clone();
        }
        let mut lane_ids: Vec<LaneId> = fwd.iter().chain(&bwd).map(|&i| b.lanes[i].id).collect();
        lane_ids.sort();
        b.roads.push(Road {
            id: rid,
            lane_ids,
            boundary: vec![
                start - left * half,
                end - left * half,
                end + left * half,
                start + left * half,
            ],
        });
    }

    for r in 0..rows {
        for c in 0..cols {
            let jid = junction_id(r, c);
            let p = center(r, c);
            let arm_set = arms[r * cols + c].clone();
            let mut lane_idx = Vec::new();
            let mut ns_flags = Vec::new();
            for arm_dir in [Dir::E, Dir::N, Dir::W, Dir::S] {
                let arm = &arm_set[arm_dir.index()];
                let travel = -arm_dir.unit();
                let straight_exit = Dir::from_unit(travel);
                let right_exit = Dir::from_unit(-travel.perp());
                let left_exit = Dir::from_unit(travel.perp());
                for k in 0..n {
                    let inc = arm.incoming[k];
                    let mut moves = vec![(straight_exit, k, false)];
                    if k + 1 == n {
                        moves.push((right_exit, n - 1, true));
                    }
                    if k == 0 {
                        moves.push((left_exit, 0, true));
                    }
                    for (exit, ek, turn) in moves {
                        let out = arm_set[exit.index()].outgoing[ek];
                        let a = *b.lanes[inc].centerline.last().unwrap();
                        let z = b.lanes[out].centerline[0];
                        let line = if turn {
                            let ctrl = if travel.x.abs() > 0.5 {
                                Vec2::new(z.x, a.y)
                            } else {
                                Vec2::new(a.x, z.y)
                            };
                            quad_bezier(a, ctrl, z, 8)
                        } else {
                            vec![a, z]
                        };
                        let speed = if turn { params.turn_speed } else { params.road_speed };
                        let jl = b.add_lane(line, jid, speed, w);
                        b.link(inc, jl);
                        b.link(jl, out);
                        lane_idx.push(jl);
                        ns_flags.push(arm_dir.is_north_south());
                    }
                }
            }
            let controlled: Vec<LaneId> = lane_idx.iter().map(|&i| b.lanes[i].id).collect();
            let phase = |ns: LightState, ew: LightState| {
                ns_flags
                    .iter()
                    .map(|&f| if f { ns } else { ew })
                    .collect::<Vec<_>>()
            };
            use LightState::*;
            let program = SignalProgram {
                controlled_lane_ids: controlled.clone(),
                phases: vec![
                    SignalPhase {
                        duration: params.green,
                        states: phase(Green, Red),
                    },
                    SignalPhase {
                        duration: params.yellow,
                        states: phase(Yellow, Red),
                    },
                    SignalPhase {
                        duration: params.green,
                        states: phase(Red, Green),
                    },
                    SignalPhase {
                        duration: params.yellow,
                        states: phase(Red, Yellow),
                    },
                ],
            };
            let mut lane_ids = controlled;
            lane_ids.sort();
            b.junctions.push(Junction {
                id: jid,
                lane_ids,
                boundary: vec![
                    p + Vec2::new(-half, -half),
                    p + Vec2::new(half, -half),
                    p + Vec2::new(half, half),
                    p + Vec2::new(-half, half),
                ],
                traffic_lights: vec![program],
            });
        }
    }

    b.junctions.sort_by_key(|j| j.id);
    let map = Map {
        lanes: b.lanes,
        roads: b.roads,
        junctions: b.junctions,
    };
    let agents = generate_agents(&map, params)?;
    Ok(Scenario::new(map, agents))
}

fn generate_agents(map: &Map, params: &GridParams) -> Result<Vec<Agent>, GridError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let graph = build_graph(map);
    let road_lanes: Vec<&Lane> = map
        .lanes
        .iter()
        .filter(|l| map.roads.iter().any(|r| r.id == l.parent))
        .collect();
    let tick = DEFAULT_TICK;
    let max_departure_ticks = (params.departure_window / tick).round() as u64;
    let mut agents = Vec::with_capacity(params.n_agents);
    for i in 0..params.n_agents {
        let mut found = None;
        for _ in 0..200 {
            let o = road_lanes[rng.random_range(0..road_lanes.len())];
            let d = road_lanes[rng.random_range(0..road_lanes.len())];
            if o.parent == d.parent {
                continue;
            }
            let (lo, ld) = (o.length(), d.length());
            let origin_s = rng.random_range(0.1..0.4) * lo;
            let dest_s = rng.random_range(0.6..0.9) * ld;
            let Ok(lanes) = graph.route(o.id, d.id) else {
                continue;
            };
            let route = LaneRoute {
                lanes,
                origin_s,
                dest_s,
            };
            let departure = rng.random_range(0..=max_departure_ticks) as f64 * tick;
            let Ok(trip) = expand_route(map, &route, departure, params.trip_speed, tick) else {
                continue;
            };
            let stretch = rng.random_range(1.0..1.2);
            let duration = trip.last().unwrap().t - departure;
            let origin = trip[0].state.position;
            let dest = trip.last().unwrap().state.position;
            found = Some((departure, origin, dest, departure + duration * stretch));
            break;
        }
        let (departure, origin, dest, arrival) = found.ok_or(GridError::NoRoutablePair(i))?;
        let length = rng.random_range(4.2..5.0);
        let width = rng.random_range(1.8..2.0);
        agents.push(Agent {
            id: AgentId(i as u64 + 1),
            attributes: AgentAttributes::vehicle(length, width),
            schedules: vec![Schedule {
                departure_time: departure,
                reference_route: Vec::new(),
                waypoints: vec![
                    Waypoint {
                        position: origin,
                        arrival_time: departure,
                    },
                    Waypoint {
                        position: dest,
                        arrival_time: arrival,
                    },
                ],
            }],
        });
    }
    Ok(agents)
}
