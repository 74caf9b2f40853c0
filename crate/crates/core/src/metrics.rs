//! Evaluation battery over recorded rollouts: rule-violation rates,
//! displacement errors, arrival-time errors and driving-style histograms.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scenario::{AgentId, AgentState, LaneId, Waypoint};
use crate::sim::{Event, EventKind, Simulator, WorldState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no samples given")]
    NoSamples,
    #[error("sample {sample} has {got} points, ground truth has {expected}")]
    LengthMismatch { sample: usize, got: usize, expected: usize },
    #[error("histogram edges must be strictly increasing with at least two entries")]
    BadEdges,
}

/// Positions and lane placement of every agent at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub time: f64,
    pub states: Vec<Option<AgentState>>,
    /// Lane and arc length of each present agent that is on a lane.
    pub lanes: Vec<Option<(LaneId, f64)>>,
}

/// One recorded rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub seed: u64,
    pub tick: f64,
    pub agent_ids: Vec<AgentId>,
    pub lengths: Vec<f64>,
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
    /// Ground-truth trip goals per agent.
    pub waypoints: Vec<Vec<Waypoint>>,
    /// Ground-truth trajectories per agent as `(time, state)` samples.
    pub reference: Vec<Vec<(f64, AgentState)>>,
}

impl RolloutRecord {
    /// Starts a record with the world's current frame.
    pub fn start(sim: &Simulator, world: &WorldState, seed: u64) -> Self {
        let scenario = sim.scenario();
        let mut r = RolloutRecord {
            seed,
            tick: world.tick,
            agent_ids: world.agents.iter().map(|a| a.id).collect(),
            lengths: world.agents.iter().map(|a| a.attributes.length).collect(),
            frames: Vec::new(),
            events: Vec::new(),
            waypoints: scenario
                .agents
                .iter()
                .map(|a| a.schedules.iter().flat_map(|s| s.waypoints.iter().copied()).collect())
                .collect(),
            reference: scenario
                .agents
                .iter()
                .map(|a| {
                    a.schedules
                        .iter()
                        .flat_map(|s| s.reference_route.iter().map(|p| (p.t, p.state)))
                        .collect()
                })
                .collect(),
        };
        r.record(sim, world);
        r
    }

    /// Appends the current frame and any new events.
    pub fn record(&mut self, sim: &Simulator, world: &WorldState) {
        let index = sim.index();
        let states: Vec<Option<AgentState>> = world.agents.iter().map(|a| a.is_present().then_some(a.state)).collect();
        let lanes = states
            .iter()
            .map(|s| s.and_then(|s| index.locate(&s).map(|(l, s, _)| (index.lane(l).id, s))))
            .collect();
        self.frames.push(Frame {
            time: world.time,
            states,
            lanes,
        });
        let known = self.events.len();
        self.events.extend(world.events.iter().skip(known).cloned());
    }

    fn agents_present(&self) -> usize {
        (0..self.agent_ids.len())
            .filter(|&i| self.frames.iter().any(|f| f.states[i].is_some()))
            .count()
    }

    fn agents_with(&self, kind: EventKind) -> BTreeSet<AgentId> {
        self.events
            .iter()
            .filter(|e| e.kind == kind)
            .flat_map(|e| e.agents.iter().copied())
            .collect()
    }
}

/// Mean and standard error of per-record percentages.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rate {
    pub mean: f64,
    pub std_error: f64,
}

impl Rate {
    pub fn of(values: &[f64]) -> Rate {
        if values.is_empty() {
            return Rate::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_error = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Rate { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationRates {
    /// Percentage of agents with at least one collision.
    pub collision_pct: Rate,
    pub offroad_pct: Rate,
    /// Percentage of records with at least one collision.
    pub scenario_collision_pct: f64,
    pub per_record_collision_pct: Vec<f64>,
    pub per_record_offroad_pct: Vec<f64>,
}

pub fn violation_rates(records: &[RolloutRecord]) -> ViolationRates {
    let pct = |r: &RolloutRecord, kind| {
        let n = r.agents_present();
        if n == 0 {
            0.0
        } else {
            100.0 * r.agents_with(kind).len() as f64 / n as f64
        }
    };
    let coll: Vec<f64> = records.iter().map(|r| pct(r, EventKind::Collision)).collect();
    let off: Vec<f64> = records.iter().map(|r| pct(r, EventKind::OffRoad)).collect();
    let scen = if records.is_empty() {
        0.0
    } else {
        100.0 * records.iter().filter(|r| r.events.iter().any(|e| e.kind == EventKind::Collision)).count() as f64
            / records.len() as f64
    };
    ViolationRates {
        collision_pct: Rate::of(&coll),
        offroad_pct: Rate::of(&off),
        scenario_collision_pct: scen,
        per_record_collision_pct: coll,
        per_record_offroad_pct: off,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdeFde {
    pub min_ade: f64,
    pub min_fde: f64,
}

/// How the best sample is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// minADE and minFDE minimize separately.
    #[default]
    Independent,
    /// Both come from the sample with the lowest ADE.
    Joint,
}

/// Mean pointwise distance and final-point distance.
pub fn ade_fde(sample: &[Vec2], truth: &[Vec2]) -> (f64, f64) {
    let n = truth.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let ade = sample.iter().zip(truth).map(|(a, b)| a.distance(*b)).sum::<f64>() / n as f64;
    (ade, sample[n - 1].distance(truth[n - 1]))
}

pub fn min_ade_fde(samples: &[Vec<Vec2>], truth: &[Vec2], selection: Selection) -> Result<AdeFde, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    for (i, s) in samples.iter().enumerate() {
        if s.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                sample: i,
                got: s.len(),
                expected: truth.len(),
            });
        }
    }
    let scores: Vec<(f64, f64)> = samples.iter().map(|s| ade_fde(s, truth)).collect();
    Ok(match selection {
        Selection::Independent => AdeFde {
            min_ade: scores.iter().map(|s| s.0).fold(f64::INFINITY, f64::min),
            min_fde: scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min),
        },
        Selection::Joint => {
            let best = scores.iter().copied().min_by(|a, b| a.0.total_cmp(&b.0)).expect("nonempty");
            AdeFde {
                min_ade: best.0,
                min_fde: best.1,
            }
        }
    })
}

/// Arrival-time deviation of one waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripError {
    pub agent: AgentId,
    pub waypoint: usize,
    /// Simulated minus ground-truth arrival time; `None` if never reached.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArrivalReport {
    pub trips: Vec<TripError>,
    pub threshold: f64,
    /// Percentage of all trips (censored included) within the threshold.
    pub within_pct: f64,
    pub censored: usize,
    pub mean_error: Option<f64>,
    pub histogram: Option<Histogram>,
}

/// Compares first-reach times of every waypoint against its ground-truth
/// arrival time. A waypoint counts as reached when the agent comes within
/// `radius`; unreached waypoints are censored.
pub fn arrival_time_errors(records: &[RolloutRecord], radius: f64, threshold: f64, edges: &[f64]) -> ArrivalReport {
    let mut trips = Vec::new();
    for r in records {
        for (i, wps) in r.waypoints.iter().enumerate() {
            for (k, wp) in wps.iter().enumerate() {
                let reached = r.frames.iter().find_map(|f| {
                    f.states[i]
                        .filter(|s| s.position.distance(wp.position) <= radius)
                        .map(|_| f.time)
                });
                trips.push(TripError {
                    agent: r.agent_ids[i],
                    waypoint: k,
                    error: reached.map(|t| t - wp.arrival_time),
                });
            }
        }
    }
    let errors: Vec<f64> = trips.iter().filter_map(|t| t.error).collect();
    let within = errors.iter().filter(|e| e.abs() < threshold).count();
    ArrivalReport {
        threshold,
        within_pct: if trips.is_empty() {
            0.0
        } else {
            100.0 * within as f64 / trips.len() as f64
        },
        censored: trips.len() - errors.len(),
        mean_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        histogram: Histogram::build(edges, &errors).ok(),
        trips,
    }
}

/// Normalized histogram over fixed edges; values beyond the ends fall into
/// the first or last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub count: usize,
}

impl Histogram {
    pub fn build(edges: &[f64], values: &[f64]) -> Result<Histogram, MetricsError> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MetricsError::BadEdges);
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = edges[1..].partition_point(|e| *e <= v).min(bins - 1);
            counts[b] += 1;
        }
        let n = values.len();
        Ok(Histogram {
            edges: edges.to_vec(),
            mass: counts.iter().map(|c| if n == 0 { 0.0 } else { *c as f64 / n as f64 }).collect(),
            count: n,
        })
    }

    pub fn mode_bin(&self) -> Option<usize> {
        if self.count == 0 {
            return None;
        }
        self.mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        0.5 * (self.edges[b] + self.edges[b + 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleConfig {
    pub acceleration_edges: Vec<f64>,
    pub distance_edges: Vec<f64>,
    pub headway_edges: Vec<f64>,
    /// Leaders farther than this along the lane are not car-following.
    pub follow_range: f64,
    /// Headway is undefined below this follower speed.
    pub min_headway_speed: f64,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            acceleration_edges: linspace(-6.0, 6.0, 24),
            distance_edges: linspace(0.0, 100.0, 50),
            headway_edges: linspace(0.0, 10.0, 40),
            follow_range: 100.0,
            min_headway_speed: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleHistograms {
    pub acceleration: Histogram,
    pub relative_distance: Histogram,
    pub time_headway: Histogram,
}

/// Car-following samples: `(follower index, frame index, gap)` where the
/// leader is the nearest agent ahead on the same lane within range.
fn following(r: &RolloutRecord, f: usize, range: f64) -> Vec<(usize, f64)> {
    let frame = &r.frames[f];
    let mut out = Vec::new();
    for (j, lj) in frame.lanes.iter().enumerate() {
        let Some((lane, sj)) = lj else { continue };
        let leader = frame
            .lanes
            .iter()
            .enumerate()
            .filter_map(|(i, li)| match li {
                Some((l, si)) if i != j && l == lane && *si > *sj && si - sj <= range => Some((si - sj, i)),
                _ => None,
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((ds, i)) = leader {
            out.push((j, ds - 0.5 * (r.lengths[i] + r.lengths[j])));
        }
    }
    out
}

pub fn style_histograms(records: &[RolloutRecord], cfg: &StyleConfig) -> Result<StyleHistograms, MetricsError> {
    let (mut acc, mut dist, mut thw) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        for f in 0..r.frames.len() {
            for (j, gap) in following(r, f, cfg.follow_range) {
                dist.push(gap);
                let v = r.frames[f].states[j].map_or(0.0, |s| s.speed);
                if v >= cfg.min_headway_speed {
                    thw.push(gap / v);
                }
                if f > 0 {
                    if let Some(prev) = r.frames[f - 1].states[j] {
                        acc.push((v - prev.speed) / r.tick);
                    }
                }
            }
        }
    }
    Ok(StyleHistograms {
        acceleration: Histogram::build(&cfg.acceleration_edges, &acc)?,
        relative_distance: Histogram::build(&cfg.distance_edges, &dist)?,
        time_headway: Histogram::build(&cfg.headway_edges, &thw)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, dy: f64) -> Vec<Vec2> {
        (0..n).map(|i| Vec2::new(i as f64, dy)).collect()
    }

    #[test]
    fn exact_sample_gives_zero() {
        let truth = line(80, 0.0);
        let samples = vec![line(80, 3.0), truth.clone(), line(80, -1.0)];
        let r = min_ade_fde(&samples, &truth, Selection::Independent).unwrap();
        assert_eq!((r.min_ade, r.min_fde), (0.0, 0.0));
    }

    #[test]
    fn constant_offset() {
        let r = min_ade_fde(&[line(10, 2.0)], &line(10, 0.0), Selection::Independent).unwrap();
        assert!((r.min_ade - 2.0).abs() < 1e-12 && (r.min_fde - 2.0).abs() < 1e-12);
    }

    #[test]
    fn joint_and_independent_differ() {
        let truth = line(3, 0.0);
        // a: small ADE, large FDE; b: larger ADE, zero FDE
        let a = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 1.2)];
        let b = vec![Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 0.0)];
        let ind = min_ade_fde(&[a.clone(), b.clone()], &truth, Selection::Independent).unwrap();
        let joint = min_ade_fde(&[a, b], &truth, Selection::Joint).unwrap();
        assert_eq!(ind.min_fde, 0.0);
        assert!((joint.min_fde - 1.2).abs() < 1e-12);
        assert_eq!(ind.min_ade, joint.min_ade);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert_eq!(
            min_ade_fde(&[line(3, 0.0)], &line(4, 0.0), Selection::Independent),
            Err(MetricsError::LengthMismatch {
                sample: 0,
                got: 3,
                expected: 4
            })
        );
        assert_eq!(min_ade_fde(&[], &line(4, 0.0), Selection::Joint), Err(MetricsError::NoSamples));
    }

    #[test]
    fn histogram_mass_and_clamping() {
        let h = Histogram::build(&[0.0, 1.0, 2.0], &[-5.0, 0.5, 1.0, 1.5, 9.0]).unwrap();
        assert_eq!(h.mass, vec![0.4, 0.6]);
        assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let e = Histogram::build(&[0.0, 1.0], &[]).unwrap();
        assert_eq!(e.mass, vec![0.0]);
        assert_eq!(e.mode_bin(), None);
        assert!(Histogram::build(&[1.0, 1.0], &[]).is_err());
    }

    fn record(frames: Vec<Frame>, events: Vec<Event>, n: usize) -> RolloutRecord {
        RolloutRecord {
            seed: 0,
            tick: 0.1,
            agent_ids: (1..=n as u64).map(AgentId).collect(),
            lengths: vec![4.0; n],
            frames,
            events,
            waypoints: vec![Vec::new(); n],
            reference: vec![Vec::new(); n],
        }
    }

    #[test]
    fn one_collider_in_twenty_is_five_percent() {
        let n = 20;
        let frame = Frame {
            time: 0.0,
            states: vec![Some(AgentState::default()); n],
            lanes: vec![None; n],
        };
        let ev = Event {
            time: 0.1,
            kind: EventKind::Collision,
            agents: vec![AgentId(3)],
        };
        let r = violation_rates(&[record(vec![frame.clone()], vec![ev], n)]);
        assert!((r.collision_pct.mean - 5.0).abs() < 1e-12);
        assert_eq!(r.offroad_pct.mean, 0.0);
        let clean = violation_rates(&[record(vec![frame], vec![], n)]);
        assert_eq!((clean.collision_pct.mean, clean.offroad_pct.mean), (0.0, 0.0));
    }

    #[test]
    fn platoon_headway_concentrates() {
        // three cars 20 m apart centre to centre, 10 m/s: gap 16 m, headway 1.6 s
        let frames: Vec<Frame> = (0..50)
            .map(|k| {
                let t = k as f64 * 0.1;
                let states = (0..3)
                    .map(|i| Some(AgentState::new(Vec2::new(10.0 * t + 20.0 * i as f64, 0.0), 10.0, 0.0)))
                    .collect();
                let lanes = (0..3).map(|i| Some((LaneId(1), 10.0 * t + 20.0 * i as f64))).collect();
                Frame { time: t, states, lanes }
            })
            .collect();
        let h = style_histograms(&[record(frames, vec![], 3)], &StyleConfig::default()).unwrap();
        let m = h.time_headway.mode_bin().unwrap();
        assert!(h.time_headway.edges[m] <= 1.6 && 1.6 < h.time_headway.edges[m + 1]);
        assert!((h.time_headway.mass[m] - 1.0).abs() < 1e-12);
        assert!((h.acceleration.mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let empty = style_histograms(&[], &StyleConfig::default()).unwrap();
        assert_eq!(empty.time_headway.count, 0);
    }

    #[test]
    fn arrival_errors_and_censoring() {
        let frames: Vec<Frame> = (0..100)
            .map(|k| Frame {
                time: k as f64 * 0.1,
                states: vec![Some(AgentState::new(Vec2::new(k as f64, 0.0), 10.0, 0.0)), None],
                lanes: vec![None, None],
            })
            .collect();
        let mut r = record(frames, vec![], 2);
        r.waypoints[0] = vec![Waypoint {
            position: Vec2::new(50.0, 0.0),
            arrival_time: 0.0,
        }];
        r.waypoints[1] = vec![Waypoint {
            position: Vec2::new(0.0, 0.0),
            arrival_time: 1.0,
        }];
        let rep = arrival_time_errors(&[r], 0.5, 20.0, &[-30.0, 0.0, 30.0]);
        assert_eq!(rep.censored, 1);
        assert!((rep.trips[0].error.unwrap() - 5.0).abs() < 1e-9);
        assert!((rep.within_pct - 50.0).abs() < 1e-12);
    }
}
