//! Discrete-time simulation engine.
//!
//! Every step has two stages. The prepare stage builds one [`Observation`]
//! per active agent (neighbors, lane association) from a read-only view of
//! the world; the update stage evaluates each agent's policy and applies the
//! results at once. Departures, collisions, off-road onsets and arrivals are
//! then logged and time advances by exactly one tick.

mod events;
mod map_index;
mod spatial;
mod track;
mod world;

use crate::geometry::OrientedBox;
use crate::scenario::{AgentAttributes, AgentState};

pub use events::{read_ndjson, write_ndjson, Event, EventKind};
pub use map_index::{current_lane, off_road, LaneGeom, MapIndex, LANE_TOLERANCE};
pub use spatial::{SpatialHash, CELL_SIZE};
pub use track::Track;
pub use world::{
    AgentRuntime, AgentStatus, CollisionMode, Motion, Observation, SimConfig, SimError, Simulator, WorldState,
};
pub(crate) use world::{StepContext, Update};

/// Arrival radius around a route endpoint, meters.
pub const ARRIVAL_RADIUS: f64 = 2.5;

/// Footprint rectangle of an agent.
pub fn footprint(state: &AgentState, attributes: &AgentAttributes) -> OrientedBox {
    OrientedBox::new(state.position, state.heading, attributes.length, attributes.width)
}

/// Index pairs `(i, j)`, `i < j`, whose footprints overlap. Each unordered
/// pair appears once, in ascending order.
pub fn detect_collisions(states: &[AgentState], attributes: &[AgentAttributes]) -> Vec<(usize, usize)> {
    assert_eq!(states.len(), attributes.len());
    let reach = attributes
        .iter()
        .map(|a| a.length.hypot(a.width))
        .fold(0.0, f64::max);
    let hash = SpatialHash::build(CELL_SIZE, states.iter().map(|s| s.position).enumerate());
    let boxes: Vec<OrientedBox> = states.iter().zip(attributes).map(|(s, a)| footprint(s, a)).collect();
    hash.pairs_within(reach)
        .into_iter()
        .filter(|&(i, j)| boxes[i].overlaps(&boxes[j]))
        .collect()
}
