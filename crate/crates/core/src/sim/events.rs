use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::scenario::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Departure,
    Collision,
    OffRoad,
    Arrival,
}

/// One log record. Collisions carry two agents, everything else one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub agents: Vec<AgentId>,
}

impl Event {
    pub fn new(time: f64, kind: EventKind, agents: Vec<AgentId>) -> Self {
        Event { time, kind, agents }
    }
}

/// Writes events as newline-delimited JSON.
pub fn write_ndjson<W: Write>(mut out: W, events: &[Event]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(input: R) -> io::Result<Vec<Event>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_round_trip() {
        let events = vec![
            Event::new(0.1, EventKind::Collision, vec![AgentId(1), AgentId(2)]),
            Event::new(0.2, EventKind::Arrival, vec![AgentId(3)]),
        ];
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"time":0.1,"type":"collision","agents":[1,2]}"#);
        assert_eq!(read_ndjson(&buf[..]).unwrap(), events);
    }
}
