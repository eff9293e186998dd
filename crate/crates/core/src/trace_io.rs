//! The prober-side packet trace, its line-delimited JSON encoding, and
//! time-sequence plot points.
//!
//! Trace files hold one JSON object per line with exactly the fields of
//! [`TraceEvent`]. Plot files are `t_us,y,marker` CSV.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::{Flags, Segment};
use crate::time::VirtualTime;

/// Direction from the prober's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Syn,
    Synack,
    Data,
    Ack,
    Rst,
    Fin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub t_us: u64,
    pub dir: Direction,
    pub kind: EventKind,
    pub seq: u64,
    pub len: u32,
    pub ack: u64,
    pub ip_id: u32,
}

impl TraceEvent {
    /// Records `seg` as seen by the prober at `at`.
    pub fn from_segment(seg: &Segment, dir: Direction, at: VirtualTime) -> Self {
        let kind = if seg.flags.contains(Flags::RST) {
            EventKind::Rst
        } else if seg.flags.contains(Flags::SYN) {
            if seg.flags.contains(Flags::ACK) {
                EventKind::Synack
            } else {
                EventKind::Syn
            }
        } else if seg.flags.contains(Flags::FIN) {
            EventKind::Fin
        } else if seg.len > 0 {
            EventKind::Data
        } else {
            EventKind::Ack
        };
        TraceEvent {
            t_us: at.as_micros(),
            dir,
            kind,
            seq: seg.seq,
            len: seg.len,
            ack: seg.ack,
            ip_id: seg.ip_id,
        }
    }

    pub fn end(&self) -> u64 {
        self.seq + u64::from(self.len)
    }

    pub fn is_rx_data(&self) -> bool {
        self.dir == Direction::Rx && self.kind == EventKind::Data
    }

    pub fn is_tx_ack(&self) -> bool {
        self.dir == Direction::Tx && self.kind == EventKind::Ack
    }

    fn validate(&self) -> Result<(), &'static str> {
        match self.kind {
            EventKind::Data if self.len == 0 => Err("data event with zero length"),
            EventKind::Ack if self.len != 0 => Err("ack event with payload"),
            _ => Ok(()),
        }
    }
}

/// Time-ordered record of everything the prober sent or saw.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservedTrace {
    events: Vec<TraceEvent>,
}

impl ObservedTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trace from already-ordered events, rejecting time regressions.
    pub fn from_events(events: Vec<TraceEvent>) -> Result<Self, TraceIoError> {
        check_sorted(&events)?;
        Ok(ObservedTrace { events })
    }

    pub fn push(&mut self, event: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|l| l.t_us <= event.t_us));
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Keeps only the first `n` events.
    pub fn truncate(&mut self, n: usize) {
        self.events.truncate(n);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceEvent> {
        self.events.iter()
    }
}

impl<'a> IntoIterator for &'a ObservedTrace {
    type Item = &'a TraceEvent;
    type IntoIter = std::slice::Iter<'a, TraceEvent>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: &'static str },
    #[error("line {line}: timestamp goes backwards")]
    Unsorted { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_sorted(events: &[TraceEvent]) -> Result<(), TraceIoError> {
    for (i, e) in events.iter().enumerate() {
        e.validate().map_err(|reason| TraceIoError::Invalid {
            line: i + 1,
            reason,
        })?;
        if i > 0 && events[i - 1].t_us > e.t_us {
            return Err(TraceIoError::Unsorted { line: i + 1 });
        }
    }
    Ok(())
}

pub fn write_trace<W: Write>(trace: &ObservedTrace, mut sink: W) -> io::Result<()> {
    for event in trace {
        serde_json::to_writer(&mut sink, event)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn read_trace<R: BufRead>(source: R) -> Result<ObservedTrace, TraceIoError> {
    let mut events = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let event: TraceEvent =
            serde_json::from_str(&line).map_err(|source| TraceIoError::Parse {
                line: i + 1,
                source,
            })?;
        events.push(event);
    }
    ObservedTrace::from_events(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    /// A data packet arriving at the prober.
    Packet,
    /// An ACK leaving the prober.
    Ack,
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Marker::Packet => "packet",
            Marker::Ack => "ack",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlotPoint {
    pub t_us: u64,
    pub y: u64,
    pub marker: Marker,
}

/// Time-sequence graph points: received data at `seq + len`, sent ACKs at
/// their ACK number.
pub fn emit_plot_points(trace: &ObservedTrace) -> Vec<PlotPoint> {
    trace
        .iter()
        .filter_map(|e| {
            if e.is_rx_data() {
                Some(PlotPoint {
                    t_us: e.t_us,
                    y: e.end(),
                    marker: Marker::Packet,
                })
            } else if e.is_tx_ack() {
                Some(PlotPoint {
                    t_us: e.t_us,
                    y: e.ack,
                    marker: Marker::Ack,
                })
            } else {
                None
            }
        })
        .collect()
}

pub fn write_plot<W: Write>(points: &[PlotPoint], mut sink: W) -> io::Result<()> {
    writeln!(sink, "t_us,y,marker")?;
    for p in points {
        writeln!(sink, "{},{},{}", p.t_us, p.y, p.marker)?;
    }
    sink.flush()
}
