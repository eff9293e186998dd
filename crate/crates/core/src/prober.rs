//! The active prober.
//!
//! It opens a connection with a small MSS, requests a page, acknowledges
//! the response like an ordinary receiver except for the packets the script
//! tells it to pretend were lost, and closes once the ACK point reaches the
//! script's limit. Every segment it sends or sees goes into the trace.
//!
//! The prober talks to the world through a [`PacketPort`]. The simulator
//! provides the only binding here. A live binding would need raw packet
//! injection plus a host firewall rule that keeps the local kernel from
//! answering the peer.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use thiserror::Error;

use crate::ranges::RangeSet;
use crate::segment::{Flags, Role, Segment};
use crate::time::VirtualTime;
use crate::trace_io::{Direction, ObservedTrace, TraceEvent};

/// Payload of the page request. Only its length matters to the server.
pub const REQUEST: &[u8] = b"GET / HTTP/1.0\r\n\r\n";

pub const DEFAULT_EVENT_CAP: usize = 10_000;

/// What a port hands back when asked for the next inbound segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PortEvent {
    /// A segment addressed to the prober; it arrived at [`PacketPort::now`].
    Segment(Segment),
    /// Nothing is pending anywhere and nothing ever will be.
    Idle,
    /// The run's time budget is spent.
    Deadline,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PortError {
    #[error("event at {event} dequeued after clock reached {clock}")]
    TimeRegression {
        event: VirtualTime,
        clock: VirtualTime,
    },
}

/// Bidirectional segment channel between the prober and a remote endpoint.
pub trait PacketPort {
    /// Current time on the port's clock.
    fn now(&self) -> VirtualTime;

    /// Puts `seg` on the wire now.
    fn send(&mut self, seg: Segment);

    /// Blocks (in virtual time) until a segment for the prober arrives.
    fn recv(&mut self) -> Result<PortEvent, PortError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CloseMode {
    #[default]
    Reset,
    Fin,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("probe mss must be positive")]
    ZeroMss,
    #[error("packet indices start at 1")]
    ZeroDropIndex,
    #[error("ack limit {ack_limit} must come after every dropped packet (last drop {last_drop})")]
    AckLimitBeforeDrop { ack_limit: u32, last_drop: u32 },
}

/// The prober's plan. Packet `k` is response bytes `[(k-1)*mss, k*mss)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeScript {
    pub mss: u32,
    pub drop_packets: BTreeSet<u32>,
    pub ack_limit_packet: u32,
    /// Send an immediate duplicate ACK for every out-of-order arrival.
    pub dupack_per_arrival: bool,
    pub close_mode: CloseMode,
}

impl Default for ProbeScript {
    fn default() -> Self {
        ProbeScript {
            mss: 100,
            drop_packets: [13, 16].into_iter().collect(),
            ack_limit_packet: 25,
            dupack_per_arrival: true,
            close_mode: CloseMode::Reset,
        }
    }
}

impl ProbeScript {
    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.mss == 0 {
            return Err(ScriptError::ZeroMss);
        }
        if self.drop_packets.contains(&0) {
            return Err(ScriptError::ZeroDropIndex);
        }
        if let Some(&last_drop) = self.drop_packets.last() {
            if self.ack_limit_packet <= last_drop {
                return Err(ScriptError::AckLimitBeforeDrop {
                    ack_limit: self.ack_limit_packet,
                    last_drop,
                });
            }
        }
        Ok(())
    }

    pub fn packet_index(&self, seq: u64) -> u32 {
        (seq / u64::from(self.mss)) as u32 + 1
    }

    pub fn packet_range(&self, index: u32) -> Range<u64> {
        let mss = u64::from(self.mss);
        let start = u64::from(index.saturating_sub(1)) * mss;
        start..start + mss
    }

    /// Byte offset at which the prober has seen enough and closes.
    pub fn ack_limit_bytes(&self) -> u64 {
        u64::from(self.ack_limit_packet) * u64::from(self.mss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Fresh,
    SynSent,
    Established,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Completed,
    HandshakeTimeout,
    StalledSender,
    TraceOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("no SYN+ACK before the port went quiet")]
    HandshakeTimeout,
    #[error("trace reached its cap of {0} events")]
    TraceOverflow(usize),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Port(#[from] PortError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("trace reached its cap of {0} events")]
pub struct TraceOverflow(pub usize);

/// Receiver-side state of one probe connection.
#[derive(Debug, Clone)]
pub struct ProbeSession {
    script: ProbeScript,
    phase: Phase,
    /// Cumulative ACK point in the server's byte stream.
    rcv_nxt: u64,
    /// Bytes accepted (excludes withheld first arrivals of dropped packets).
    delivered: RangeSet,
    /// Every payload byte range observed on the wire.
    seen: RangeSet,
    /// Dropped packets whose first arrival has already been swallowed.
    withheld: BTreeSet<u32>,
    first_ip_id: BTreeMap<u64, u32>,
    dupacks_sent: u32,
    duplicate_deliveries: u32,
    snd_seq: u64,
    next_ip_id: u32,
    event_cap: usize,
    trace: ObservedTrace,
}

impl ProbeSession {
    pub fn new(script: ProbeScript, event_cap: usize) -> Result<Self, ScriptError> {
        script.validate()?;
        Ok(ProbeSession {
            script,
            phase: Phase::Fresh,
            rcv_nxt: 0,
            delivered: RangeSet::default(),
            seen: RangeSet::default(),
            withheld: BTreeSet::new(),
            first_ip_id: BTreeMap::new(),
            dupacks_sent: 0,
            duplicate_deliveries: 0,
            snd_seq: 0,
            next_ip_id: 1,
            event_cap,
            trace: ObservedTrace::new(),
        })
    }

    pub fn script(&self) -> &ProbeScript {
        &self.script
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn dupacks_sent(&self) -> u32 {
        self.dupacks_sent
    }

    /// Arrivals repeating already-delivered bytes with the same IP id.
    pub fn duplicate_deliveries(&self) -> u32 {
        self.duplicate_deliveries
    }

    /// Distinct payload bytes observed on the wire, dropped ones included.
    pub fn seen_bytes(&self) -> u64 {
        self.seen.total()
    }

    pub fn trace(&self) -> &ObservedTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ObservedTrace {
        self.trace
    }

    fn record(
        &mut self,
        seg: &Segment,
        dir: Direction,
        now: VirtualTime,
    ) -> Result<(), TraceOverflow> {
        if self.trace.len() >= self.event_cap {
            return Err(TraceOverflow(self.event_cap));
        }
        self.trace.push(TraceEvent::from_segment(seg, dir, now));
        Ok(())
    }

    fn outgoing(&mut self, flags: Flags, now: VirtualTime) -> Segment {
        let mut seg = Segment::control(
            Role::Prober,
            flags,
            self.snd_seq,
            self.rcv_nxt,
            self.next_ip_id,
        );
        self.next_ip_id += 1;
        seg.sent_at = now;
        seg
    }

    /// Records and returns outbound segments in order.
    fn emit(
        &mut self,
        segs: Vec<Segment>,
        now: VirtualTime,
    ) -> Result<Vec<Segment>, TraceOverflow> {
        for s in &segs {
            self.record(s, Direction::Tx, now)?;
        }
        Ok(segs)
    }

    /// Builds the SYN carrying the script's MSS and moves to `SynSent`.
    pub fn open(&mut self, now: VirtualTime) -> Result<Segment, TraceOverflow> {
        let mut syn = self.outgoing(Flags::SYN, now);
        syn.mss_option = Some(self.script.mss);
        syn.ack = 0;
        self.record(&syn, Direction::Tx, now)?;
        self.phase = Phase::SynSent;
        Ok(syn)
    }

    /// Handles one inbound segment, returning the prober's replies.
    pub fn on_segment(
        &mut self,
        seg: &Segment,
        now: VirtualTime,
    ) -> Result<Vec<Segment>, TraceOverflow> {
        self.record(seg, Direction::Rx, now)?;
        let replies = match self.phase {
            Phase::Fresh | Phase::Closed => Vec::new(),
            Phase::SynSent => {
                if seg.flags.contains(Flags::SYN | Flags::ACK) {
                    self.phase = Phase::Established;
                    let ack = self.outgoing(Flags::ACK, now);
                    let mut request = self.outgoing(Flags::ACK, now);
                    request.len = REQUEST.len() as u32;
                    self.snd_seq += u64::from(request.len);
                    vec![ack, request]
                } else {
                    Vec::new()
                }
            }
            Phase::Established if seg.is_payload() => self.on_data_segment(seg, now),
            Phase::Established => Vec::new(),
        };
        self.emit(replies, now)
    }

    fn on_data_segment(&mut self, seg: &Segment, now: VirtualTime) -> Vec<Segment> {
        let limit = self.script.ack_limit_bytes();
        let range = seg.range();
        self.seen.insert(range.clone());
        if seg.seq >= limit {
            // past the scripted window: observed, never acknowledged
            return Vec::new();
        }
        let index = self.script.packet_index(seg.seq);
        if self.script.drop_packets.contains(&index) && self.withheld.insert(index) {
            return Vec::new();
        }
        if self.delivered.contains_range(&range) {
            if self.first_ip_id.get(&seg.seq) == Some(&seg.ip_id) {
                self.duplicate_deliveries += 1;
            }
            return vec![self.outgoing(Flags::ACK, now)];
        }

        self.delivered.insert(range);
        self.first_ip_id.entry(seg.seq).or_insert(seg.ip_id);
        let mut out = Vec::new();
        let next = self.delivered.contiguous_end(self.rcv_nxt);
        if next > self.rcv_nxt {
            self.rcv_nxt = next;
            out.push(self.outgoing(Flags::ACK, now));
        } else if self.script.dupack_per_arrival {
            self.dupacks_sent += 1;
            out.push(self.outgoing(Flags::ACK, now));
        }
        if self.rcv_nxt >= limit {
            let close = match self.script.close_mode {
                CloseMode::Reset => Flags::RST,
                CloseMode::Fin => Flags::FIN | Flags::ACK,
            };
            out.push(self.outgoing(close, now));
            self.phase = Phase::Closed;
        }
        out
    }

    /// Sends the SYN if not yet sent, then runs until the port goes quiet.
    /// After closing, the session keeps recording whatever is still in
    /// flight towards it.
    pub fn run<P: PacketPort>(&mut self, port: &mut P) -> Result<ProbeOutcome, PortError> {
        if self.phase == Phase::Fresh {
            match self.open(port.now()) {
                Ok(syn) => port.send(syn),
                Err(_) => return Ok(ProbeOutcome::TraceOverflow),
            }
        }
        loop {
            match port.recv()? {
                PortEvent::Segment(seg) => match self.on_segment(&seg, port.now()) {
                    Ok(replies) => replies.into_iter().for_each(|s| port.send(s)),
                    Err(_) => return Ok(ProbeOutcome::TraceOverflow),
                },
                PortEvent::Idle | PortEvent::Deadline => {
                    return Ok(match self.phase {
                        Phase::Closed => ProbeOutcome::Completed,
                        Phase::Fresh | Phase::SynSent => ProbeOutcome::HandshakeTimeout,
                        Phase::Established => ProbeOutcome::StalledSender,
                    })
                }
            }
        }
    }
}

/// Opens a connection and waits for the SYN+ACK; on success the final ACK
/// and the page request have been sent.
pub fn probe_handshake<P: PacketPort>(
    port: &mut P,
    script: ProbeScript,
    event_cap: usize,
) -> Result<ProbeSession, ProbeError> {
    let mut session = ProbeSession::new(script, event_cap)?;
    let syn = session
        .open(port.now())
        .map_err(|e| ProbeError::TraceOverflow(e.0))?;
    port.send(syn);
    while session.phase() == Phase::SynSent {
        match port.recv()? {
            PortEvent::Segment(seg) => {
                let replies = session
                    .on_segment(&seg, port.now())
                    .map_err(|e| ProbeError::TraceOverflow(e.0))?;
                replies.into_iter().for_each(|s| port.send(s));
            }
            PortEvent::Idle | PortEvent::Deadline => return Err(ProbeError::HandshakeTimeout),
        }
    }
    Ok(session)
}

/// Runs the whole script over `port`. The trace is returned whatever the outcome.
pub fn run_probe<P: PacketPort>(
    port: &mut P,
    script: ProbeScript,
    event_cap: usize,
) -> Result<(ObservedTrace, ProbeOutcome), ProbeRunError> {
    let mut session = ProbeSession::new(script, event_cap)?;
    let outcome = session.run(port)?;
    Ok((session.into_trace(), outcome))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeRunError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Port(#[from] PortError),
}
