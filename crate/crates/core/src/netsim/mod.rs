//! Deterministic discrete-event world: a server endpoint and the prober
//! joined by a fixed-delay, lossless, order-preserving link.
//!
//! Events are ordered by `(time, insertion order)`, so simultaneous events
//! are processed first-in first-out and every run of the same scenario is
//! bit-identical.

mod server;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::time::Duration;

use thiserror::Error;

pub use server::{HttpServer, ServerDiagnostics, ServerState};

use crate::prober::{
    PacketPort, PortError, PortEvent, ProbeOutcome, ProbeScript, ProbeSession, ScriptError,
    DEFAULT_EVENT_CAP,
};
use crate::segment::{Role, Segment};
use crate::sender::{ConfigError, SenderConfig, SenderSnapshot, Variant};
use crate::time::VirtualTime;
use crate::trace_io::ObservedTrace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("sender configuration: {0}")]
    Sender(#[from] ConfigError),
    #[error("probe script: {0}")]
    Script(#[from] ScriptError),
    #[error("page of {page} bytes cannot satisfy the script, which needs at least {needed}")]
    PageTooSmall { page: u64, needed: u64 },
    #[error("rtt must be a positive, even number of microseconds (got {0:?})")]
    BadRtt(Duration),
    #[error("run deadline {deadline:?} must exceed ten round trips ({min:?})")]
    DeadlineTooShort { deadline: Duration, min: Duration },
    #[error(transparent)]
    Port(#[from] PortError),
}

/// Everything needed to reproduce one simulated probe run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub variant: Variant,
    /// Round-trip time; each direction takes half.
    pub rtt: Duration,
    pub page_bytes: u64,
    pub sender_config: SenderConfig,
    pub probe_script: ProbeScript,
    pub run_deadline: Duration,
    pub event_cap: usize,
    /// IP ids of server segments the link loses. Empty except in
    /// robustness tests.
    pub ambient_drops: BTreeSet<u32>,
}

impl Scenario {
    pub fn new(variant: Variant) -> Self {
        Scenario {
            variant,
            rtt: Duration::from_millis(100),
            page_bytes: 3000,
            sender_config: SenderConfig::default(),
            probe_script: ProbeScript::default(),
            run_deadline: Duration::from_secs(60),
            event_cap: DEFAULT_EVENT_CAP,
            ambient_drops: BTreeSet::new(),
        }
    }

    pub fn with_rtt(mut self, rtt: Duration) -> Self {
        self.rtt = rtt;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.sender_config.validate()?;
        self.probe_script.validate()?;
        let rtt_us = self.rtt.as_micros();
        if rtt_us == 0 || !rtt_us.is_multiple_of(2) {
            return Err(SimError::BadRtt(self.rtt));
        }
        let needed =
            (u64::from(self.probe_script.ack_limit_packet) + 1) * u64::from(self.probe_script.mss);
        if self.page_bytes < needed {
            return Err(SimError::PageTooSmall {
                page: self.page_bytes,
                needed,
            });
        }
        let min = self.rtt * 10;
        if self.run_deadline <= min {
            return Err(SimError::DeadlineTooShort {
                deadline: self.run_deadline,
                min,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// The prober reached its ACK limit and closed.
    ProberClosed,
    /// Nothing left to happen before the prober could finish.
    Quiescent,
    DeadlineExceeded,
    /// The prober gave up because its trace hit the event cap.
    ProberAborted,
}

/// One segment's trip across the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub from: Role,
    pub ip_id: u32,
    pub sent_at: VirtualTime,
    pub arrived_at: VirtualTime,
}

/// Result of [`SimWorld::run_to_completion`].
#[derive(Debug, Clone)]
pub struct SimRun {
    pub trace: ObservedTrace,
    pub termination: TerminationReason,
    pub outcome: ProbeOutcome,
    pub final_clock: VirtualTime,
    /// Sender window state after every server-side event. Never consulted
    /// by the classifier.
    pub sender_log: Vec<(VirtualTime, SenderSnapshot)>,
    pub deliveries: Vec<Delivery>,
    pub server: ServerDiagnostics,
    pub duplicate_deliveries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    ToServer(Segment),
    ToProber(Segment),
    ServerTimer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Scheduled {
    at: VirtualTime,
    order: u64,
    event: Event,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.order).cmp(&(other.at, other.order))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// The network and server side of the world; the prober's [`PacketPort`].
#[derive(Debug)]
pub struct SimNet {
    clock: VirtualTime,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_order: u64,
    one_way: Duration,
    deadline: VirtualTime,
    server: HttpServer,
    timer_at: Option<VirtualTime>,
    ambient_drops: BTreeSet<u32>,
    hit_deadline: bool,
    sender_log: Vec<(VirtualTime, SenderSnapshot)>,
    deliveries: Vec<Delivery>,
}

impl SimNet {
    fn new(scenario: &Scenario) -> Self {
        SimNet {
            clock: VirtualTime::ZERO,
            queue: BinaryHeap::new(),
            next_order: 0,
            one_way: scenario.rtt / 2,
            deadline: VirtualTime::ZERO + scenario.run_deadline,
            server: HttpServer::new(
                scenario.variant,
                scenario.sender_config.clone(),
                scenario.page_bytes,
            ),
            timer_at: None,
            ambient_drops: scenario.ambient_drops.clone(),
            hit_deadline: false,
            sender_log: Vec::new(),
            deliveries: Vec::new(),
        }
    }

    fn schedule(&mut self, at: VirtualTime, event: Event) {
        let order = self.next_order;
        self.next_order += 1;
        self.queue.push(Reverse(Scheduled { at, order, event }));
    }

    fn route_server_output(&mut self, out: Vec<Segment>) {
        for seg in out {
            if self.ambient_drops.contains(&seg.ip_id) {
                continue;
            }
            self.schedule(self.clock + self.one_way, Event::ToProber(seg));
        }
        if let Some(sender) = self.server.sender() {
            self.sender_log.push((self.clock, sender.snapshot()));
        }
        match self.server.rto_deadline() {
            Some(d) if self.timer_at != Some(d) => {
                self.timer_at = Some(d);
                self.schedule(d, Event::ServerTimer);
            }
            Some(_) => {}
            None => self.timer_at = None,
        }
    }

    fn log_delivery(&mut self, seg: &Segment) {
        self.deliveries.push(Delivery {
            from: seg.src_role,
            ip_id: seg.ip_id,
            sent_at: seg.sent_at,
            arrived_at: self.clock,
        });
    }

    pub fn server(&self) -> &HttpServer {
        &self.server
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }
}

impl PacketPort for SimNet {
    fn now(&self) -> VirtualTime {
        self.clock
    }

    fn send(&mut self, mut seg: Segment) {
        seg.sent_at = self.clock;
        self.schedule(self.clock + self.one_way, Event::ToServer(seg));
    }

    fn recv(&mut self) -> Result<PortEvent, PortError> {
        loop {
            let Some(Reverse(next)) = self.queue.peek() else {
                return Ok(PortEvent::Idle);
            };
            if next.at > self.deadline {
                self.hit_deadline = true;
                return Ok(PortEvent::Deadline);
            }
            let Some(Reverse(next)) = self.queue.pop() else {
                return Ok(PortEvent::Idle);
            };
            if next.at < self.clock {
                return Err(PortError::TimeRegression {
                    event: next.at,
                    clock: self.clock,
                });
            }
            self.clock = next.at;
            match next.event {
                Event::ToProber(seg) => {
                    self.log_delivery(&seg);
                    return Ok(PortEvent::Segment(seg));
                }
                Event::ToServer(seg) => {
                    self.log_delivery(&seg);
                    let out = self.server.step(&seg, self.clock);
                    self.route_server_output(out);
                }
                Event::ServerTimer => {
                    // stale unless it matches the sender's current deadline
                    if self.server.rto_deadline() == Some(next.at) {
                        let out = self.server.on_timer(self.clock);
                        self.route_server_output(out);
                    }
                }
            }
        }
    }
}

/// A scenario ready to run: the prober's SYN is already on the wire.
#[derive(Debug)]
pub struct SimWorld {
    net: SimNet,
    session: ProbeSession,
}

impl SimWorld {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut net = SimNet::new(scenario);
        let mut session = ProbeSession::new(scenario.probe_script.clone(), scenario.event_cap)?;
        // with a zero cap the SYN cannot be recorded; run() reports the overflow
        if let Ok(syn) = session.open(net.now()) {
            net.send(syn);
        }
        Ok(SimWorld { net, session })
    }

    pub fn clock(&self) -> VirtualTime {
        self.net.clock
    }

    pub fn pending_events(&self) -> usize {
        self.net.pending_events()
    }

    pub fn net(&self) -> &SimNet {
        &self.net
    }

    /// Runs until the world goes quiet or the deadline passes. A closed
    /// prober keeps recording until the wire drains.
    pub fn run_to_completion(mut self) -> Result<SimRun, SimError> {
        let outcome = self.session.run(&mut self.net)?;
        let termination = match outcome {
            ProbeOutcome::Completed => TerminationReason::ProberClosed,
            ProbeOutcome::TraceOverflow => TerminationReason::ProberAborted,
            ProbeOutcome::HandshakeTimeout | ProbeOutcome::StalledSender
                if self.net.hit_deadline =>
            {
                TerminationReason::DeadlineExceeded
            }
            ProbeOutcome::HandshakeTimeout | ProbeOutcome::StalledSender => {
                TerminationReason::Quiescent
            }
        };
        let duplicate_deliveries = self.session.duplicate_deliveries();
        Ok(SimRun {
            trace: self.session.into_trace(),
            termination,
            outcome,
            final_clock: self.net.clock,
            server: self.net.server.diagnostics(),
            sender_log: self.net.sender_log,
            deliveries: self.net.deliveries,
            duplicate_deliveries,
        })
    }
}

/// Builds and runs `scenario` in one go.
pub fn simulate(scenario: &Scenario) -> Result<SimRun, SimError> {
    SimWorld::new(scenario)?.run_to_completion()
}
