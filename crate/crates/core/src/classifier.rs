//! Infers the congestion-control variant from a probe trace alone.
//!
//! Retransmissions are found by byte-range overlap with a rising IP id and
//! timed against the handshake RTT: a retransmission preceded by a long
//! silence from the sender came from the retransmission timer, anything
//! else from duplicate ACKs. The resulting features go through a fixed
//! decision table.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prober::{ProbeScript, DEFAULT_EVENT_CAP};
use crate::trace_io::{Direction, EventKind, ObservedTrace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// A retransmission preceded by more than `timeout_factor * rtt` of
    /// sender silence counts as a timeout.
    pub timeout_factor: f64,
    /// Traces this long are assumed to have been cut off by the prober.
    pub event_cap: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            timeout_factor: 3.0,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetxKind {
    None,
    Fast,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NewReno,
    Reno,
    Tahoe,
    NoFastRetransmit,
    RenoPlus,
    Unclassifiable,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
pub enum ClassifyError {
    #[error("trace shows packet reordering")]
    Reordering,
    #[error("trace hit the prober's event cap")]
    TraceOverflow,
    #[error("trace is incomplete")]
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Label(Label),
    Error(ClassifyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Round-trip estimate, virtual milliseconds.
    pub rtt_est: f64,
    /// How the first dropped packet was repaired.
    pub retx13: RetxKind,
    /// How the second dropped packet was repaired.
    pub retx16: RetxKind,
    /// The packet after the second drop was sent again although the prober held it.
    pub unnecessary_retx17: bool,
    /// Some packet that was never dropped was retransmitted between the two repairs.
    pub extra_retx_between_13_and_16: bool,
    pub reordering_detected: bool,
    pub retransmission_count: u32,
}

impl Default for FeatureVector {
    fn default() -> Self {
        FeatureVector {
            rtt_est: 0.0,
            retx13: RetxKind::None,
            retx16: RetxKind::None,
            unnecessary_retx17: false,
            extra_retx_between_13_and_16: false,
            reordering_detected: false,
            retransmission_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    /// Position of the event in the trace.
    pub event: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub features: FeatureVector,
    pub evidence: Vec<Evidence>,
}

impl ClassificationReport {
    fn error(error: ClassifyError, features: FeatureVector, evidence: Vec<Evidence>) -> Self {
        ClassificationReport {
            verdict: Verdict::Error(error),
            features,
            evidence,
        }
    }

    pub fn label(&self) -> Option<Label> {
        match self.verdict {
            Verdict::Label(l) => Some(l),
            Verdict::Error(_) => None,
        }
    }

    pub fn error_kind(&self) -> Option<ClassifyError> {
        match self.verdict {
            Verdict::Label(_) => None,
            Verdict::Error(e) => Some(e),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A data arrival whose bytes had been seen before under a lower IP id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retransmission {
    /// Position of the arrival in the trace.
    pub event: usize,
    pub index: u32,
    pub t_us: u64,
    pub kind: RetxKind,
    /// Time since the previous data arrival.
    pub gap_us: u64,
}

/// Handshake round trip (SYN out to SYN+ACK in), in microseconds. Falls
/// back to the gap between the request and the first data arrival.
pub fn estimate_rtt(trace: &ObservedTrace) -> Result<u64, ClassifyError> {
    let find = |pred: &dyn Fn(&TraceEvent) -> bool| trace.iter().find(|e| pred(e)).map(|e| e.t_us);
    let syn = find(&|e| e.dir == Direction::Tx && e.kind == EventKind::Syn);
    let synack = find(&|e| e.dir == Direction::Rx && e.kind == EventKind::Synack);
    if let (Some(a), Some(b)) = (syn, synack) {
        if b > a {
            return Ok(b - a);
        }
    }
    let request = find(&|e| e.dir == Direction::Tx && e.kind == EventKind::Data);
    if let Some(req) = request {
        let data = trace
            .iter()
            .find(|e| e.is_rx_data() && e.t_us >= req)
            .map(|e| e.t_us);
        if let Some(d) = data {
            if d > req {
                return Ok(d - req);
            }
        }
    }
    Err(ClassifyError::Incomplete)
}

fn overlaps(a: &TraceEvent, b: &TraceEvent) -> bool {
    a.seq < b.end() && b.seq < a.end()
}

/// Finds every retransmitted arrival in the trace. `rtt_us` and
/// `timeout_factor` set the silence threshold separating timer-driven
/// retransmissions from fast ones.
pub fn detect_retransmissions(
    trace: &ObservedTrace,
    script: &ProbeScript,
    rtt_us: u64,
    timeout_factor: f64,
) -> Vec<Retransmission> {
    let threshold = timeout_factor * rtt_us as f64;
    let mut seen: Vec<&TraceEvent> = Vec::new();
    let mut last_arrival: Option<u64> = None;
    let mut out = Vec::new();
    for (i, e) in trace.iter().enumerate() {
        if !e.is_rx_data() {
            continue;
        }
        let earlier_id = seen
            .iter()
            .filter(|s| overlaps(s, e))
            .map(|s| s.ip_id)
            .max();
        if let Some(earlier) = earlier_id {
            if e.ip_id > earlier {
                let gap_us = last_arrival.map_or(0, |t| e.t_us - t);
                let kind = if gap_us as f64 > threshold {
                    RetxKind::Timeout
                } else {
                    RetxKind::Fast
                };
                out.push(Retransmission {
                    event: i,
                    index: script.packet_index(e.seq),
                    t_us: e.t_us,
                    kind,
                    gap_us,
                });
            }
        }
        seen.push(e);
        last_arrival = Some(e.t_us);
    }
    out
}

/// True when a data arrival that is not a repeat of earlier bytes carries a
/// lower IP id than something that arrived before it.
pub fn detect_reordering(trace: &ObservedTrace) -> bool {
    let mut seen: Vec<&TraceEvent> = Vec::new();
    let mut max_id: Option<u32> = None;
    for e in trace.iter().filter(|e| e.is_rx_data()) {
        let repeat = seen.iter().any(|s| overlaps(s, e));
        if !repeat && max_id.is_some_and(|m| e.ip_id < m) {
            return true;
        }
        max_id = Some(max_id.map_or(e.ip_id, |m| m.max(e.ip_id)));
        seen.push(e);
    }
    false
}

/// Maps features to a label. Rows are tried in order; the first match wins.
pub fn classify(features: &FeatureVector) -> ClassificationReport {
    let label = if features.reordering_detected {
        return ClassificationReport::error(
            ClassifyError::Reordering,
            features.clone(),
            Vec::new(),
        );
    } else if features.retx13 == RetxKind::Timeout {
        Label::NoFastRetransmit
    } else if features.retx13 == RetxKind::None {
        Label::Unclassifiable
    } else if features.extra_retx_between_13_and_16 {
        Label::RenoPlus
    } else if features.unnecessary_retx17 {
        Label::Tahoe
    } else if features.retx16 == RetxKind::Timeout {
        Label::Reno
    } else if features.retx16 == RetxKind::Fast && features.retransmission_count <= 2 {
        Label::NewReno
    } else {
        Label::Unclassifiable
    };
    ClassificationReport {
        verdict: Verdict::Label(label),
        features: features.clone(),
        evidence: Vec::new(),
    }
}

fn has_close(trace: &ObservedTrace) -> bool {
    trace
        .iter()
        .any(|e| e.dir == Direction::Tx && matches!(e.kind, EventKind::Rst | EventKind::Fin))
}

/// Full pipeline: RTT, reordering, retransmissions, features, decision table.
pub fn classify_trace(
    trace: &ObservedTrace,
    script: &ProbeScript,
    cfg: &ClassifierConfig,
) -> ClassificationReport {
    if trace.len() >= cfg.event_cap {
        return ClassificationReport::error(
            ClassifyError::TraceOverflow,
            FeatureVector::default(),
            Vec::new(),
        );
    }
    let rtt_us = match estimate_rtt(trace) {
        Ok(r) => r,
        Err(e) => return ClassificationReport::error(e, FeatureVector::default(), Vec::new()),
    };
    let mut features = FeatureVector {
        rtt_est: rtt_us as f64 / 1_000.0,
        ..FeatureVector::default()
    };
    if !has_close(trace) {
        let evidence = vec![Evidence {
            event: trace.len().saturating_sub(1),
            note: "prober never closed the connection".into(),
        }];
        return ClassificationReport::error(ClassifyError::Incomplete, features, evidence);
    }
    features.reordering_detected = detect_reordering(trace);

    // resends of packets the prober never agreed to take say nothing about recovery
    let retx: Vec<Retransmission> =
        detect_retransmissions(trace, script, rtt_us, cfg.timeout_factor)
            .into_iter()
            .filter(|r| r.index <= script.ack_limit_packet)
            .collect();
    features.retransmission_count = retx.len() as u32;
    let mut evidence: Vec<Evidence> = retx
        .iter()
        .map(|r| Evidence {
            event: r.event,
            note: format!(
                "retransmission of packet {} ({:?}, {:.1} ms after previous arrival)",
                r.index,
                r.kind,
                r.gap_us as f64 / 1_000.0
            ),
        })
        .collect();

    let first_drop = script.drop_packets.first().copied();
    let second_drop = script.drop_packets.iter().nth(1).copied();
    let repair_of = |idx: Option<u32>| idx.and_then(|k| retx.iter().find(|r| r.index == k));
    let first_repair = repair_of(first_drop);
    let second_repair = repair_of(second_drop);

    features.retx13 = first_repair.map_or(RetxKind::None, |r| r.kind);
    features.retx16 = match (first_repair, second_repair) {
        (Some(_), Some(r)) => r.kind,
        _ => RetxKind::None,
    };

    if let Some(second) = second_drop {
        let follower = second + 1;
        let end = script.packet_range(follower).end;
        let covered_at = trace.iter().position(|e| e.is_tx_ack() && e.ack >= end);
        features.unnecessary_retx17 = !script.drop_packets.contains(&follower)
            && covered_at
                .is_some_and(|at| retx.iter().any(|r| r.index == follower && r.event > at));
    }

    if let (Some(a), Some(b)) = (first_repair, second_repair) {
        let extra: Vec<&Retransmission> = retx
            .iter()
            .filter(|r| {
                r.event > a.event && r.event < b.event && !script.drop_packets.contains(&r.index)
            })
            .collect();
        features.extra_retx_between_13_and_16 = !extra.is_empty();
        for r in extra {
            evidence.push(Evidence {
                event: r.event,
                note: format!("packet {} resent between the two repairs", r.index),
            });
        }
    }

    let mut report = classify(&features);
    report.evidence = evidence;
    report
}
