//! Minimal web-server endpoint wrapped around a [`SenderState`].
//!
//! Any nonempty request gets the whole page back; the bytes themselves are
//! never interpreted.

use std::cmp::min;

use crate::segment::{Flags, Role, Segment};
use crate::sender::{SenderConfig, SenderState, Variant};
use crate::time::VirtualTime;

/// MSS assumed when a SYN carries no option.
const DEFAULT_PEER_MSS: u32 = 536;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerState {
    Listen,
    SynReceived,
    Established,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServerDiagnostics {
    /// Segments dropped because they arrived in the wrong state.
    pub ignored_segments: u32,
    /// ACKs or timer calls the sender rejected.
    pub protocol_errors: u32,
}

#[derive(Debug, Clone)]
pub struct HttpServer {
    variant: Variant,
    config: SenderConfig,
    page_bytes: u64,
    state: ServerState,
    sender: Option<SenderState>,
    request_seen: bool,
    /// Bytes of the peer's stream received so far.
    rcv_nxt: u64,
    diagnostics: ServerDiagnostics,
}

impl HttpServer {
    pub fn new(variant: Variant, config: SenderConfig, page_bytes: u64) -> Self {
        HttpServer {
            variant,
            config,
            page_bytes,
            state: ServerState::Listen,
            sender: None,
            request_seen: false,
            rcv_nxt: 0,
            diagnostics: ServerDiagnostics::default(),
        }
    }

    pub fn state(&self) -> ServerState {
        self.state
    }

    pub fn sender(&self) -> Option<&SenderState> {
        self.sender.as_ref()
    }

    pub fn diagnostics(&self) -> ServerDiagnostics {
        self.diagnostics
    }

    /// When the sender's retransmission timer fires, if it is running.
    pub fn rto_deadline(&self) -> Option<VirtualTime> {
        if self.state == ServerState::Closed {
            return None;
        }
        self.sender.as_ref().and_then(SenderState::rto_deadline)
    }

    fn stamp(&self, mut segs: Vec<Segment>) -> Vec<Segment> {
        for s in &mut segs {
            s.ack = self.rcv_nxt;
        }
        segs
    }

    /// Handles one segment from the prober.
    pub fn step(&mut self, seg: &Segment, now: VirtualTime) -> Vec<Segment> {
        if self.state == ServerState::Closed {
            return Vec::new();
        }
        if seg.flags.contains(Flags::RST) {
            self.state = ServerState::Closed;
            return Vec::new();
        }
        match self.state {
            ServerState::Listen => self.on_listen(seg, now),
            ServerState::SynReceived => {
                if seg.flags.contains(Flags::ACK) {
                    self.state = ServerState::Established;
                    self.on_established(seg, now)
                } else {
                    self.diagnostics.ignored_segments += 1;
                    Vec::new()
                }
            }
            ServerState::Established => self.on_established(seg, now),
            ServerState::Closed => Vec::new(),
        }
    }

    fn on_listen(&mut self, seg: &Segment, now: VirtualTime) -> Vec<Segment> {
        if !seg.flags.contains(Flags::SYN) || seg.flags.contains(Flags::ACK) {
            self.diagnostics.ignored_segments += 1;
            return Vec::new();
        }
        let offered = seg.mss_option.unwrap_or(DEFAULT_PEER_MSS);
        let mss = min(self.config.mss, offered);
        let mut sender = match SenderState::new(self.config.clone().with_mss(mss), self.variant) {
            Ok(s) => s,
            Err(_) => {
                self.diagnostics.ignored_segments += 1;
                return Vec::new();
            }
        };
        let mut synack = Segment::control(
            Role::Server,
            Flags::SYN | Flags::ACK,
            0,
            0,
            sender.take_ip_id(),
        );
        synack.mss_option = Some(mss);
        synack.sent_at = now;
        self.sender = Some(sender);
        self.state = ServerState::SynReceived;
        vec![synack]
    }

    fn on_established(&mut self, seg: &Segment, now: VirtualTime) -> Vec<Segment> {
        if seg.flags.contains(Flags::FIN) {
            // the client has gone away; nothing more to serve
            self.state = ServerState::Closed;
            return Vec::new();
        }
        let Some(sender) = self.sender.as_mut() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if self.request_seen && seg.flags.contains(Flags::ACK) {
            match sender.on_ack(seg.ack, now) {
                Ok(segs) => out.extend(segs),
                Err(_) => self.diagnostics.protocol_errors += 1,
            }
        }
        if seg.is_payload() {
            self.rcv_nxt = self.rcv_nxt.max(seg.end());
            if !self.request_seen {
                self.request_seen = true;
                sender.enqueue_app_data(self.page_bytes);
                out.extend(sender.pump_transmissions(now));
            }
        }
        self.stamp(out)
    }

    /// Retransmission timer expiry.
    pub fn on_timer(&mut self, now: VirtualTime) -> Vec<Segment> {
        if self.state == ServerState::Closed {
            return Vec::new();
        }
        let Some(sender) = self.sender.as_mut() else {
            return Vec::new();
        };
        match sender.on_rto(now) {
            Ok(segs) => self.stamp(segs),
            Err(_) => {
                self.diagnostics.protocol_errors += 1;
                Vec::new()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syn(mss: u32) -> Segment {
        let mut s = Segment::control(Role::Prober, Flags::SYN, 0, 0, 1);
        s.mss_option = Some(mss);
        s
    }

    fn ack(ack: u64, len: u32) -> Segment {
        let mut s = Segment::control(Role::Prober, Flags::ACK, 0, ack, 2);
        s.len = len;
        s
    }

    fn server() -> HttpServer {
        HttpServer::new(Variant::Reno, SenderConfig::default(), 3000)
    }

    #[test]
    fn synack_echoes_smaller_mss() {
        let mut srv = server();
        let out = srv.step(&syn(100), VirtualTime::from_millis(50));
        assert_eq!(out.len(), 1);
        assert!(out[0].flags.contains(Flags::SYN | Flags::ACK));
        assert_eq!(out[0].mss_option, Some(100));
        assert_eq!(srv.sender().unwrap().config().mss, 100);
        assert_eq!(srv.state(), ServerState::SynReceived);

        let mut srv = server();
        let out = srv.step(&syn(9000), VirtualTime::ZERO);
        assert_eq!(out[0].mss_option, Some(1460));
    }

    #[test]
    fn request_triggers_initial_window() {
        let mut srv = server();
        srv.step(&syn(100), VirtualTime::ZERO);
        assert!(srv.step(&ack(0, 0), VirtualTime::ZERO).is_empty());
        let out = srv.step(&ack(0, 18), VirtualTime::from_millis(150));
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|s| s.len == 100 && s.ack == 18));
        // ip ids continue from the SYN+ACK
        assert_eq!(out[0].ip_id, 2);
        assert_eq!(out[1].ip_id, 3);
        // a second request is not served again
        assert!(srv
            .step(&ack(0, 18), VirtualTime::from_millis(151))
            .is_empty());
    }

    #[test]
    fn payload_before_handshake_is_ignored() {
        let mut srv = server();
        assert!(srv.step(&ack(0, 18), VirtualTime::ZERO).is_empty());
        assert_eq!(srv.diagnostics().ignored_segments, 1);
        assert_eq!(srv.state(), ServerState::Listen);
    }

    #[test]
    fn reset_silences_server_for_good() {
        let mut srv = server();
        srv.step(&syn(100), VirtualTime::ZERO);
        srv.step(&ack(0, 0), VirtualTime::ZERO);
        srv.step(&ack(0, 18), VirtualTime::ZERO);
        assert!(srv.rto_deadline().is_some());
        let rst = Segment::control(Role::Prober, Flags::RST, 18, 0, 3);
        assert!(srv.step(&rst, VirtualTime::from_millis(1)).is_empty());
        assert_eq!(srv.state(), ServerState::Closed);
        assert_eq!(srv.rto_deadline(), None);
        assert!(srv
            .step(&ack(100, 0), VirtualTime::from_millis(2))
            .is_empty());
        assert!(srv.on_timer(VirtualTime::from_millis(5000)).is_empty());
    }
}
