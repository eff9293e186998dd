//! Server-side TCP sender for the five emulated congestion-control variants.
//!
//! The sender is a pure state machine. Callers feed it events together with
//! the current virtual time and it hands back the segments it wants on the
//! wire. All window arithmetic is
//! done in raw bytes.

mod rtt;

use std::cmp::{max, min};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rtt::RttEstimator;

use crate::segment::{Flags, Role, Segment};
use crate::time::{duration_from_millis_f64, millis_f64, VirtualTime};

/// Congestion-control behavior of a sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Fast retransmit followed by slow start from one segment (go-back).
    Tahoe,
    /// Fast retransmit and fast recovery; any new ACK ends recovery.
    Reno,
    /// Reno, but partial ACKs keep the sender in recovery and repair the next hole.
    NewReno,
    /// Duplicate ACKs are ignored; losses are repaired by the retransmission timer only.
    NoFastRetransmit,
    /// Reno whose fast retransmit resends everything from the hole onward
    /// without shrinking the window.
    RenoPlus,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Tahoe,
        Variant::Reno,
        Variant::NewReno,
        Variant::NoFastRetransmit,
        Variant::RenoPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tahoe => "Tahoe",
            Variant::Reno => "Reno",
            Variant::NewReno => "NewReno",
            Variant::NoFastRetransmit => "NoFastRetransmit",
            Variant::RenoPlus => "RenoPlus",
        }
    }

    /// Whether duplicate ACKs past the threshold inflate the usable window.
    pub fn has_fast_recovery(self) -> bool {
        matches!(self, Variant::Reno | Variant::NewReno | Variant::RenoPlus)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown congestion-control variant `{0}`")]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "tahoe" => Ok(Variant::Tahoe),
            "reno" => Ok(Variant::Reno),
            "newreno" => Ok(Variant::NewReno),
            "nofastretransmit" | "nofr" => Ok(Variant::NoFastRetransmit),
            "renoplus" => Ok(Variant::RenoPlus),
            _ => Err(UnknownVariant(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("mss must be positive")]
    ZeroMss,
    #[error("initial congestion window must be at least one segment")]
    ZeroInitialCwnd,
    #[error("duplicate-ACK threshold must be at least one")]
    ZeroDupackThreshold,
    #[error("retransmission timeout bounds must satisfy min <= initial <= max (got {min:?} <= {initial:?} <= {max:?})")]
    RtoBounds {
        min: Duration,
        initial: Duration,
        max: Duration,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SenderError {
    #[error("ACK {ack} is below snd_una {snd_una}")]
    AckRegression { ack: u64, snd_una: u64 },
    #[error("ACK {ack} covers data never sent (snd_max {snd_max})")]
    AckBeyondSent { ack: u64, snd_max: u64 },
    #[error("RTT sample must be positive, got {0}")]
    InvalidRttSample(f64),
    #[error("retransmission timer is not armed")]
    TimerNotArmed,
    #[error("retransmission timer fires at {deadline}, not at {now}")]
    TimerNotExpired {
        deadline: VirtualTime,
        now: VirtualTime,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenderConfig {
    /// Bytes per full segment.
    pub mss: u32,
    /// Initial congestion window, in segments.
    pub initial_cwnd: u32,
    /// Initial slow-start threshold, in bytes.
    pub initial_ssthresh: u64,
    /// Duplicate ACKs that trigger fast retransmit.
    pub dupack_threshold: u32,
    pub rto_initial: Duration,
    pub rto_min: Duration,
    pub rto_max: Duration,
}

impl Default for SenderConfig {
    fn default() -> Self {
        SenderConfig {
            mss: 1460,
            initial_cwnd: 2,
            initial_ssthresh: 65535,
            dupack_threshold: 3,
            rto_initial: Duration::from_millis(1000),
            rto_min: Duration::from_millis(1000),
            rto_max: Duration::from_millis(64_000),
        }
    }
}

impl SenderConfig {
    pub fn with_mss(mut self, mss: u32) -> Self {
        self.mss = mss;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.mss == 0 {
            return Err(ConfigError::ZeroMss);
        }
        if self.initial_cwnd == 0 {
            return Err(ConfigError::ZeroInitialCwnd);
        }
        if self.dupack_threshold == 0 {
            return Err(ConfigError::ZeroDupackThreshold);
        }
        if !(self.rto_min <= self.rto_initial && self.rto_initial <= self.rto_max) {
            return Err(ConfigError::RtoBounds {
                min: self.rto_min,
                initial: self.rto_initial,
                max: self.rto_max,
            });
        }
        Ok(())
    }
}

/// Point-in-time view of the window variables, for logging and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SenderSnapshot {
    pub snd_una: u64,
    pub snd_nxt: u64,
    pub snd_max: u64,
    pub app_limit: u64,
    pub cwnd: u64,
    pub ssthresh: u64,
    pub effective_window: u64,
    pub dupacks: u32,
    pub in_fast_recovery: bool,
}

/// Congestion-control state of one connection's sending half.
#[derive(Debug, Clone, PartialEq)]
pub struct SenderState {
    variant: Variant,
    config: SenderConfig,
    snd_una: u64,
    snd_nxt: u64,
    /// Highest sequence ever sent; differs from `snd_nxt` after a go-back.
    snd_max: u64,
    cwnd: u64,
    ssthresh: u64,
    dupacks: u32,
    in_fast_recovery: bool,
    recover: u64,
    rto_current: Duration,
    rto_deadline: Option<VirtualTime>,
    rtt: RttEstimator,
    app_limit: u64,
    next_ip_id: u32,
    /// Segment start currently being timed for an RTT sample.
    timed: Option<(u64, VirtualTime)>,
    protocol_errors: u32,
}

impl SenderState {
    pub fn new(config: SenderConfig, variant: Variant) -> Result<Self, ConfigError> {
        config.validate()?;
        let mss = u64::from(config.mss);
        Ok(SenderState {
            variant,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            cwnd: u64::from(config.initial_cwnd) * mss,
            ssthresh: config.initial_ssthresh,
            dupacks: 0,
            in_fast_recovery: false,
            recover: 0,
            rto_current: config.rto_initial,
            rto_deadline: None,
            rtt: RttEstimator::default(),
            app_limit: 0,
            next_ip_id: 1,
            timed: None,
            protocol_errors: 0,
            config,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &SenderConfig {
        &self.config
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn snd_max(&self) -> u64 {
        self.snd_max
    }

    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn dupacks(&self) -> u32 {
        self.dupacks
    }

    pub fn in_fast_recovery(&self) -> bool {
        self.in_fast_recovery
    }

    pub fn recover(&self) -> u64 {
        self.recover
    }

    pub fn rto_current(&self) -> Duration {
        self.rto_current
    }

    pub fn rto_deadline(&self) -> Option<VirtualTime> {
        self.rto_deadline
    }

    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }

    pub fn app_limit(&self) -> u64 {
        self.app_limit
    }

    pub fn protocol_errors(&self) -> u32 {
        self.protocol_errors
    }

    /// Bytes between `snd_una` and `snd_nxt`.
    pub fn flight(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    /// Bytes sent at least once and not yet acknowledged.
    pub fn outstanding(&self) -> u64 {
        self.snd_max - self.snd_una
    }

    fn mss(&self) -> u64 {
        u64::from(self.config.mss)
    }

    /// Window the sender may fill beyond `snd_una`. Duplicate ACKs inflate
    /// it while a Reno-family sender is in fast recovery.
    pub fn effective_window(&self) -> u64 {
        if self.in_fast_recovery && self.variant.has_fast_recovery() {
            self.cwnd + u64::from(self.dupacks) * self.mss()
        } else {
            self.cwnd
        }
    }

    pub fn snapshot(&self) -> SenderSnapshot {
        SenderSnapshot {
            snd_una: self.snd_una,
            snd_nxt: self.snd_nxt,
            snd_max: self.snd_max,
            app_limit: self.app_limit,
            cwnd: self.cwnd,
            ssthresh: self.ssthresh,
            effective_window: self.effective_window(),
            dupacks: self.dupacks,
            in_fast_recovery: self.in_fast_recovery,
        }
    }

    /// Hands out the next IP identification value. Every segment this
    /// connection emits, control segments included, takes one.
    pub fn take_ip_id(&mut self) -> u32 {
        let id = self.next_ip_id;
        self.next_ip_id += 1;
        id
    }

    /// Queues `nbytes` more application bytes. Nothing is sent until the
    /// next [`pump_transmissions`](Self::pump_transmissions).
    pub fn enqueue_app_data(&mut self, nbytes: u64) {
        self.app_limit += nbytes;
    }

    /// Sends whatever the effective window allows, in whole segments (only
    /// the tail of the application data may be short), and arms the
    /// retransmission timer if data is outstanding and it is not running.
    pub fn pump_transmissions(&mut self, now: VirtualTime) -> Vec<Segment> {
        let window_end = self.snd_una + self.effective_window();
        let mut out = Vec::new();
        while self.snd_nxt < self.app_limit {
            let len = min(self.mss(), self.app_limit - self.snd_nxt);
            if self.snd_nxt + len > window_end {
                break;
            }
            out.push(self.transmit(self.snd_nxt, len, now));
            self.snd_nxt += len;
            self.snd_max = max(self.snd_max, self.snd_nxt);
        }
        if self.rto_deadline.is_none() && self.snd_max > self.snd_una {
            self.rto_deadline = Some(now + self.rto_current);
        }
        out
    }

    fn transmit(&mut self, seq: u64, len: u64, now: VirtualTime) -> Segment {
        if seq < self.snd_max {
            // Karn: never sample a segment that has been sent twice.
            self.timed = None;
        } else if self.timed.is_none() {
            self.timed = Some((seq, now));
        }
        let mut seg = Segment::control(Role::Server, Flags::ACK, seq, 0, self.take_ip_id());
        seg.len = len as u32;
        seg.sent_at = now;
        seg
    }

    fn loss_ssthresh(&self) -> u64 {
        max(self.outstanding() / 2, 2 * self.mss())
    }

    /// Processes a cumulative ACK for byte offset `ack`.
    pub fn on_ack(&mut self, ack: u64, now: VirtualTime) -> Result<Vec<Segment>, SenderError> {
        if ack < self.snd_una {
            self.protocol_errors += 1;
            return Err(SenderError::AckRegression {
                ack,
                snd_una: self.snd_una,
            });
        }
        if ack > self.snd_max {
            self.protocol_errors += 1;
            return Err(SenderError::AckBeyondSent {
                ack,
                snd_max: self.snd_max,
            });
        }
        if ack == self.snd_una {
            return Ok(self.on_duplicate_ack(now));
        }

        let acked = ack - self.snd_una;
        if let Some((seq, sent)) = self.timed {
            if ack > seq {
                self.timed = None;
                let sample = millis_f64(now.saturating_since(sent));
                if sample > 0.0 {
                    self.update_rtt(sample)?;
                }
            }
        }
        self.snd_una = ack;
        self.snd_nxt = max(self.snd_nxt, ack);

        let mut out = Vec::new();
        if self.in_fast_recovery {
            if self.variant == Variant::NewReno && ack < self.recover {
                // Partial ACK: the next hole is lost too.
                let len = min(self.mss(), self.snd_max - self.snd_una);
                out.push(self.transmit(self.snd_una, len, now));
                self.cwnd = self.cwnd.saturating_sub(acked) + self.mss();
            } else {
                self.in_fast_recovery = false;
                self.cwnd = self.ssthresh;
                self.dupacks = 0;
            }
        } else {
            self.dupacks = 0;
            if self.cwnd < self.ssthresh {
                self.cwnd += self.mss();
            } else {
                self.cwnd += max(1, self.mss() * self.mss() / self.cwnd);
            }
        }

        self.rto_deadline = if self.snd_una == self.snd_max {
            None
        } else {
            Some(now + self.rto_current)
        };
        out.extend(self.pump_transmissions(now));
        Ok(out)
    }

    fn on_duplicate_ack(&mut self, now: VirtualTime) -> Vec<Segment> {
        if self.snd_max == self.snd_una {
            // nothing outstanding, so not a duplicate in the fast-retransmit sense
            return Vec::new();
        }
        self.dupacks += 1;
        if self.in_fast_recovery {
            return self.pump_transmissions(now);
        }
        if self.dupacks == self.config.dupack_threshold {
            return self.enter_loss_response(now);
        }
        Vec::new()
    }

    fn enter_loss_response(&mut self, now: VirtualTime) -> Vec<Segment> {
        let ssthresh = self.loss_ssthresh();
        match self.variant {
            Variant::NoFastRetransmit => Vec::new(),
            Variant::Tahoe => {
                self.ssthresh = ssthresh;
                self.cwnd = self.mss();
                self.snd_nxt = self.snd_una;
                self.pump_transmissions(now)
            }
            Variant::Reno | Variant::NewReno => {
                self.ssthresh = ssthresh;
                let len = min(self.mss(), self.snd_max - self.snd_una);
                let retx = self.transmit(self.snd_una, len, now);
                self.cwnd = self.ssthresh + u64::from(self.config.dupack_threshold) * self.mss();
                self.in_fast_recovery = true;
                self.recover = self.snd_max;
                // later duplicates, not this one, clock out new data
                vec![retx]
            }
            Variant::RenoPlus => {
                self.ssthresh = ssthresh;
                self.in_fast_recovery = true;
                self.snd_nxt = self.snd_una;
                self.pump_transmissions(now)
            }
        }
    }

    /// Retransmission timer expiry: collapse to one segment, back off the
    /// timer and resend from `snd_una`.
    pub fn on_rto(&mut self, now: VirtualTime) -> Result<Vec<Segment>, SenderError> {
        let deadline = self.rto_deadline.ok_or(SenderError::TimerNotArmed)?;
        if now < deadline {
            return Err(SenderError::TimerNotExpired { deadline, now });
        }
        self.ssthresh = self.loss_ssthresh();
        self.cwnd = self.mss();
        self.snd_nxt = self.snd_una;
        self.in_fast_recovery = false;
        self.dupacks = 0;
        self.rto_current = min(self.rto_current * 2, self.config.rto_max);
        self.timed = None;
        self.rto_deadline = None;
        Ok(self.pump_transmissions(now))
    }

    /// Folds an RTT sample (virtual milliseconds) into the estimator and
    /// recomputes the timeout, clamped to the configured bounds.
    pub fn update_rtt(&mut self, sample_ms: f64) -> Result<(), SenderError> {
        if sample_ms.is_nan() || sample_ms <= 0.0 {
            return Err(SenderError::InvalidRttSample(sample_ms));
        }
        self.rtt.sample(sample_ms);
        let raw = self.rtt.raw_rto().unwrap_or(sample_ms);
        let lo = millis_f64(self.config.rto_min);
        let hi = millis_f64(self.config.rto_max);
        self.rto_current = duration_from_millis_f64(raw.clamp(lo, hi));
        Ok(())
    }
}
