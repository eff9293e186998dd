//! The simulated TCP-like packet exchanged between server and prober.
//!
//! Sequence numbers are plain byte offsets into each side's stream. Control
//! flags do not consume sequence space.

use std::fmt;
use std::ops::Range;

use bitflags::bitflags;

use crate::time::VirtualTime;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct Flags: u8 {
        const SYN = 0b0001;
        const ACK = 0b0010;
        const FIN = 0b0100;
        const RST = 0b1000;
    }
}

/// Which endpoint put the segment on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Server,
    Prober,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub src_role: Role,
    pub seq: u64,
    pub len: u32,
    pub ack: u64,
    pub flags: Flags,
    /// Only ever present on SYN segments.
    pub mss_option: Option<u32>,
    pub ip_id: u32,
    pub sent_at: VirtualTime,
}

impl Segment {
    /// A bare segment with no payload and no options.
    pub fn control(src_role: Role, flags: Flags, seq: u64, ack: u64, ip_id: u32) -> Self {
        Segment {
            src_role,
            seq,
            len: 0,
            ack,
            flags,
            mss_option: None,
            ip_id,
            sent_at: VirtualTime::ZERO,
        }
    }

    pub fn is_payload(&self) -> bool {
        self.len > 0
    }

    pub fn end(&self) -> u64 {
        self.seq + u64::from(self.len)
    }

    pub fn range(&self) -> Range<u64> {
        self.seq..self.end()
    }

    /// Checks the structural invariants every segment must satisfy.
    pub fn is_well_formed(&self) -> bool {
        let syn = self.flags.contains(Flags::SYN);
        let rst = self.flags.contains(Flags::RST);
        !(syn && rst) && (self.mss_option.is_none() || syn)
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} {:?} seq={} len={} ack={} id={} @{}",
            self.src_role, self.flags, self.seq, self.len, self.ack, self.ip_id, self.sent_at
        )
    }
}
