//! Virtual time for the simulated world.
//!
//! Time only advances when the event loop dequeues an event; nothing here
//! reads a wall clock.

use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

/// A point on the virtual timeline, in microseconds since the run started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub const fn from_micros(us: u64) -> Self {
        VirtualTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        VirtualTime(ms * 1_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Elapsed time since `earlier`, or `None` if `earlier` is in the future.
    pub fn checked_since(self, earlier: VirtualTime) -> Option<Duration> {
        self.0.checked_sub(earlier.0).map(Duration::from_micros)
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn saturating_since(self, earlier: VirtualTime) -> Duration {
        self.checked_since(earlier).unwrap_or(Duration::ZERO)
    }
}

impl Add<Duration> for VirtualTime {
    type Output = VirtualTime;

    fn add(self, rhs: Duration) -> VirtualTime {
        let us = u64::try_from(rhs.as_micros()).unwrap_or(u64::MAX);
        VirtualTime(self.0.saturating_add(us))
    }
}

impl Sub for VirtualTime {
    type Output = Duration;

    fn sub(self, rhs: VirtualTime) -> Duration {
        self.saturating_since(rhs)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}ms", self.0 / 1_000, self.0 % 1_000)
    }
}

/// Converts fractional milliseconds to a duration with microsecond resolution.
pub(crate) fn duration_from_millis_f64(ms: f64) -> Duration {
    Duration::from_micros((ms * 1_000.0).round().max(0.0) as u64)
}

pub(crate) fn millis_f64(d: Duration) -> f64 {
    d.as_micros() as f64 / 1_000.0
}
