//! Simulated TCP congestion-control variants and an active prober that
//! fingerprints them from its own packet traces.
//!
//! A [`netsim::Scenario`] wires a server running one [`Variant`] to a
//! [`prober::ProbeSession`] over a lossless fixed-delay link; the prober
//! withholds two packets and records every segment it sees. Feed the
//! resulting [`ObservedTrace`] to [`classify_trace`] to recover the variant.

pub mod classifier;
pub mod netsim;
pub mod prober;
mod ranges;
pub mod segment;
pub mod sender;
pub mod time;
pub mod trace_io;

pub use classifier::{
    classify_trace, ClassificationReport, ClassifierConfig, ClassifyError, FeatureVector, Label,
};
pub use netsim::{simulate, Scenario, SimError, SimRun, TerminationReason};
pub use prober::{CloseMode, ProbeScript};
pub use segment::{Flags, Segment};
pub use sender::{SenderConfig, SenderState, Variant};
pub use time::VirtualTime;
pub use trace_io::{ObservedTrace, TraceEvent};
