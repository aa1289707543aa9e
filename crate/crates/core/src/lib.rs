//! PWC: a 64-bit timestamp that reads like a physical clock and preserves
//! causality by spending the low `u` bits of the clock on a logical counter.
//!
//! * [`clock`] stamps events with `max(pwc+1, msg+1, clpt)` and guards
//!   against the counter carrying into the physical part.
//! * [`hlc`] is a reference hybrid logical clock used for comparison.
//! * [`oracle`] tracks true happened-before with vector clocks and checks
//!   PWC logs against it.
//! * [`analysis`] sizes `u` from system parameters and summarizes measured
//!   bit usage.

pub mod analysis;
pub mod clock;
pub mod hlc;
pub mod oracle;

pub use analysis::BitsHistogram;
pub use clock::{
    ClockError, ClockParams, EventKind, ManualClock, OverflowCheck, OverflowPolicy, PhysicalClockSource, PwcClock,
    PwcTimestamp, SharedPwcClock, Stamp, StampOutcome,
};
