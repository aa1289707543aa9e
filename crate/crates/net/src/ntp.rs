//! Host clock in the 64-bit NTP layout: 32 bits of seconds since 1900 and
//! 32 bits of binary fraction, so one raw tick is 2^-32 s (≈ 233 ps).
//!
//! The wall-clock time is read once; later readings add the elapsed
//! monotonic time, so the source never steps backwards.

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use pwc_core::PhysicalClockSource;

/// Seconds from 1900-01-01 to 1970-01-01.
pub const NTP_UNIX_OFFSET: u64 = 2_208_988_800;

/// Converts a duration to NTP ticks, truncating.
pub fn duration_to_ticks(d: Duration) -> u64 {
    let nanos = d.as_nanos();
    ((nanos << 32) / 1_000_000_000) as u64
}

/// Converts NTP ticks to a duration, rounding up so that waiting this long
/// always covers the ticks.
pub fn ticks_to_duration(ticks: u64) -> Duration {
    let nanos = ((ticks as u128) * 1_000_000_000).div_ceil(1 << 32);
    Duration::from_nanos(nanos.min(u64::MAX as u128) as u64)
}

#[derive(Debug, Clone, Copy)]
pub struct NtpClock {
    anchor: Instant,
    base: u64,
}

impl NtpClock {
    pub fn new() -> Self {
        let anchor = Instant::now();
        let since_unix = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let base = duration_to_ticks(since_unix) + (NTP_UNIX_OFFSET << 32);
        Self { anchor, base }
    }

    /// A clock reading `base` at the moment of construction.
    pub fn starting_at(base: u64) -> Self {
        Self { anchor: Instant::now(), base }
    }
}

impl Default for NtpClock {
    fn default() -> Self {
        Self::new()
    }
}

impl PhysicalClockSource for NtpClock {
    fn now(&self) -> u64 {
        self.base + duration_to_ticks(self.anchor.elapsed())
    }
}
