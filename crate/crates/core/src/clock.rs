//! The PWC timestamp and the per-process clock that issues it.
//!
//! A PWC value is an ordinary 64-bit physical-clock reading whose `u` least
//! significant bits (bits below the clock's real precision) are reused as a
//! logical counter:
//!
//! ```text
//!  63                         u   u-1          0
//! +----------------------------+---------------+
//! |            hpt             |      lpt      |
//! +----------------------------+---------------+
//! ```
//!
//! Timestamps compare with plain integer `<`; if `e` happened before `f`
//! then `pwc(e) < pwc(f)`.

use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("extraneous bit count {0} outside 1..=63")]
    InvalidBits(u32),
    #[error("64-bit timestamp space exhausted")]
    Exhausted,
    #[error("u switch at {switch_at} is not after current pwc {current}")]
    SwitchInPast { switch_at: u64, current: u64 },
    #[error("discard threshold must be positive")]
    ZeroDiscardThreshold,
}

fn check_u(u: u32) -> Result<(), ClockError> {
    if (1..64).contains(&u) {
        Ok(())
    } else {
        Err(ClockError::InvalidBits(u))
    }
}

/// Zeroes the low `u` bits of a raw physical reading.
pub fn mask_clpt(raw_pt: u64, u: u32) -> Result<u64, ClockError> {
    check_u(u)?;
    Ok(raw_pt & !low_mask(u))
}

/// Splits a timestamp into `(hpt, lpt)`.
pub fn split(ts: PwcTimestamp, u: u32) -> Result<(u64, u64), ClockError> {
    check_u(u)?;
    Ok((ts.0 >> u, ts.0 & low_mask(u)))
}

#[inline]
pub(crate) fn low_mask(u: u32) -> u64 {
    (1u64 << u) - 1
}

/// Minimal bit width of `lpt`; 0 only for `lpt == 0`.
#[inline]
pub fn bits_needed(lpt: u64) -> u32 {
    64 - lpt.leading_zeros()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PwcTimestamp(pub u64);

impl PwcTimestamp {
    pub const fn value(self) -> u64 {
        self.0
    }

    pub fn lpt(self, u: u32) -> u64 {
        self.0 & low_mask(u)
    }

    pub fn hpt(self, u: u32) -> u64 {
        self.0 >> u
    }

    pub const fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }

    pub const fn from_be_bytes(b: [u8; 8]) -> Self {
        Self(u64::from_be_bytes(b))
    }
}

impl fmt::Display for PwcTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for PwcTimestamp {
    fn from(v: u64) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockParams {
    u: u32,
    /// Real duration of one physical tick. Informational only.
    pub tick_unit: Duration,
}

impl ClockParams {
    pub fn new(u: u32) -> Result<Self, ClockError> {
        check_u(u)?;
        Ok(Self { u, tick_unit: Duration::from_micros(1) })
    }

    pub fn u(&self) -> u32 {
        self.u
    }
}

pub trait PhysicalClockSource {
    /// Raw reading `pt`.
    fn now(&self) -> u64;

    /// Whether successive reads are guaranteed non-decreasing.
    fn is_monotonic(&self) -> bool {
        true
    }
}

impl<S: PhysicalClockSource + ?Sized> PhysicalClockSource for &S {
    fn now(&self) -> u64 {
        (**self).now()
    }
    fn is_monotonic(&self) -> bool {
        (**self).is_monotonic()
    }
}

/// A clock that reads whatever it was last set to. Used by tests and the
/// simulator, which owns the notion of time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock {
    now: u64,
    monotonic: bool,
}

impl ManualClock {
    pub fn new(now: u64) -> Self {
        Self { now, monotonic: true }
    }

    /// A source that may step backwards (leap seconds, NTP steps).
    pub fn non_monotonic(now: u64) -> Self {
        Self { now, monotonic: false }
    }

    pub fn set(&mut self, now: u64) {
        debug_assert!(!self.monotonic || now >= self.now, "monotonic source stepped back");
        self.now = now;
    }
}

impl PhysicalClockSource for ManualClock {
    fn now(&self) -> u64 {
        self.now
    }
    fn is_monotonic(&self) -> bool {
        self.monotonic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Local,
    Send,
    Receive,
}

impl EventKind {
    pub fn letter(self) -> char {
        match self {
            EventKind::Local => 'L',
            EventKind::Send => 'S',
            EventKind::Receive => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'L' => Some(EventKind::Local),
            'S' => Some(EventKind::Send),
            'R' => Some(EventKind::Receive),
            _ => None,
        }
    }
}

/// An event to be stamped. Only a receive carries an incoming timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stamp {
    Local,
    Send,
    Receive(PwcTimestamp),
}

impl Stamp {
    pub fn kind(self) -> EventKind {
        match self {
            Stamp::Local => EventKind::Local,
            Stamp::Send => EventKind::Send,
            Stamp::Receive(_) => EventKind::Receive,
        }
    }

    fn incoming(self) -> Option<u64> {
        match self {
            Stamp::Receive(ts) => Some(ts.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Stamp regardless; an overflow silently corrupts hpt.
    #[default]
    Unguarded,
    /// Hold the event until the physical clock catches up.
    Wait,
    /// Wait if the wait is at most `threshold_ticks`, otherwise drop the event.
    Discard { threshold_ticks: u64 },
}

impl OverflowPolicy {
    pub fn discard(threshold_ticks: u64) -> Result<Self, ClockError> {
        if threshold_ticks == 0 {
            return Err(ClockError::ZeroDiscardThreshold);
        }
        Ok(Self::Discard { threshold_ticks })
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        match self {
            Self::Discard { threshold_ticks: 0 } => Err(ClockError::ZeroDiscardThreshold),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StampOutcome {
    Timestamped(PwcTimestamp),
    /// Stamping would carry into hpt. Nothing was changed; retry once the
    /// physical clock has advanced by `wait_ticks`, which will yield at least `ts`.
    Delayed {
        wait_ticks: u64,
        ts: PwcTimestamp,
    },
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverflowCheck {
    pub overflow: bool,
    pub wait_ticks: u64,
}

#[derive(Debug, Clone)]
pub struct PwcClock<S> {
    source: S,
    u: u32,
    pwc: u64,
    pending_u: Option<(u32, u64)>,
    /// Highest raw clock reading seen. Equal to the current reading unless
    /// the source has stepped back.
    raw_seen: u64,
}

impl<S: PhysicalClockSource> PwcClock<S> {
    /// Initializes `pwc` to the current masked physical clock.
    pub fn new(params: ClockParams, source: S) -> Self {
        let u = params.u();
        let raw = source.now();
        Self { source, u, pwc: raw & !low_mask(u), pending_u: None, raw_seen: raw }
    }

    pub fn pwc(&self) -> PwcTimestamp {
        PwcTimestamp(self.pwc)
    }

    pub fn u(&self) -> u32 {
        self.u
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn source_mut(&mut self) -> &mut S {
        &mut self.source
    }

    pub fn clpt(&self) -> u64 {
        self.source.now() & !low_mask(self.u)
    }

    /// Overwrites the state. Only for fault injection and tests.
    pub fn set_pwc(&mut self, pwc: PwcTimestamp) {
        self.pwc = pwc.0;
    }

    pub fn on_local(&mut self) -> Result<PwcTimestamp, ClockError> {
        self.stamp(Stamp::Local)
    }

    pub fn on_send(&mut self) -> Result<PwcTimestamp, ClockError> {
        self.stamp(Stamp::Send)
    }

    pub fn on_receive(&mut self, msg: PwcTimestamp) -> Result<PwcTimestamp, ClockError> {
        self.stamp(Stamp::Receive(msg))
    }

    /// Unguarded stamping: `max(pwc+1, msg+1, clpt)`.
    pub fn stamp(&mut self, ev: Stamp) -> Result<PwcTimestamp, ClockError> {
        let raw = self.source.now();
        self.raw_seen = self.raw_seen.max(raw);
        let incoming = ev.incoming();
        let mut next = self.next_value(raw, self.u, incoming)?;
        if let Some((new_u, at)) = self.pending_u {
            if next >= at {
                self.u = new_u;
                self.pending_u = None;
                next = self.next_value(raw, new_u, incoming)?;
            }
        }
        self.pwc = next;
        Ok(PwcTimestamp(next))
    }

    fn next_value(&self, raw: u64, u: u32, incoming: Option<u64>) -> Result<u64, ClockError> {
        let mut v = self.pwc.checked_add(1).ok_or(ClockError::Exhausted)?;
        if let Some(m) = incoming {
            v = v.max(m.checked_add(1).ok_or(ClockError::Exhausted)?);
        }
        Ok(v.max(raw & !low_mask(u)))
    }

    /// The u a stamp landing on `next` would use.
    fn u_for(&self, next: u64) -> u32 {
        match self.pending_u {
            Some((new_u, at)) if next >= at => new_u,
            _ => self.u,
        }
    }

    /// Would incrementing past `max(pwc, incoming)` carry into hpt while the
    /// physical clock has not caught up?
    pub fn would_overflow(&self, incoming: Option<PwcTimestamp>) -> OverflowCheck {
        let cand = incoming.map_or(self.pwc, |m| m.0.max(self.pwc));
        let next = cand.wrapping_add(1);
        let u = self.u_for(next);
        let clpt = self.source.now() & !low_mask(u);
        let overflow = next & low_mask(u) == 0 && cand >= clpt;
        OverflowCheck { overflow, wait_ticks: if overflow { next.saturating_sub(clpt).max(1) } else { 0 } }
    }

    pub fn guarded_stamp(&mut self, ev: Stamp, policy: OverflowPolicy) -> Result<StampOutcome, ClockError> {
        if policy == OverflowPolicy::Unguarded {
            return self.stamp(ev).map(StampOutcome::Timestamped);
        }
        let check = self.would_overflow(ev.incoming().map(PwcTimestamp));
        if !check.overflow {
            return self.stamp(ev).map(StampOutcome::Timestamped);
        }
        if let OverflowPolicy::Discard { threshold_ticks } = policy {
            if check.wait_ticks > threshold_ticks {
                return Ok(StampOutcome::Discarded);
            }
        }
        let cand = ev.incoming().map_or(self.pwc, |m| m.max(self.pwc));
        let ts = cand.checked_add(1).ok_or(ClockError::Exhausted)?;
        Ok(StampOutcome::Delayed { wait_ticks: check.wait_ticks, ts: PwcTimestamp(ts) })
    }

    /// Resets `pwc` to `clpt` if it has left `[clpt, clpt + ε + 2^u]`.
    /// Returns whether a reset happened.
    ///
    /// After the clock steps back, the upper end stays anchored at the
    /// highest reading seen: `pwc` legitimately keeps its old value and is
    /// not corrupt.
    pub fn sanity_reset(&mut self, epsilon_ticks: u64) -> bool {
        let raw = self.source.now();
        self.raw_seen = self.raw_seen.max(raw);
        let mask = !low_mask(self.u);
        let clpt = raw & mask;
        let upper = (self.raw_seen & mask).saturating_add(epsilon_ticks).saturating_add(1u64 << self.u);
        if self.pwc < clpt || self.pwc > upper {
            self.pwc = clpt;
            true
        } else {
            false
        }
    }

    /// Switches to `new_u` for every stamp whose value would be `>= switch_at`.
    pub fn schedule_u_change(&mut self, new_u: u32, switch_at: PwcTimestamp) -> Result<(), ClockError> {
        check_u(new_u)?;
        if switch_at.0 <= self.pwc {
            return Err(ClockError::SwitchInPast { switch_at: switch_at.0, current: self.pwc });
        }
        self.pending_u = Some((new_u, switch_at.0));
        Ok(())
    }
}

/// A clock shared between threads. Every stamp happens under one lock, so
/// stamps are linearizable.
#[derive(Debug)]
pub struct SharedPwcClock<S> {
    inner: Arc<Mutex<PwcClock<S>>>,
}

impl<S> Clone for SharedPwcClock<S> {
    fn clone(&self) -> Self {
        Self { inner: Arc::clone(&self.inner) }
    }
}

impl<S: PhysicalClockSource> SharedPwcClock<S> {
    pub fn new(clock: PwcClock<S>) -> Self {
        Self { inner: Arc::new(Mutex::new(clock)) }
    }

    /// Holds the lock for as long as the guard lives. Work that must be
    /// ordered consistently with the stamp (e.g. journaling it) belongs here.
    pub fn lock(&self) -> MutexGuard<'_, PwcClock<S>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn guarded_stamp(&self, ev: Stamp, policy: OverflowPolicy) -> Result<StampOutcome, ClockError> {
        self.lock().guarded_stamp(ev, policy)
    }

    pub fn pwc(&self) -> PwcTimestamp {
        self.lock().pwc()
    }
}
