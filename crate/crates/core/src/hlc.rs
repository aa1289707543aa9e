//! Reference hybrid logical clock, kept for comparison with PWC.
//!
//! The packed form puts the high 48 bits of `pt` beside a 12-bit `l - pt`
//! and a 4-bit `c`. Two packed values must be decoded before they can be
//! compared; comparing the raw integers can invert causal order.

use std::cmp::Ordering;

use thiserror::Error;

pub const DIFF_BITS: u32 = 12;
pub const COUNTER_BITS: u32 = 4;
const LOW_BITS: u32 = DIFF_BITS + COUNTER_BITS;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HlcState {
    pub l: u64,
    pub c: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HlcEncoded(pub u64);

impl HlcEncoded {
    pub const fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
    pub const fn from_be_bytes(b: [u8; 8]) -> Self {
        Self(u64::from_be_bytes(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HlcError {
    #[error("l - pt = {0} does not fit in {DIFF_BITS} bits")]
    DiffOverflow(u64),
    #[error("l = {l} is behind pt = {pt}")]
    LBehindPt { l: u64, pt: u64 },
    #[error("counter {0} does not fit in {COUNTER_BITS} bits")]
    CounterOverflow(u64),
    #[error("pt {0} does not fit in 48 bits")]
    PtOverflow(u64),
}

pub fn hlc_send_or_local(state: HlcState, pt: u64) -> HlcState {
    let l = state.l.max(pt);
    let c = if l == state.l { state.c + 1 } else { 0 };
    HlcState { l, c }
}

pub fn hlc_receive(state: HlcState, msg: HlcState, pt: u64) -> HlcState {
    let l = state.l.max(msg.l).max(pt);
    let c = if l == state.l && l == msg.l {
        state.c.max(msg.c) + 1
    } else if l == state.l {
        state.c + 1
    } else if l == msg.l {
        msg.c + 1
    } else {
        0
    };
    HlcState { l, c }
}

pub fn hlc_encode(pt: u64, state: HlcState) -> Result<HlcEncoded, HlcError> {
    if pt >> 48 != 0 {
        return Err(HlcError::PtOverflow(pt));
    }
    let diff = state.l.checked_sub(pt).ok_or(HlcError::LBehindPt { l: state.l, pt })?;
    if diff >> DIFF_BITS != 0 {
        return Err(HlcError::DiffOverflow(diff));
    }
    if state.c >> COUNTER_BITS != 0 {
        return Err(HlcError::CounterOverflow(state.c));
    }
    Ok(HlcEncoded((pt << LOW_BITS) | (diff << COUNTER_BITS) | state.c))
}

pub fn hlc_decode(enc: HlcEncoded) -> HlcState {
    let pt = enc.0 >> LOW_BITS;
    let diff = (enc.0 >> COUNTER_BITS) & ((1 << DIFF_BITS) - 1);
    let c = enc.0 & ((1 << COUNTER_BITS) - 1);
    HlcState { l: pt + diff, c }
}

/// The correct HLC order: decode, then compare `(l, c)`.
pub fn hlc_compare(a: HlcEncoded, b: HlcEncoded) -> Ordering {
    hlc_decode(a).cmp(&hlc_decode(b))
}
