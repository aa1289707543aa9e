//! Sizing `u`: closed-form predictions and what a measured histogram says.
//!
//! Units follow the formulas as usually quoted: skews and deltas in µs,
//! except [`empirical_u`], which takes `S` in messages/node/ms, `ε` in ms and
//! the deltas in µs.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("bound overflows 64 bits")]
    Overflow,
}

fn positive(v: f64, name: &'static str) -> Result<f64, AnalysisError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(AnalysisError::NonPositive(name))
    }
}

/// Smallest `u ≥ 1` with `2^u > q`.
fn bits_exceeding(q: u64) -> u32 {
    (64 - q.leading_zeros()).max(1)
}

/// Bits that guarantee no event ever waits: the smallest `u` with
/// `2^u > ⌈ε / min(δ_loc, δ_se, δ_re)⌉`.
pub fn theorem1_min_u(
    epsilon_us: u64,
    delta_loc_us: u64,
    delta_se_us: u64,
    delta_re_us: u64,
) -> Result<u32, AnalysisError> {
    for (v, name) in
        [(epsilon_us, "epsilon"), (delta_loc_us, "delta_loc"), (delta_se_us, "delta_se"), (delta_re_us, "delta_re")]
    {
        if v == 0 {
            return Err(AnalysisError::NonPositive(name));
        }
    }
    let d = delta_loc_us.min(delta_se_us).min(delta_re_us);
    Ok(bits_exceeding(epsilon_us.div_ceil(d)))
}

/// Bits expected to suffice in practice, using average computation and
/// transit time: the smallest `u` with `2^u > ⌈ε / min(av_comp, av_tr)⌉`.
pub fn eq1_expected_u(epsilon_us: f64, av_comp_us: f64, av_tr_us: f64) -> Result<u32, AnalysisError> {
    let e = positive(epsilon_us, "epsilon")?;
    let d = positive(av_comp_us, "av_comp")?.min(positive(av_tr_us, "av_tr")?);
    Ok(bits_exceeding((e / d).ceil() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalFormulaParams {
    pub k: f64,
    /// Messages per node per millisecond.
    pub s_per_ms: f64,
    pub epsilon_ms: f64,
    pub delta_se_us: f64,
    pub delta_re_us: f64,
}

impl EmpiricalFormulaParams {
    pub const DEFAULT_K: f64 = 2.9;

    pub fn new(s_per_ms: f64, epsilon_ms: f64, delta_se_us: f64, delta_re_us: f64) -> Self {
        Self { k: Self::DEFAULT_K, s_per_ms, epsilon_ms, delta_se_us, delta_re_us }
    }
}

/// `⌈(log2(1000·S² / min(δ_re, δ_se)) + log2(ε) / log2(S+1)) / K⌉`
pub fn empirical_u(p: EmpiricalFormulaParams) -> Result<u32, AnalysisError> {
    let k = positive(p.k, "K")?;
    let s = positive(p.s_per_ms, "S")?;
    let e = positive(p.epsilon_ms, "epsilon")?;
    let d = positive(p.delta_se_us, "delta_se")?.min(positive(p.delta_re_us, "delta_re")?);
    let v = ((1000.0 * s * s / d).log2() + e.log2() / (s + 1.0).log2()) / k;
    Ok(v.ceil().max(0.0) as u32)
}

/// Largest possible PWC spread between two processes: `ε + 2^(u+1)`.
pub fn theorem3_bound(epsilon_ticks: u64, u: u32) -> Result<u64, AnalysisError> {
    if u >= 63 {
        return Err(AnalysisError::Overflow);
    }
    epsilon_ticks.checked_add(2u64 << u).ok_or(AnalysisError::Overflow)
}

/// Counts of events by bits needed for their `lpt` (index 0 means `lpt = 0`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitsHistogram(pub [u64; 64]);

impl Default for BitsHistogram {
    fn default() -> Self {
        Self([0; 64])
    }
}

impl BitsHistogram {
    pub fn record_lpt(&mut self, lpt: u64) {
        self.0[crate::clock::bits_needed(lpt) as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Highest bit width observed (0 if none or all zero).
    pub fn max_bits(&self) -> u32 {
        self.0.iter().rposition(|&c| c > 0).unwrap_or(0) as u32
    }

    pub fn merge(&mut self, other: &BitsHistogram) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitFreeU {
    /// Highest nonzero width, possibly 0.
    pub raw: u32,
    /// `raw`, but at least 1 since a clock needs one spare bit.
    pub reported: u32,
}

pub fn waitfree_u(hist: &BitsHistogram) -> Result<WaitFreeU, AnalysisError> {
    if hist.total() == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let raw = hist.max_bits();
    Ok(WaitFreeU { raw, reported: raw.max(1) })
}

/// Share of events that would have needed more than `u` bits. A first-order
/// estimate: delaying events would itself change later timestamps.
pub fn delayed_fraction(hist: &BitsHistogram, u: u32) -> Result<f64, AnalysisError> {
    let total = hist.total();
    if total == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let over: u64 = hist.0.iter().skip(u as usize + 1).sum();
    Ok(over as f64 / total as f64)
}
