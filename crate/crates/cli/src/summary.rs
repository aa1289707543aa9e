//! Per-config summary rows: the observed wait-free `u` next to the three
//! closed-form predictions, and a long-format `(config, bits, count)` table.

use std::io;

use anyhow::Result;
use pwc_core::analysis::{
    delayed_fraction, empirical_u, eq1_expected_u, theorem1_min_u, waitfree_u, BitsHistogram, EmpiricalFormulaParams,
    WaitFreeU,
};
use pwc_sim::SimParams;

pub const HEADER: &[&str] = &[
    "config",
    "n_processes",
    "topology",
    "epsilon_us",
    "send_rate",
    "delta_se_us",
    "delta_re_us",
    "delta_loc_us",
    "latency_min_us",
    "latency_max_us",
    "u",
    "seed",
    "total_events",
    "waitfree_u",
    "waitfree_u_raw",
    "theorem1_u",
    "eq1_u",
    "empirical_u",
    "empirical_delta",
    "delayed_fraction_est",
    "violations",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub waitfree_u: u32,
    pub waitfree_u_raw: u32,
    pub theorem1_u: Option<u32>,
    pub eq1_u: Option<u32>,
    pub empirical_u: Option<u32>,
    pub delayed_fraction_est: f64,
}

/// Formula inputs that are zero (no skew, no traffic) have no prediction.
/// A run without events is reported like one where every `lpt` was 0.
pub fn summarize(p: &SimParams, hist: &BitsHistogram, at_u: u32) -> Result<Summary> {
    let (w, delayed) = if hist.total() == 0 {
        (WaitFreeU { raw: 0, reported: 1 }, 0.0)
    } else {
        (waitfree_u(hist)?, delayed_fraction(hist, at_u)?)
    };
    let s_per_ms = p.send_rate as f64 / 1000.0;
    let av_comp = 1e6 / p.send_rate as f64;
    let av_tr = (p.latency_min_us + p.latency_max_us) as f64 / 2.0;
    Ok(Summary {
        waitfree_u: w.reported,
        waitfree_u_raw: w.raw,
        theorem1_u: theorem1_min_u(p.epsilon_us, p.delta_loc_us, p.delta_se_us, p.delta_re_us).ok(),
        eq1_u: eq1_expected_u(p.epsilon_us as f64, av_comp, av_tr).ok(),
        empirical_u: empirical_u(EmpiricalFormulaParams::new(
            s_per_ms,
            p.epsilon_us as f64 / 1000.0,
            p.delta_se_us as f64,
            p.delta_re_us as f64,
        ))
        .ok(),
        delayed_fraction_est: delayed,
    })
}

fn opt(v: Option<u32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn row(config: usize, p: &SimParams, total_events: u64, violations: u64, s: &Summary) -> Vec<String> {
    let delta = s.empirical_u.map(|e| s.waitfree_u as i64 - e as i64);
    vec![
        config.to_string(),
        p.n_processes.to_string(),
        p.topology.name().into(),
        p.epsilon_us.to_string(),
        p.send_rate.to_string(),
        p.delta_se_us.to_string(),
        p.delta_re_us.to_string(),
        p.delta_loc_us.to_string(),
        p.latency_min_us.to_string(),
        p.latency_max_us.to_string(),
        p.u.to_string(),
        p.seed.to_string(),
        total_events.to_string(),
        s.waitfree_u.to_string(),
        s.waitfree_u_raw.to_string(),
        opt(s.theorem1_u),
        opt(s.eq1_u),
        opt(s.empirical_u),
        delta.map(|d| d.to_string()).unwrap_or_default(),
        format!("{:.6e}", s.delayed_fraction_est),
        violations.to_string(),
    ]
}

pub fn write_long<W: io::Write>(w: W, hists: &[&BitsHistogram]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["config", "bits", "count"])?;
    for (k, h) in hists.iter().enumerate() {
        for (bits, &count) in h.0.iter().enumerate().take(h.max_bits() as usize + 1) {
            out.write_record([k.to_string(), bits.to_string(), count.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
