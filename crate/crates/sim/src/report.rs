//! One CSV row per run: every parameter, then the results.
//!
//! List-valued parameters are `;`-separated inside their cell. Policies are
//! `unguarded`, `wait` or `discard:<ticks>`; faults are
//! `<at_us>:<process>:<jump|leap|skew|corrupt>:<value>`.

use std::io;

use pwc_core::analysis::BitsHistogram;
use pwc_core::OverflowPolicy;
use thiserror::Error;

use crate::params::{FaultKind, FaultSpec, InitialSkew, SimParams, Topology, Traffic};
use crate::SimResult;

pub const PARAM_COLUMNS: &[&str] = &[
    "n_processes",
    "topology",
    "epsilon_us",
    "delta_se_us",
    "delta_re_us",
    "delta_loc_us",
    "latency_min_us",
    "latency_max_us",
    "send_rate",
    "local_rate",
    "traffic",
    "duration_s",
    "u",
    "process_u",
    "tick_shift",
    "policy",
    "seed",
    "skew_walk_step",
    "initial_skew",
    "pin_leader",
    "faults",
    "sanity_reset",
    "suspend_windows",
    "track_hlc",
];

const HIST_COLUMNS: usize = 16;

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = PARAM_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(["total_events", "delayed", "discarded", "max_bits"].map(String::from));
    h.extend((0..HIST_COLUMNS).map(|i| format!("bits_{i}")));
    h.push("violations".into());
    h.extend(
        [
            "bits_16_plus",
            "causality_violations",
            "envelope_violations",
            "spread_violations",
            "overflows",
            "resets",
            "max_spread",
            "hlc_encode_failures",
            "hlc_raw_order_inversions",
        ]
        .map(String::from),
    );
    h
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

pub fn policy_str(p: OverflowPolicy) -> String {
    match p {
        OverflowPolicy::Unguarded => "unguarded".into(),
        OverflowPolicy::Wait => "wait".into(),
        OverflowPolicy::Discard { threshold_ticks } => format!("discard:{threshold_ticks}"),
    }
}

fn fault_str(f: &FaultSpec) -> String {
    let (k, v) = match f.kind {
        FaultKind::ClockJumpForward(v) => ("jump", v),
        FaultKind::NegativeLeap(v) => ("leap", v),
        FaultKind::SkewViolation(v) => ("skew", v),
        FaultKind::PwcCorruption(v) => ("corrupt", v),
    };
    format!("{}:{}:{k}:{v}", f.at_us, f.process)
}

pub fn row(p: &SimParams, r: &SimResult) -> Vec<String> {
    let mut v = vec![
        p.n_processes.to_string(),
        p.topology.name().into(),
        p.epsilon_us.to_string(),
        p.delta_se_us.to_string(),
        p.delta_re_us.to_string(),
        p.delta_loc_us.to_string(),
        p.latency_min_us.to_string(),
        p.latency_max_us.to_string(),
        p.send_rate.to_string(),
        p.local_rate.to_string(),
        match p.traffic {
            Traffic::Uniform => "uniform".into(),
            Traffic::Poisson => "poisson".into(),
        },
        p.duration_s.to_string(),
        p.u.to_string(),
        join(&p.process_u),
        p.tick_shift.map(|s| s.to_string()).unwrap_or_default(),
        policy_str(p.policy),
        p.seed.to_string(),
        p.skew_walk_step.to_string(),
        match p.initial_skew {
            InitialSkew::Zero => "zero".into(),
            InitialSkew::Uniform => "uniform".into(),
        },
        p.pin_leader.to_string(),
        p.faults.iter().map(fault_str).collect::<Vec<_>>().join(";"),
        p.sanity_reset.to_string(),
        join(&p.suspend_windows),
        p.track_hlc.to_string(),
    ];
    let h = &r.bits_histogram.0;
    v.extend([r.total_events, r.delayed, r.discarded, r.max_bits as u64].map(|x| x.to_string()));
    v.extend(h[..HIST_COLUMNS].iter().map(u64::to_string));
    v.push(r.violations().to_string());
    let hlc = r.hlc.clone().unwrap_or_default();
    v.extend(
        [
            h[HIST_COLUMNS..].iter().sum(),
            r.causality_violations,
            r.envelope_violations,
            r.spread_violations,
            r.overflows,
            r.resets,
            r.max_spread,
            hlc.encode_failures,
            hlc.raw_order_inversions,
        ]
        .map(|x| x.to_string()),
    );
    v
}

pub fn write_csv<W: io::Write>(w: W, rows: &[(SimParams, SimResult)]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header())?;
    for (p, r) in rows {
        out.write_record(row(p, r))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("column {col}: cannot parse {value:?}")]
    BadValue { col: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What [`read_csv`] recovers from one row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub params: SimParams,
    pub total_events: u64,
    pub delayed: u64,
    pub discarded: u64,
    pub violations: u64,
    /// Widths above 15 are folded into `max_bits`.
    pub histogram: BitsHistogram,
}

struct Cells<'a> {
    header: &'a csv::StringRecord,
    rec: &'a csv::StringRecord,
}

impl Cells<'_> {
    fn raw(&self, col: &str) -> Result<&str, ReportError> {
        let i = self.header.iter().position(|h| h == col).ok_or_else(|| ReportError::MissingColumn(col.into()))?;
        self.rec.get(i).ok_or_else(|| ReportError::MissingColumn(col.into()))
    }

    fn get<T: std::str::FromStr>(&self, col: &str) -> Result<T, ReportError> {
        let v = self.raw(col)?;
        v.parse().map_err(|_| ReportError::BadValue { col: col.into(), value: v.into() })
    }

    fn list<T: std::str::FromStr>(&self, col: &str) -> Result<Vec<T>, ReportError> {
        let v = self.raw(col)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(';')
            .map(|x| x.parse().map_err(|_| ReportError::BadValue { col: col.into(), value: v.into() }))
            .collect()
    }

    fn bad(&self, col: &str) -> ReportError {
        ReportError::BadValue { col: col.into(), value: self.raw(col).unwrap_or_default().into() }
    }
}

fn parse_policy(s: &str) -> Option<OverflowPolicy> {
    match s {
        "unguarded" => Some(OverflowPolicy::Unguarded),
        "wait" => Some(OverflowPolicy::Wait),
        _ => s.strip_prefix("discard:")?.parse().ok().map(|t| OverflowPolicy::Discard { threshold_ticks: t }),
    }
}

fn parse_fault(s: &str) -> Option<FaultSpec> {
    let f: Vec<&str> = s.split(':').collect();
    let [at, process, kind, v] = f[..] else { return None };
    let v: u64 = v.parse().ok()?;
    let kind = match kind {
        "jump" => FaultKind::ClockJumpForward(v),
        "leap" => FaultKind::NegativeLeap(v),
        "skew" => FaultKind::SkewViolation(v),
        "corrupt" => FaultKind::PwcCorruption(v),
        _ => return None,
    };
    Some(FaultSpec { at_us: at.parse().ok()?, process: process.parse().ok()?, kind })
}

pub fn read_csv<R: io::Read>(r: R) -> Result<Vec<ParsedRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let c = Cells { header: &header, rec: &rec };
        let tick_shift = match c.raw("tick_shift")? {
            "" => None,
            _ => Some(c.get("tick_shift")?),
        };
        let faults = match c.raw("faults")? {
            "" => Vec::new(),
            s => s.split(';').map(parse_fault).collect::<Option<_>>().ok_or_else(|| c.bad("faults"))?,
        };
        let params = SimParams {
            n_processes: c.get("n_processes")?,
            topology: Topology::parse(c.raw("topology")?).ok_or_else(|| c.bad("topology"))?,
            epsilon_us: c.get("epsilon_us")?,
            delta_se_us: c.get("delta_se_us")?,
            delta_re_us: c.get("delta_re_us")?,
            delta_loc_us: c.get("delta_loc_us")?,
            latency_min_us: c.get("latency_min_us")?,
            latency_max_us: c.get("latency_max_us")?,
            send_rate: c.get("send_rate")?,
            local_rate: c.get("local_rate")?,
            traffic: match c.raw("traffic")? {
                "uniform" => Traffic::Uniform,
                "poisson" => Traffic::Poisson,
                _ => return Err(c.bad("traffic")),
            },
            duration_s: c.get("duration_s")?,
            u: c.get("u")?,
            process_u: c.list("process_u")?,
            tick_shift,
            policy: parse_policy(c.raw("policy")?).ok_or_else(|| c.bad("policy"))?,
            seed: c.get("seed")?,
            skew_walk_step: c.get("skew_walk_step")?,
            initial_skew: match c.raw("initial_skew")? {
                "zero" => InitialSkew::Zero,
                "uniform" => InitialSkew::Uniform,
                _ => return Err(c.bad("initial_skew")),
            },
            pin_leader: c.get("pin_leader")?,
            faults,
            sanity_reset: c.get("sanity_reset")?,
            suspend_windows: c.list("suspend_windows")?,
            track_hlc: c.get("track_hlc")?,
        };
        let mut histogram = BitsHistogram::default();
        for i in 0..HIST_COLUMNS {
            histogram.0[i] = c.get(&format!("bits_{i}"))?;
        }
        let max_bits: usize = c.get("max_bits")?;
        if let Ok(over) = c.get::<u64>("bits_16_plus") {
            if over > 0 && max_bits < 64 {
                histogram.0[max_bits.max(HIST_COLUMNS)] += over;
            }
        }
        out.push(ParsedRow {
            params,
            total_events: c.get("total_events")?,
            delayed: c.get("delayed")?,
            discarded: c.get("discarded")?,
            violations: c.get("violations")?,
            histogram,
        });
    }
    Ok(out)
}
