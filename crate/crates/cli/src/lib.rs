//! Commands behind the `pwc` binary. Each returns the process exit code:
//! 0 when clean, 1 when a run violated a checked property; errors (bad
//! input, I/O) become 2 in `main`.

pub mod config;
pub mod summary;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use pwc_core::hlc::{hlc_compare, hlc_encode, HlcState};
use pwc_core::{ClockParams, ManualClock, OverflowPolicy, PwcClock};
use pwc_net::measure::{SpinSink, UdpSink, UdpSource};
use pwc_net::{measure_receive, measure_send, AgentConfig, LinearFit, Role};
use pwc_sim::report::{read_csv, write_csv};
use pwc_sim::{run, run_summary, SimParams, SimResult};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Clean = 0,
    Violation = 1,
}

impl Exit {
    fn from_violations(n: u64) -> Self {
        if n == 0 {
            Exit::Clean
        } else {
            Exit::Violation
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_meta(path: &Path, meta: serde_json::Value) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(())
}

fn read_config(path: &Path) -> Result<Vec<SimParams>> {
    let doc = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    config::expand(&doc).with_context(|| format!("in {}", path.display()))
}

/// One simulation. The config must not contain sweep lists.
pub fn sim_run(config: &Path, seed: Option<u64>, out: &Path, log: Option<&Path>) -> Result<Exit> {
    let mut points = read_config(config)?;
    if points.len() != 1 {
        bail!("config expands to {} runs; use `sim sweep`", points.len());
    }
    let mut p = points.pop().unwrap();
    if let Some(s) = seed {
        p.seed = s;
    }
    let started = Instant::now();
    let r = match log {
        Some(path) => {
            let (r, l) = run(&p)?;
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            l.write_lines(&mut w)?;
            w.flush()?;
            r
        }
        None => run_summary(&p)?,
    };
    write_csv(File::create(out).with_context(|| format!("creating {}", out.display()))?, &[(p.clone(), r.clone())])?;
    write_meta(
        &sidecar(out),
        json!({
            "command": "sim run",
            "config": config,
            "seed": p.seed,
            "elapsed_s": started.elapsed().as_secs_f64(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    Ok(Exit::from_violations(r.violations()))
}

/// Runs every point on `jobs` threads; results come back in config order.
pub fn run_all(points: &[SimParams], jobs: usize) -> Result<Vec<SimResult>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SimResult, pwc_sim::SimError>>>> =
        Mutex::new((0..points.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..jobs.max(1).min(points.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = points.get(i) else { break };
                let r = run_summary(p);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.expect("every slot filled").with_context(|| format!("config point {i}")))
        .collect()
}

fn write_summary(path: &Path, rows: &[(SimParams, SimResult)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(summary::HEADER)?;
    for (k, (p, r)) in rows.iter().enumerate() {
        let s = summary::summarize(p, &r.bits_histogram, p.u)?;
        w.write_record(summary::row(k, p, r.total_events, r.violations(), &s))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `runs.csv` (full rows), `summary.csv`, `bits.csv` (long format)
/// and `meta.json` into `out_dir`.
pub fn sim_sweep(config: &Path, out_dir: &Path, jobs: usize) -> Result<Exit> {
    let points = read_config(config)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let started = Instant::now();
    let results = run_all(&points, jobs)?;
    let rows: Vec<(SimParams, SimResult)> = points.into_iter().zip(results).collect();
    write_csv(File::create(out_dir.join("runs.csv"))?, &rows)?;
    write_summary(&out_dir.join("summary.csv"), &rows)?;
    let hists: Vec<_> = rows.iter().map(|(_, r)| &r.bits_histogram).collect();
    summary::write_long(File::create(out_dir.join("bits.csv"))?, &hists)?;
    write_meta(
        &out_dir.join("meta.json"),
        json!({
            "command": "sim sweep",
            "config": config,
            "runs": rows.len(),
            "jobs": jobs,
            "elapsed_s": started.elapsed().as_secs_f64(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    Ok(Exit::from_violations(rows.iter().map(|(_, r)| r.violations()).sum()))
}

/// Summarizes a `runs.csv`. `at_u` picks the `u` at which to estimate the
/// delayed fraction (default: each run's own). With `resimulate`, every run
/// is repeated under the Wait policy at that `u` for the exact count.
pub fn analyze(input: &Path, out: &Path, at_u: Option<u32>, resimulate: bool, jobs: usize) -> Result<Exit> {
    let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let rows = read_csv(f).with_context(|| format!("reading {}", input.display()))?;
    if rows.is_empty() {
        bail!("{} has no runs", input.display());
    }
    let resim = if resimulate {
        let points: Vec<SimParams> = rows
            .iter()
            .map(|r| {
                let p = &r.params;
                let u = at_u.unwrap_or(p.u);
                SimParams {
                    u,
                    process_u: Vec::new(),
                    tick_shift: Some(p.shift().max(u)),
                    policy: OverflowPolicy::Wait,
                    ..p.clone()
                }
            })
            .collect();
        Some(run_all(&points, jobs)?)
    } else {
        None
    };

    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    let mut header: Vec<&str> = summary::HEADER.to_vec();
    header.push("delayed_at_u");
    if resim.is_some() {
        header.extend(["resim_delayed", "resim_delayed_fraction"]);
    }
    w.write_record(&header)?;
    let mut violations = 0;
    for (k, row) in rows.iter().enumerate() {
        let p = &row.params;
        let u = at_u.unwrap_or(p.u);
        let s = summary::summarize(p, &row.histogram, u)?;
        violations += row.violations;
        let mut rec = summary::row(k, p, row.total_events, row.violations, &s);
        rec.push(u.to_string());
        if let Some(rs) = &resim {
            let r = &rs[k];
            rec.push(r.delayed.to_string());
            let frac = if r.total_events == 0 { 0.0 } else { r.delayed as f64 / r.total_events as f64 };
            rec.push(format!("{frac:.6e}"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let long = out.with_extension("long.csv");
    let hists: Vec<_> = rows.iter().map(|r| &r.histogram).collect();
    summary::write_long(File::create(&long)?, &hists)?;
    Ok(Exit::from_violations(violations))
}

/// The HLC integer-comparison pitfall and its PWC counterpart.
pub fn hlc_demo(out: &mut impl Write) -> Result<Exit> {
    // e happens before f, but f's process has a physical clock one tick
    // behind e's, so f carries its causal lead in the l - pt field.
    let e_state = HlcState { l: 15, c: 0 };
    let f_state = HlcState { l: 19, c: 0 };
    let e = hlc_encode(15, e_state)?;
    let f = hlc_encode(14, f_state)?;
    let hlc_less = hlc_compare(e, f).is_lt();
    let int_greater = e.0 > f.0;
    writeln!(out, "e: pt=15 l=15 c=0 -> {}", e.0)?;
    writeln!(out, "f: pt=14 l=19 c=0 -> {}", f.0)?;

    let u = 4;
    let mut j = PwcClock::new(ClockParams::new(u)?, ManualClock::new(15 << u));
    let mut k = PwcClock::new(ClockParams::new(u)?, ManualClock::new(14 << u));
    let pe = j.on_send()?;
    let pf = k.on_receive(pe)?;
    let pwc_ok = pf > pe;
    writeln!(out, "PWC (u={u}): e={} f={}", pe.0, pf.0)?;

    let rel = |b: bool| if b { "<" } else { ">" };
    writeln!(
        out,
        "HLC order: e {} f; integer order: e {} f; PWC: {}",
        rel(hlc_less),
        rel(!int_greater),
        if pwc_ok { "consistent" } else { "INCONSISTENT" }
    )?;
    Ok(if hlc_less && int_greater && pwc_ok { Exit::Clean } else { Exit::Violation })
}

pub fn net_agent(config: &Path, out: &mut impl Write) -> Result<Exit> {
    let doc = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: AgentConfig = toml::from_str(&doc).with_context(|| format!("in {}", config.display()))?;
    cfg.validate()?;
    let stats = pwc_net::run_agent(&cfg)?;
    serde_json::to_writer_pretty(&mut *out, &stats)?;
    writeln!(out)?;
    Ok(Exit::from_violations(stats.causality_violations + stats.non_increasing))
}

pub struct MeasureArgs {
    pub role: Role,
    pub peers: Vec<SocketAddr>,
    pub listen: Option<SocketAddr>,
    pub seconds: f64,
    pub sizes: Vec<usize>,
    /// Replace the network with a sink that spins 1 µs per message.
    pub fixture: bool,
}

pub fn net_measure(a: &MeasureArgs, out: &mut impl Write) -> Result<Exit> {
    if !(a.seconds > 0.0 && a.seconds.is_finite()) {
        bail!("--seconds must be positive");
    }
    let d = Duration::from_secs_f64(a.seconds);
    let fit: LinearFit = match (a.role, a.fixture) {
        (Role::Send, true) => {
            let mut s = SpinSink { per_message: Duration::from_micros(1), per_byte: Duration::ZERO };
            measure_send(&mut s, &a.sizes, d)?
        }
        (Role::Send, false) => {
            if a.peers.is_empty() {
                bail!("--peers is required for the send role");
            }
            let mut s = UdpSink::new(UdpSocket::bind("0.0.0.0:0")?, a.peers.clone());
            measure_send(&mut s, &a.sizes, d)?
        }
        (Role::Receive, true) => bail!("--fixture only applies to the send role"),
        (Role::Receive, false) => {
            let Some(listen) = a.listen else { bail!("--listen is required for the receive role") };
            let mut s = UdpSource::new(UdpSocket::bind(listen)?)?;
            measure_receive(&mut s, &a.sizes, d)?
        }
    };
    serde_json::to_writer_pretty(&mut *out, &fit)?;
    writeln!(out)?;
    Ok(Exit::Clean)
}
