//! The event loop.
//!
//! Time advances in integer µs. A process does at most one thing per tick,
//! and consecutive events on a process are spaced by at least the cost of
//! the later one (`δ_re` for a receive, `δ_se` for a send, `δ_loc` for a
//! local event). When several things are due, a delayed event goes first,
//! then receives (FIFO by delivery time, then message id), then sends, then
//! local events.
//!
//! The raw physical clock of a process is its µs reading shifted left by
//! `tick_shift`, so the `u` low bits sit below the clock's resolution.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use pwc_core::analysis::BitsHistogram;
use pwc_core::clock::{bits_needed, ClockError};
use pwc_core::hlc::{hlc_encode, hlc_receive, hlc_send_or_local, HlcState};
use pwc_core::oracle::{EventId, EventLog, NewEvent, OracleError, Preds, SkewSample};
use pwc_core::{ClockParams, EventKind, ManualClock, PwcClock, PwcTimestamp, Stamp, StampOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::params::{FaultKind, ParamError, SimParams, Topology, Traffic};
use crate::skew::{SkewModel, EPOCH_US};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HlcStats {
    /// Events whose `l - pt` or `c` did not fit the packed layout.
    pub encode_failures: u64,
    /// Causal edges where the packed integers compare the wrong way.
    pub raw_order_inversions: u64,
    /// Causal edges where decoded `(l, c)` fails to increase.
    pub causality_violations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimResult {
    pub total_events: u64,
    pub sends: u64,
    pub receives: u64,
    pub locals: u64,
    pub bits_histogram: BitsHistogram,
    pub max_bits: u32,
    /// Events that had to wait for the physical clock (counted once each).
    pub delayed: u64,
    pub discarded: u64,
    /// Causal edges whose timestamps do not increase.
    pub causality_violations: u64,
    /// Of those, edges whose predecessor was stamped after the first reset.
    pub causality_violations_after_reset: u64,
    /// Events outside `[clpt, max_k clpt_k + 2^u]`.
    pub envelope_violations: u64,
    /// Millisecond samples whose PWC spread exceeded `ε + 2^(u+1)`.
    pub spread_violations: u64,
    pub max_spread: u64,
    /// Causal edges where the increment carried into hpt: the successor is
    /// the predecessor plus one, has `lpt = 0`, and is above its own clpt.
    pub overflows: u64,
    pub resets: u64,
    /// Number of events stamped before the first reset.
    pub first_event_after_reset: Option<u64>,
    /// Processes whose first event after a suspend window had `lpt > 0`.
    pub resume_nonzero_lpt: u64,
    pub hlc: Option<HlcStats>,
}

impl SimResult {
    pub fn bound_violations(&self) -> u64 {
        self.envelope_violations + self.spread_violations
    }

    pub fn violations(&self) -> u64 {
        self.causality_violations + self.bound_violations()
    }
}

/// Destination for a message from `sender`.
pub fn pick_destination<R: Rng>(topology: Topology, sender: usize, n: usize, rng: &mut R) -> usize {
    match topology {
        Topology::HubSpoke if sender != 0 => 0,
        Topology::HubSpoke => rng.gen_range(1..n),
        Topology::Random | Topology::TimeLeader => {
            let r = rng.gen_range(0..n - 1);
            if r >= sender {
                r + 1
            } else {
                r
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Msg {
    ready: u64,
    id: u64,
    pwc: u64,
    send_event: Option<EventId>,
    hlc: HlcState,
    hlc_enc: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Receive(Msg),
    Send,
    Local,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    action: Action,
    retry_at: u64,
}

struct Proc {
    clock: PwcClock<ManualClock>,
    u: u32,
    last_at: Option<u64>,
    last_pwc: Option<u64>,
    last_id: Option<EventId>,
    /// Number of events stamped before this one's predecessor, used to tell
    /// whether an edge starts after the first reset.
    last_seq: u64,
    /// Suspend windows that had ended by this process's last event.
    windows_done: usize,
    hlc: HlcState,
    last_hlc_enc: Option<u64>,
    sends: Arrivals,
    locals: Arrivals,
    inbox: BinaryHeap<Reverse<Msg>>,
    pending: Option<Pending>,
    wake: Option<u64>,
}

const CLASS_TICK: u8 = 0;
const CLASS_FAULT: u8 = 1;
const CLASS_WAKE: u8 = 2;

struct Engine<'a> {
    p: &'a SimParams,
    rng: ChaCha8Rng,
    skew: SkewModel,
    procs: Vec<Proc>,
    queue: BinaryHeap<Reverse<(u64, u8, u64)>>,
    shift: u32,
    eps_raw: u64,
    end: u64,
    res: SimResult,
    hlc: HlcStats,
    log: Option<EventLog>,
}

/// Runs a simulation and keeps the full event log.
pub fn run(params: &SimParams) -> Result<(SimResult, EventLog), SimError> {
    let (res, log) = run_inner(params, true)?;
    Ok((res, log.expect("log requested")))
}

/// Runs a simulation keeping only counters; memory stays flat in the run
/// length.
pub fn run_summary(params: &SimParams) -> Result<SimResult, SimError> {
    Ok(run_inner(params, false)?.0)
}

fn run_inner(params: &SimParams, keep_log: bool) -> Result<(SimResult, Option<EventLog>), SimError> {
    params.validate()?;
    let mut e = Engine::new(params, keep_log)?;
    e.run()?;
    let mut res = e.res;
    res.max_bits = res.bits_histogram.max_bits();
    if params.track_hlc {
        res.hlc = Some(e.hlc);
    }
    Ok((res, e.log))
}

/// When a process next wants to send (or run a local event).
#[derive(Debug, Clone, Copy)]
struct Arrivals {
    rate: u64,
    traffic: Traffic,
    phase: u64,
    k: u64,
    next: u64,
}

impl Arrivals {
    fn new<R: Rng>(rate: u64, traffic: Traffic, rng: &mut R) -> Self {
        let mut a = Self { rate, traffic, phase: 0, k: 0, next: u64::MAX };
        if rate == 0 {
            return a;
        }
        match traffic {
            Traffic::Uniform => {
                a.phase = rng.gen_range(0..1_000_000u64.div_ceil(rate));
                a.next = a.phase;
            }
            Traffic::Poisson => a.next = geometric(rate, rng),
        }
        a
    }

    fn advance<R: Rng>(&mut self, rng: &mut R) {
        if self.rate == 0 {
            return;
        }
        self.k += 1;
        self.next = match self.traffic {
            Traffic::Uniform => self.phase + self.k * 1_000_000 / self.rate,
            Traffic::Poisson => self.next.saturating_add(geometric(self.rate, rng)),
        };
    }
}

fn geometric<R: Rng>(rate_per_s: u64, rng: &mut R) -> u64 {
    if rate_per_s == 0 {
        return u64::MAX;
    }
    let p = rate_per_s as f64 / 1e6;
    if p >= 1.0 {
        return 1;
    }
    let x: f64 = 1.0 - rng.gen::<f64>();
    1 + (x.ln() / (1.0 - p).ln()).floor() as u64
}

impl<'a> Engine<'a> {
    fn new(p: &'a SimParams, keep_log: bool) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let skew = SkewModel::new(p, &mut rng);
        let shift = p.shift();
        let monotonic = !p.faults.iter().any(|f| matches!(f.kind, FaultKind::NegativeLeap(_)));
        let mut procs = Vec::with_capacity(p.n_processes);
        for i in 0..p.n_processes {
            let raw = skew.pt(i, 0) << shift;
            let src = if monotonic { ManualClock::new(raw) } else { ManualClock::non_monotonic(raw) };
            let u = p.u_of(i);
            let sends = Arrivals::new(p.send_rate, p.traffic, &mut rng);
            let locals = Arrivals::new(p.local_rate, p.traffic, &mut rng);
            procs.push(Proc {
                clock: PwcClock::new(ClockParams::new(u)?, src),
                u,
                last_at: None,
                last_pwc: None,
                last_id: None,
                last_seq: 0,
                windows_done: 0,
                hlc: HlcState::default(),
                last_hlc_enc: None,
                sends,
                locals,
                inbox: BinaryHeap::new(),
                pending: None,
                wake: None,
            });
        }
        let mut e = Self {
            p,
            rng,
            skew,
            procs,
            queue: BinaryHeap::new(),
            shift,
            eps_raw: p.epsilon_us << shift,
            end: p.duration_us(),
            res: SimResult::default(),
            hlc: HlcStats::default(),
            log: keep_log.then(|| EventLog::new(p.n_processes)),
        };
        for (k, f) in p.faults.iter().enumerate() {
            e.queue.push(Reverse((f.at_us, CLASS_FAULT, k as u64)));
        }
        e.queue.push(Reverse((EPOCH_US, CLASS_TICK, 0)));
        for i in 0..p.n_processes {
            e.reschedule(i);
        }
        Ok(e)
    }

    fn raw(&self, i: usize, t: u64) -> u64 {
        self.skew.pt(i, t) << self.shift
    }

    fn clpt(&self, i: usize, t: u64) -> u64 {
        self.raw(i, t) & !((1u64 << self.procs[i].u) - 1)
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse((t, class, idx))) = self.queue.pop() {
            if t > self.end {
                break;
            }
            match class {
                CLASS_TICK => self.tick(t),
                CLASS_FAULT => self.fault(t, idx as usize),
                _ => {
                    let i = idx as usize;
                    if self.procs[i].wake == Some(t) {
                        self.procs[i].wake = None;
                        self.step(i, t)?;
                        self.reschedule(i);
                    }
                }
            }
        }
        Ok(())
    }

    /// Millisecond housekeeping: range checks, spread sample, new skew epoch.
    fn tick(&mut self, t: u64) {
        let mut lo = u64::MAX;
        let mut hi = 0;
        for i in 0..self.procs.len() {
            let raw = self.raw(i, t);
            self.procs[i].clock.source_mut().set(raw);
            if self.p.sanity_reset {
                self.sanity(i);
            }
            let c = &self.procs[i].clock;
            let eff = c.pwc().0.max(c.clpt());
            lo = lo.min(eff);
            hi = hi.max(eff);
        }
        let spread = hi - lo;
        self.res.max_spread = self.res.max_spread.max(spread);
        if spread > self.eps_raw + (2u64 << self.p.max_u()) {
            self.res.spread_violations += 1;
        }
        if let Some(log) = &mut self.log {
            log.push_sample(SkewSample { at: t, min: lo, max: hi });
        }
        self.skew.new_epoch(t, &mut self.rng);
        self.queue.push(Reverse((t + EPOCH_US, CLASS_TICK, 0)));
    }

    fn sanity(&mut self, i: usize) {
        let c = &mut self.procs[i].clock;
        // A clock merely behind its own reading is about to be fixed by the
        // next stamp; only the excursion above the range needs a reset.
        if c.pwc().0 >= c.clpt() && c.sanity_reset(self.eps_raw) {
            self.res.resets += 1;
            self.res.first_event_after_reset.get_or_insert(self.res.total_events);
        }
    }

    fn fault(&mut self, t: u64, k: usize) {
        let f = self.p.faults[k];
        match f.kind {
            FaultKind::PwcCorruption(v) => self.procs[f.process].clock.set_pwc(PwcTimestamp(v)),
            kind => self.skew.apply(f.process, kind, t),
        }
    }

    fn in_suspend(&self, t: u64) -> Option<u64> {
        let len = 2 * self.p.epsilon_us;
        self.p.suspend_windows.iter().find(|&&w| t >= w && t <= w + len).map(|&w| w + len + 1)
    }

    fn earliest(&self, i: usize) -> Option<u64> {
        let pr = &self.procs[i];
        if let Some(pd) = pr.pending {
            return Some(pd.retry_at);
        }
        let after = |d: u64| pr.last_at.map_or(0, |l| l + d);
        let mut best: Option<u64> = None;
        let mut consider = |t: u64| {
            if t != u64::MAX {
                best = Some(best.map_or(t, |b: u64| b.min(t)));
            }
        };
        if let Some(Reverse(m)) = pr.inbox.peek() {
            consider(m.ready.max(after(self.p.delta_re_us)));
        }
        if pr.sends.next != u64::MAX {
            consider(pr.sends.next.max(after(self.p.delta_se_us)));
        }
        if pr.locals.next != u64::MAX {
            consider(pr.locals.next.max(after(self.p.delta_loc_us)));
        }
        best
    }

    fn reschedule(&mut self, i: usize) {
        if let Some(w) = self.earliest(i) {
            if w <= self.end && self.procs[i].wake.is_none_or(|cur| w < cur) {
                self.procs[i].wake = Some(w);
                self.queue.push(Reverse((w, CLASS_WAKE, i as u64)));
            }
        }
    }

    fn step(&mut self, i: usize, t: u64) -> Result<(), SimError> {
        let raw = self.raw(i, t);
        self.procs[i].clock.source_mut().set(raw);
        if let Some(pd) = self.procs[i].pending {
            if t < pd.retry_at {
                return Ok(());
            }
            self.procs[i].pending = None;
            return self.attempt(i, t, pd.action);
        }
        let pr = &self.procs[i];
        let ok_after = |d: u64| pr.last_at.is_none_or(|l| t >= l + d);
        let receive = pr.inbox.peek().is_some_and(|Reverse(m)| m.ready <= t) && ok_after(self.p.delta_re_us);
        let send = pr.sends.next <= t && ok_after(self.p.delta_se_us);
        let local = pr.locals.next <= t && ok_after(self.p.delta_loc_us);

        let action = if receive {
            Action::Receive(self.procs[i].inbox.pop().unwrap().0)
        } else if send {
            if let Some(resume) = self.in_suspend(t) {
                let a = &mut self.procs[i].sends;
                while a.next < resume {
                    a.advance(&mut self.rng);
                }
                return Ok(());
            }
            self.procs[i].sends.advance(&mut self.rng);
            Action::Send
        } else if local {
            self.procs[i].locals.advance(&mut self.rng);
            Action::Local
        } else {
            return Ok(());
        };
        self.attempt(i, t, action)
    }

    fn attempt(&mut self, i: usize, t: u64, action: Action) -> Result<(), SimError> {
        if self.p.sanity_reset {
            self.sanity(i);
        }
        let stamp = match action {
            Action::Receive(m) => Stamp::Receive(PwcTimestamp(m.pwc)),
            Action::Send => Stamp::Send,
            Action::Local => Stamp::Local,
        };
        match self.procs[i].clock.guarded_stamp(stamp, self.p.policy)? {
            StampOutcome::Timestamped(ts) => self.record(i, t, action, ts.0),
            StampOutcome::Delayed { wait_ticks, .. } => {
                let pr = &mut self.procs[i];
                if pr.pending.is_none() {
                    self.res.delayed += 1;
                }
                let wait_us = wait_ticks.div_ceil(1u64 << self.shift).max(1);
                pr.pending = Some(Pending { action, retry_at: t + wait_us });
                Ok(())
            }
            StampOutcome::Discarded => {
                self.res.discarded += 1;
                Ok(())
            }
        }
    }

    fn record(&mut self, i: usize, t: u64, action: Action, ts: u64) -> Result<(), SimError> {
        let u = self.procs[i].u;
        let clpt = self.procs[i].clock.clpt();
        let pt_us = self.skew.pt(i, t);
        let lpt = ts & ((1u64 << u) - 1);
        let seq = self.res.total_events;
        let after_reset = |s: u64, r: &SimResult| r.first_event_after_reset.is_some_and(|f| s >= f);

        self.res.bits_histogram.0[bits_needed(lpt) as usize] += 1;
        if !self.p.suspend_windows.is_empty() {
            let len = 2 * self.p.epsilon_us;
            let ended = self.p.suspend_windows.iter().filter(|&&w| w + len < t).count();
            if ended > self.procs[i].windows_done {
                self.procs[i].windows_done = ended;
                if lpt > 0 {
                    self.res.resume_nonzero_lpt += 1;
                }
            }
        }
        let carried = lpt == 0 && ts > clpt;
        let pr = &self.procs[i];
        if let Some(prev) = pr.last_pwc {
            if ts <= prev {
                self.res.causality_violations += 1;
                if after_reset(pr.last_seq, &self.res) {
                    self.res.causality_violations_after_reset += 1;
                }
            }
            if carried && ts == prev + 1 {
                self.res.overflows += 1;
            }
        }
        let (kind, msg) = match action {
            Action::Receive(m) => (EventKind::Receive, Some(m)),
            Action::Send => (EventKind::Send, None),
            Action::Local => (EventKind::Local, None),
        };
        if let Some(m) = msg {
            if ts <= m.pwc {
                self.res.causality_violations += 1;
                // Message id order matches send order.
                if after_reset(m.id, &self.res) {
                    self.res.causality_violations_after_reset += 1;
                }
            }
            if carried && ts == m.pwc + 1 {
                self.res.overflows += 1;
            }
        }

        let needs_max = self.log.is_some() || ts > clpt + (1u64 << u);
        let clpt_max = needs_max.then(|| (0..self.procs.len()).map(|k| self.clpt(k, t)).max().unwrap());
        if ts < clpt || clpt_max.is_some_and(|m| ts > m + (1u64 << u)) {
            self.res.envelope_violations += 1;
        }

        let mut hlc_enc = None;
        if self.p.track_hlc {
            let pr = &self.procs[i];
            let before = pr.hlc;
            let next = match msg {
                Some(m) => hlc_receive(before, m.hlc, pt_us),
                None => hlc_send_or_local(before, pt_us),
            };
            let enc = match hlc_encode(pt_us, next) {
                Ok(e) => Some(e.0),
                Err(_) => {
                    self.hlc.encode_failures += 1;
                    None
                }
            };
            let mut preds: Vec<(HlcState, Option<u64>)> = Vec::new();
            if pr.last_pwc.is_some() {
                preds.push((before, pr.last_hlc_enc));
            }
            if let Some(m) = msg {
                preds.push((m.hlc, m.hlc_enc));
            }
            for (ph, penc) in preds {
                if ph >= next {
                    self.hlc.causality_violations += 1;
                }
                if let (Some(a), Some(b)) = (penc, enc) {
                    if a >= b {
                        self.hlc.raw_order_inversions += 1;
                    }
                }
            }
            self.procs[i].hlc = next;
            self.procs[i].last_hlc_enc = enc;
            hlc_enc = enc;
        }

        let raw_pt = self.raw(i, t);
        let last_id = self.procs[i].last_id;
        let id = match &mut self.log {
            Some(log) => Some(log.record(NewEvent {
                process: i as u32,
                kind,
                preds: Preds { local: last_id, remote: msg.and_then(|m| m.send_event) },
                pwc: PwcTimestamp(ts),
                clpt,
                pt: raw_pt,
                clpt_max,
            })?),
            None => None,
        };

        self.res.total_events += 1;
        match kind {
            EventKind::Receive => self.res.receives += 1,
            EventKind::Send => self.res.sends += 1,
            EventKind::Local => self.res.locals += 1,
        }
        let pr = &mut self.procs[i];
        pr.last_at = Some(t);
        pr.last_pwc = Some(ts);
        pr.last_id = id;
        pr.last_seq = seq;

        if kind == EventKind::Send {
            let n = self.procs.len();
            let to = pick_destination(self.p.topology, i, n, &mut self.rng);
            let latency = self.rng.gen_range(self.p.latency_min_us..=self.p.latency_max_us);
            let ready = t + self.p.delta_se_us + latency + self.p.delta_re_us;
            // Message ids double as "events stamped before the send" so the
            // reset bookkeeping can compare them with event counts.
            let m = Msg { ready, id: seq, pwc: ts, send_event: id, hlc: self.procs[i].hlc, hlc_enc };
            self.procs[to].inbox.push(Reverse(m));
            self.reschedule(to);
        }
        Ok(())
    }
}
