//! Ground truth for happened-before.
//!
//! Every recorded event gets a vector clock, so causal order can be decided
//! exactly and compared with what the PWC values claim. Vector clocks live
//! only here; the clock itself never needs them.
//!
//! Logs serialize one event per tab-separated line:
//!
//! ```text
//! #pwc-log processes=<N>
//! <id> <process> <L|S|R> <preds|-> <pwc> <clpt> <pt> <vclock> [<clpt_max>]
//! ```
//!
//! `preds` and `vclock` are comma-separated.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::clock::{low_mask, EventKind, PwcTimestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u32);

impl EventId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Preds {
    /// Previous event on the same process.
    pub local: Option<EventId>,
    /// The matching send, for a receive.
    pub remote: Option<EventId>,
}

impl Preds {
    pub fn iter(&self) -> impl Iterator<Item = EventId> {
        self.local.into_iter().chain(self.remote)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub id: EventId,
    pub process: u32,
    pub kind: EventKind,
    pub preds: Preds,
    pub pwc: PwcTimestamp,
    pub clpt: u64,
    pub pt: u64,
    /// Largest `clpt` over all processes when this event was created.
    pub clpt_max: Option<u64>,
}

/// Input to [`EventLog::record`].
#[derive(Debug, Clone, Copy)]
pub struct NewEvent {
    pub process: u32,
    pub kind: EventKind,
    pub preds: Preds,
    pub pwc: PwcTimestamp,
    pub clpt: u64,
    pub pt: u64,
    pub clpt_max: Option<u64>,
}

/// Spread of effective PWC values across processes at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkewSample {
    pub at: u64,
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unknown event {0:?}")]
    UnknownEvent(EventId),
    #[error("process {0} out of range")]
    UnknownProcess(u32),
    #[error("event {id:?}: {reason}")]
    BadPreds { id: EventId, reason: &'static str },
    #[error("event {0:?} has no clpt snapshot")]
    MissingSnapshot(EventId),
    #[error("log has {0} events; full-pair check is limited to {FULL_PAIR_LIMIT}")]
    TooLarge(usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const FULL_PAIR_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    n: usize,
    events: Vec<EventRecord>,
    vclocks: Vec<u32>,
    last: Vec<Option<EventId>>,
    samples: Vec<SkewSample>,
}

impl EventLog {
    pub fn new(n_processes: usize) -> Self {
        Self { n: n_processes, last: vec![None; n_processes], ..Default::default() }
    }

    pub fn n_processes(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn get(&self, id: EventId) -> Result<&EventRecord, OracleError> {
        self.events.get(id.index()).ok_or(OracleError::UnknownEvent(id))
    }

    pub fn vclock(&self, id: EventId) -> Result<&[u32], OracleError> {
        self.get(id)?;
        Ok(&self.vclocks[id.index() * self.n..(id.index() + 1) * self.n])
    }

    /// Last event recorded on `process`.
    pub fn last_on(&self, process: u32) -> Option<EventId> {
        self.last.get(process as usize).copied().flatten()
    }

    pub fn samples(&self) -> &[SkewSample] {
        &self.samples
    }

    pub fn push_sample(&mut self, s: SkewSample) {
        self.samples.push(s);
    }

    pub fn record_event(
        &mut self,
        process: u32,
        kind: EventKind,
        preds: Preds,
        pwc: PwcTimestamp,
        clpt: u64,
        pt: u64,
    ) -> Result<&EventRecord, OracleError> {
        let id = self.record(NewEvent { process, kind, preds, pwc, clpt, pt, clpt_max: None })?;
        Ok(&self.events[id.index()])
    }

    pub fn record(&mut self, ev: NewEvent) -> Result<EventId, OracleError> {
        let p = ev.process as usize;
        if p >= self.n {
            return Err(OracleError::UnknownProcess(ev.process));
        }
        let id = EventId(self.events.len() as u32);
        let bad = |reason| OracleError::BadPreds { id, reason };
        if ev.preds.local != self.last[p] {
            return Err(bad("local pred is not the previous event on the process"));
        }
        match (ev.kind, ev.preds.remote) {
            (EventKind::Receive, None) => return Err(bad("receive without a send")),
            (EventKind::Receive, Some(r)) => {
                let send = self.get(r)?;
                if send.kind != EventKind::Send || send.process == ev.process {
                    return Err(bad("remote pred must be a send on another process"));
                }
            }
            (_, Some(_)) => return Err(bad("only receives have a remote pred")),
            (_, None) => {}
        }
        let base = self.vclocks.len();
        self.vclocks.resize(base + self.n, 0);
        for pred in ev.preds.iter() {
            let start = pred.index() * self.n;
            for k in 0..self.n {
                let v = self.vclocks[start + k];
                if v > self.vclocks[base + k] {
                    self.vclocks[base + k] = v;
                }
            }
        }
        self.vclocks[base + p] += 1;
        self.events.push(EventRecord {
            id,
            process: ev.process,
            kind: ev.kind,
            preds: ev.preds,
            pwc: ev.pwc,
            clpt: ev.clpt,
            pt: ev.pt,
            clpt_max: ev.clpt_max,
        });
        self.last[p] = Some(id);
        Ok(id)
    }

    /// Mutable access for fault-injection tests.
    pub fn set_pwc(&mut self, id: EventId, pwc: PwcTimestamp) -> Result<(), OracleError> {
        self.get(id)?;
        self.events[id.index()].pwc = pwc;
        Ok(())
    }

    pub fn write_lines<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "#pwc-log processes={}", self.n)?;
        for e in &self.events {
            let preds: Vec<String> = e.preds.iter().map(|p| p.0.to_string()).collect();
            let preds = if preds.is_empty() { "-".to_string() } else { preds.join(",") };
            let vc: Vec<String> = self.vclock(e.id).unwrap().iter().map(u32::to_string).collect();
            write!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.id.0,
                e.process,
                e.kind.letter(),
                preds,
                e.pwc.0,
                e.clpt,
                e.pt,
                vc.join(",")
            )?;
            if let Some(m) = e.clpt_max {
                write!(w, "\t{m}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parses a log written by [`write_lines`](Self::write_lines). Vector
    /// clocks are recomputed and must match the recorded ones.
    pub fn read_lines<R: BufRead>(r: R) -> Result<Self, OracleError> {
        let mut log: Option<EventLog> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let err = |reason: String| OracleError::Parse { line: lineno, reason };
            if let Some(rest) = line.strip_prefix("#pwc-log") {
                let n = rest
                    .trim()
                    .strip_prefix("processes=")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err("bad header".into()))?;
                log = Some(EventLog::new(n));
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let log = log.as_mut().ok_or_else(|| err("missing header".into()))?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 && f.len() != 9 {
                return Err(err(format!("expected 8 or 9 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
            let id = num(f[0])? as u32;
            if id as usize != log.len() {
                return Err(err(format!("id {id} out of order")));
            }
            let process = num(f[1])? as u32;
            let kind = f[2]
                .chars()
                .next()
                .and_then(EventKind::from_letter)
                .ok_or_else(|| err(format!("bad kind {:?}", f[2])))?;
            let mut preds = Preds::default();
            if f[3] != "-" {
                for p in f[3].split(',') {
                    let p = EventId(num(p)? as u32);
                    if log.get(p)?.process == process {
                        preds.local = Some(p);
                    } else {
                        preds.remote = Some(p);
                    }
                }
            }
            let clpt_max = if f.len() == 9 { Some(num(f[8])?) } else { None };
            let new = log.record(NewEvent {
                process,
                kind,
                preds,
                pwc: PwcTimestamp(num(f[4])?),
                clpt: num(f[5])?,
                pt: num(f[6])?,
                clpt_max,
            })?;
            let vc: Vec<u32> = f[7].split(',').map(|s| num(s).map(|v| v as u32)).collect::<Result<_, _>>()?;
            if vc != log.vclock(new)? {
                return Err(err("vector clock does not match preds".into()));
            }
        }
        log.ok_or(OracleError::Parse { line: 0, reason: "empty log".into() })
    }
}

fn vc_leq(a: &[u32], b: &[u32]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

pub fn happened_before(log: &EventLog, e: EventId, f: EventId) -> Result<bool, OracleError> {
    let (a, b) = (log.vclock(e)?, log.vclock(f)?);
    Ok(e != f && vc_leq(a, b))
}

/// Causal edges whose timestamps are not increasing. Checking generator
/// edges suffices: integer order is transitive.
pub fn verify_causality(log: &EventLog) -> Vec<(EventId, EventId)> {
    let mut bad = Vec::new();
    for f in log.events() {
        for p in f.preds.iter() {
            if log.events[p.index()].pwc >= f.pwc {
                bad.push((p, f.id));
            }
        }
    }
    bad
}

/// Every causally ordered pair with non-increasing timestamps. Quadratic.
pub fn verify_causality_full(log: &EventLog) -> Result<Vec<(EventId, EventId)>, OracleError> {
    if log.len() > FULL_PAIR_LIMIT {
        return Err(OracleError::TooLarge(log.len()));
    }
    let mut bad = Vec::new();
    for e in log.events() {
        for f in log.events() {
            if e.pwc >= f.pwc && happened_before(log, e.id, f.id)? {
                bad.push((e.id, f.id));
            }
        }
    }
    Ok(bad)
}

/// A consecutive causal chain: each member happened before the next and
/// timestamps step by exactly one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ccc {
    pub events: Vec<EventId>,
}

impl Ccc {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn pred_one_below(log: &EventLog, id: EventId) -> Option<EventId> {
    let ev = &log.events[id.index()];
    let want = ev.pwc.0.checked_sub(1)?;
    ev.preds.iter().find(|p| log.events[p.index()].pwc.0 == want)
}

/// For an event with `lpt = v > 0`, the chain of `v` predecessors ending at
/// it, each one timestamp apart. `None` if such a chain does not exist,
/// which in a run without overflow should never happen.
///
/// For `lpt = 0` nothing is required; any chain found by walking back is
/// still returned.
pub fn find_chain_for(log: &EventLog, f: EventId, u: u32) -> Result<Option<Ccc>, OracleError> {
    let ev = log.get(f)?;
    let v = ev.pwc.0 & low_mask(u);
    let mut chain = vec![f];
    let mut cur = f;
    if v == 0 {
        while let Some(p) = pred_one_below(log, cur) {
            chain.push(p);
            cur = p;
        }
        if chain.len() == 1 {
            return Ok(None);
        }
    } else {
        for _ in 0..v {
            match pred_one_below(log, cur) {
                Some(p) => {
                    chain.push(p);
                    cur = p;
                }
                None => return Ok(None),
            }
        }
    }
    chain.reverse();
    Ok(Some(Ccc { events: chain }))
}

/// A longest consecutive causal chain.
///
/// Consecutive members must be joined by a direct edge: if `a → g → b` with
/// `g` in between, `pwc` would have to rise by at least two.
pub fn longest_mccc(log: &EventLog) -> Ccc {
    if log.is_empty() {
        return Ccc::default();
    }
    let mut len = vec![1u32; log.len()];
    let mut prev: Vec<Option<EventId>> = vec![None; log.len()];
    for ev in log.events() {
        let want = ev.pwc.0.wrapping_sub(1);
        for p in ev.preds.iter() {
            if log.events[p.index()].pwc.0 == want && len[p.index()] + 1 > len[ev.id.index()] {
                len[ev.id.index()] = len[p.index()] + 1;
                prev[ev.id.index()] = Some(p);
            }
        }
    }
    let (mut best, _) = len.iter().enumerate().max_by_key(|&(i, l)| (*l, std::cmp::Reverse(i))).unwrap();
    let mut events = vec![EventId(best as u32)];
    while let Some(p) = prev[best] {
        events.push(p);
        best = p.index();
    }
    events.reverse();
    Ccc { events }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundViolation {
    /// `pwc < clpt` for the event.
    BelowClock(EventId),
    /// `pwc > max_k clpt_k + 2^u`.
    AboveEnvelope(EventId),
    /// Spread across processes exceeded `ε + 2^(u+1)` at this instant.
    Spread { at: u64, spread: u64 },
}

/// Checks the envelope `clpt ≤ pwc ≤ max_k clpt_k + 2^u` for every event and
/// the spread bound `ε + 2^(u+1)` on every recorded sample.
pub fn verify_bounds(log: &EventLog, epsilon_ticks: u64, u: u32) -> Result<Vec<BoundViolation>, OracleError> {
    let mut out = Vec::new();
    for e in log.events() {
        let max = e.clpt_max.ok_or(OracleError::MissingSnapshot(e.id))?;
        if e.pwc.0 < e.clpt {
            out.push(BoundViolation::BelowClock(e.id));
        }
        if e.pwc.0 > max.saturating_add(1 << u) {
            out.push(BoundViolation::AboveEnvelope(e.id));
        }
    }
    let limit = epsilon_ticks.saturating_add(2u64 << u);
    for s in log.samples() {
        let spread = s.max - s.min;
        if spread > limit {
            out.push(BoundViolation::Spread { at: s.at, spread });
        }
    }
    Ok(out)
}

/// Breadth-first reachability over preds. Slow; used to cross-check the
/// vector clocks.
pub fn reachable(log: &EventLog, from: EventId, to: EventId) -> bool {
    if from == to {
        return false;
    }
    let mut seen = vec![false; log.len()];
    let mut q = VecDeque::from([to]);
    while let Some(x) = q.pop_front() {
        for p in log.events[x.index()].preds.iter() {
            if p == from {
                return true;
            }
            if p > from && !seen[p.index()] {
                seen[p.index()] = true;
                q.push_back(p);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(v: u64) -> PwcTimestamp {
        PwcTimestamp(v)
    }

    fn local(log: &mut EventLog, p: u32, pwc: u64) -> EventId {
        let preds = Preds { local: log.last_on(p), remote: None };
        log.record(NewEvent {
            process: p,
            kind: EventKind::Local,
            preds,
            pwc: ts(pwc),
            clpt: 0,
            pt: 0,
            clpt_max: Some(0),
        })
        .unwrap()
    }

    fn send(log: &mut EventLog, p: u32, pwc: u64) -> EventId {
        let preds = Preds { local: log.last_on(p), remote: None };
        log.record(NewEvent {
            process: p,
            kind: EventKind::Send,
            preds,
            pwc: ts(pwc),
            clpt: 0,
            pt: 0,
            clpt_max: Some(0),
        })
        .unwrap()
    }

    fn recv(log: &mut EventLog, p: u32, from: EventId, pwc: u64) -> EventId {
        let preds = Preds { local: log.last_on(p), remote: Some(from) };
        log.record(NewEvent {
            process: p,
            kind: EventKind::Receive,
            preds,
            pwc: ts(pwc),
            clpt: 0,
            pt: 0,
            clpt_max: Some(0),
        })
        .unwrap()
    }

    #[test]
    fn vector_clocks() {
        let mut log = EventLog::new(3);
        let a = local(&mut log, 0, 1);
        assert_eq!(log.vclock(a).unwrap(), &[1, 0, 0]);
        let b = local(&mut log, 0, 2);
        assert_eq!(log.vclock(b).unwrap(), &[2, 0, 0]);
        local(&mut log, 1, 1);
        local(&mut log, 1, 2);
        let s = send(&mut log, 1, 3);
        assert_eq!(log.vclock(s).unwrap(), &[0, 3, 0]);
        let r = recv(&mut log, 0, s, 4);
        assert_eq!(log.vclock(r).unwrap(), &[3, 3, 0]);
        let l = local(&mut log, 2, 1);
        assert_eq!(log.vclock(l).unwrap(), &[0, 0, 1]);
    }

    #[test]
    fn record_rejects_bad_preds() {
        let mut log = EventLog::new(2);
        let a = local(&mut log, 0, 1);
        let bad = NewEvent {
            process: 1,
            kind: EventKind::Receive,
            preds: Preds { local: None, remote: Some(a) },
            pwc: ts(2),
            clpt: 0,
            pt: 0,
            clpt_max: None,
        };
        assert!(matches!(log.record(bad), Err(OracleError::BadPreds { .. })));
        let unknown = NewEvent { preds: Preds { local: None, remote: Some(EventId(9)) }, ..bad };
        assert!(matches!(log.record(unknown), Err(OracleError::UnknownEvent(_))));
        let skip = NewEvent { process: 0, kind: EventKind::Local, preds: Preds::default(), ..bad };
        assert!(matches!(log.record(skip), Err(OracleError::BadPreds { .. })));
        assert!(matches!(log.record(NewEvent { process: 5, ..skip }), Err(OracleError::UnknownProcess(5))));
    }

    #[test]
    fn happened_before_cases() {
        let mut log = EventLog::new(3);
        let e = send(&mut log, 0, 1);
        let x = local(&mut log, 1, 1);
        let g = recv(&mut log, 1, e, 2);
        let g2 = send(&mut log, 1, 3);
        let f = recv(&mut log, 2, g2, 4);
        assert!(happened_before(&log, e, g).unwrap());
        assert!(!happened_before(&log, e, x).unwrap() && !happened_before(&log, x, e).unwrap());
        assert!(happened_before(&log, e, f).unwrap());
        assert!(reachable(&log, e, f));
        assert!(!happened_before(&log, f, f).unwrap());
        assert!(happened_before(&log, e, EventId(99)).is_err());
    }

    #[test]
    fn causality_check() {
        assert!(verify_causality(&EventLog::new(2)).is_empty());
        let mut log = EventLog::new(2);
        let s = send(&mut log, 0, 5);
        let r = recv(&mut log, 1, s, 6);
        local(&mut log, 1, 7);
        assert!(verify_causality(&log).is_empty());
        log.set_pwc(r, ts(5)).unwrap();
        assert_eq!(verify_causality(&log), vec![(s, r)]);
        let full = verify_causality_full(&log).unwrap();
        assert_eq!(full, vec![(s, r)]);
    }

    #[test]
    fn chains() {
        // u = 3; p0 runs ahead at 16, p1's clock reads 8.
        let mut log = EventLog::new(2);
        let s = send(&mut log, 0, 16);
        let r = recv(&mut log, 1, s, 17);
        let l = local(&mut log, 1, 18);
        let c = find_chain_for(&log, r, 3).unwrap().unwrap();
        assert_eq!(c.events, vec![s, r]);
        let c = find_chain_for(&log, l, 3).unwrap().unwrap();
        assert_eq!(c.events, vec![s, r, l]);
        assert_eq!(find_chain_for(&log, s, 3).unwrap(), None);
        assert_eq!(longest_mccc(&log).events, vec![s, r, l]);

        // lpt 5 (u = 4) needs five predecessors, bouncing between processes.
        let mut log = EventLog::new(2);
        let a = send(&mut log, 0, 32);
        let b = recv(&mut log, 1, a, 33);
        let c = send(&mut log, 1, 34);
        let d = recv(&mut log, 0, c, 35);
        let e = send(&mut log, 0, 36);
        let f = recv(&mut log, 1, e, 37);
        let chain = find_chain_for(&log, f, 4).unwrap().unwrap();
        assert_eq!(chain.events, vec![a, b, c, d, e, f]);
        assert_eq!(find_chain_for(&log, f, 2).unwrap().unwrap().events, vec![e, f]);
    }

    #[test]
    fn mccc_trivial() {
        assert!(longest_mccc(&EventLog::new(1)).is_empty());
        let mut log = EventLog::new(2);
        local(&mut log, 0, 8);
        assert_eq!(longest_mccc(&log).len(), 1);
        local(&mut log, 1, 16);
        local(&mut log, 0, 24);
        assert_eq!(longest_mccc(&log).len(), 1);
    }

    /// p0 runs `skew` ticks ahead and sends once; p1 and p2 then ping-pong
    /// the message. Each hop costs two ticks of real time but only one of
    /// logical time, so the chain lasts until their clocks catch up.
    fn ping_pong(skew: u64, hops: usize) -> EventLog {
        let mut log = EventLog::new(3);
        let mut now = 0u64;
        let mut pwc = [0u64; 3];
        let mut last = send(&mut log, 0, skew);
        let mut to = 1usize;
        for _ in 0..hops {
            now += 2;
            let m = log.get(last).unwrap().pwc.0;
            pwc[to] = (pwc[to] + 1).max(m + 1).max(now);
            recv(&mut log, to as u32, last, pwc[to]);
            now += 2;
            pwc[to] = (pwc[to] + 1).max(now);
            last = send(&mut log, to as u32, pwc[to]);
            to = 3 - to;
        }
        log
    }

    /// Brute-force chain length: longest path along edges with delta 1.
    fn brute_mccc(log: &EventLog) -> usize {
        fn walk(log: &EventLog, id: EventId) -> usize {
            1 + log.events[id.index()]
                .preds
                .iter()
                .filter(|p| log.events[p.index()].pwc.0 + 1 == log.events[id.index()].pwc.0)
                .map(|p| walk(log, p))
                .max()
                .unwrap_or(0)
        }
        log.events().iter().map(|e| walk(log, e.id)).max().unwrap_or(0)
    }

    #[test]
    fn mccc_grows_with_skew() {
        let lens: Vec<usize> = [0u64, 10, 40].iter().map(|&s| longest_mccc(&ping_pong(s, 60)).len()).collect();
        for (s, l) in [0u64, 10, 40].iter().zip(&lens) {
            assert_eq!(*l, brute_mccc(&ping_pong(*s, 60)), "skew {s}");
        }
        assert!(lens[0] < lens[1] && lens[1] < lens[2], "{lens:?}");
    }

    #[test]
    fn bounds() {
        let mut log = EventLog::new(2);
        let mk = |pwc, clpt, max| NewEvent {
            process: 0,
            kind: EventKind::Local,
            preds: Preds::default(),
            pwc: ts(pwc),
            clpt,
            pt: clpt,
            clpt_max: Some(max),
        };
        log.record(mk(100, 100, 120)).unwrap();
        assert!(verify_bounds(&log, 20, 3).unwrap().is_empty());
        let mut ev = mk(129, 110, 120);
        ev.preds.local = log.last_on(0);
        let bad = log.record(ev).unwrap();
        log.push_sample(SkewSample { at: 5, min: 0, max: 36 });
        log.push_sample(SkewSample { at: 6, min: 0, max: 37 });
        assert_eq!(
            verify_bounds(&log, 20, 3).unwrap(),
            vec![BoundViolation::AboveEnvelope(bad), BoundViolation::Spread { at: 6, spread: 37 }]
        );
        let mut log = EventLog::new(1);
        log.record(NewEvent { clpt_max: None, ..mk(1, 1, 1) }).unwrap();
        assert!(matches!(verify_bounds(&log, 0, 1), Err(OracleError::MissingSnapshot(_))));
    }

    #[test]
    fn line_format_roundtrip() {
        let mut log = EventLog::new(3);
        let s = send(&mut log, 1, 10);
        local(&mut log, 0, 3);
        recv(&mut log, 0, s, 11);
        log.record(NewEvent {
            process: 2,
            kind: EventKind::Local,
            preds: Preds::default(),
            pwc: ts(4),
            clpt: 4,
            pt: 5,
            clpt_max: None,
        })
        .unwrap();
        let mut buf = Vec::new();
        log.write_lines(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#pwc-log processes=3\n0\t1\tS\t-\t10\t0\t0\t0,1,0\t0\n"), "{text}");
        let back = EventLog::read_lines(&buf[..]).unwrap();
        assert_eq!(back.events(), log.events());
        let mut again = Vec::new();
        back.write_lines(&mut again).unwrap();
        assert_eq!(again, buf);

        let tampered = text.replace("0,1,0", "0,2,0");
        assert!(EventLog::read_lines(tampered.as_bytes()).is_err());
        assert!(EventLog::read_lines("0\t0\tL\t-\t1\t1\t1\t1\n".as_bytes()).is_err());
    }

    /// Random DAG: each step picks a process and either does a local event,
    /// a send, or receives a random earlier send from another process.
    fn random_log(steps: &[(u8, u8, u16)], n: u32) -> EventLog {
        let mut log = EventLog::new(n as usize);
        let mut sends: Vec<EventId> = Vec::new();
        let mut pwc = 0u64;
        for &(p, k, pick) in steps {
            let p = p as u32 % n;
            pwc += 1;
            match k % 3 {
                0 => {
                    local(&mut log, p, pwc);
                }
                1 => sends.push(send(&mut log, p, pwc)),
                _ => {
                    let cands: Vec<_> = sends.iter().copied().filter(|s| log.get(*s).unwrap().process != p).collect();
                    if cands.is_empty() {
                        local(&mut log, p, pwc);
                    } else {
                        let s = cands[pick as usize % cands.len()];
                        recv(&mut log, p, s, pwc);
                    }
                }
            }
        }
        log
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn vclock_order_is_reachability(steps in prop::collection::vec((any::<u8>(), any::<u8>(), any::<u16>()), 1..60)) {
            let log = random_log(&steps, 4);
            for e in log.events() {
                for f in log.events() {
                    prop_assert_eq!(happened_before(&log, e.id, f.id).unwrap(), reachable(&log, e.id, f.id));
                }
            }
        }

        #[test]
        fn edge_check_matches_full_check(
            steps in prop::collection::vec((any::<u8>(), any::<u8>(), any::<u16>()), 1..60),
            corrupt in prop::collection::vec((any::<u16>(), 0u64..80), 0..4),
        ) {
            let mut log = random_log(&steps, 3);
            for (i, v) in corrupt {
                let id = EventId(i as u32 % log.len() as u32);
                log.set_pwc(id, ts(v)).unwrap();
            }
            let edges = verify_causality(&log);
            let full = verify_causality_full(&log).unwrap();
            prop_assert_eq!(edges.is_empty(), full.is_empty());
            for e in &edges {
                prop_assert!(full.contains(e));
            }
        }

        #[test]
        fn nothing_fits_between_chain_members(steps in prop::collection::vec((any::<u8>(), any::<u8>(), any::<u16>()), 1..60)) {
            // Timestamps here mimic the clock rule without a physical clock,
            // so chains are plentiful.
            let raw = random_log(&steps, 3);
            let mut log = EventLog::new(3);
            for e in raw.events() {
                let pwc = e.preds.iter().map(|p| log.get(p).unwrap().pwc.0 + 1).max().unwrap_or(0);
                log.record(NewEvent { pwc: ts(pwc), clpt_max: None, process: e.process, kind: e.kind, preds: e.preds, clpt: 0, pt: 0 }).unwrap();
            }
            let chain = longest_mccc(&log);
            prop_assert_eq!(chain.len(), brute_mccc(&log));
            for w in chain.events.windows(2) {
                prop_assert!(happened_before(&log, w[0], w[1]).unwrap());
                prop_assert_eq!(log.get(w[0]).unwrap().pwc.0 + 1, log.get(w[1]).unwrap().pwc.0);
                for g in log.events() {
                    prop_assert!(!(happened_before(&log, w[0], g.id).unwrap() && happened_before(&log, g.id, w[1]).unwrap()));
                }
            }
            for e in log.events() {
                if let Some(c) = find_chain_for(&log, e.id, 62).unwrap() {
                    prop_assert_eq!(c.len() as u64, e.pwc.0 + 1);
                }
            }
        }
    }
}
