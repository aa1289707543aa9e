//! Per-agent event journals and their offline merge into one oracle log.
//!
//! ```text
//! #pwc-journal agent=<id> u=<u>
//! S  <pwc> <clpt> <pt> <to> <seq>
//! R  <pwc> <clpt> <pt> <from> <seq> <msg_pwc>
//! ```
//!
//! Fields are tab-separated. A send's `seq` is the sender's own counter, so
//! `(from, seq)` on a receive names exactly one send in the sender's journal.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use pwc_core::oracle::{EventId, EventLog, NewEvent, OracleError, Preds};
use pwc_core::{EventKind, PwcTimestamp};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JournalEntry {
    Send { pwc: u64, clpt: u64, pt: u64, to: u16, seq: u64 },
    Receive { pwc: u64, clpt: u64, pt: u64, from: u16, seq: u64, msg_pwc: u64 },
}

impl JournalEntry {
    pub fn pwc(&self) -> u64 {
        match *self {
            JournalEntry::Send { pwc, .. } | JournalEntry::Receive { pwc, .. } => pwc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Journal {
    pub agent_id: u16,
    pub u: u32,
    pub entries: Vec<JournalEntry>,
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate agent id {0}")]
    DuplicateAgent(u16),
    #[error("journals are not consistent with any causal order")]
    Stuck,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct JournalWriter<W: Write> {
    w: io::BufWriter<W>,
}

impl<W: Write> JournalWriter<W> {
    pub fn new(w: W, agent_id: u16, u: u32) -> io::Result<Self> {
        let mut w = io::BufWriter::new(w);
        writeln!(w, "#pwc-journal agent={agent_id} u={u}")?;
        Ok(Self { w })
    }

    pub fn entry(&mut self, e: &JournalEntry) -> io::Result<()> {
        match *e {
            JournalEntry::Send { pwc, clpt, pt, to, seq } => writeln!(self.w, "S\t{pwc}\t{clpt}\t{pt}\t{to}\t{seq}"),
            JournalEntry::Receive { pwc, clpt, pt, from, seq, msg_pwc } => {
                writeln!(self.w, "R\t{pwc}\t{clpt}\t{pt}\t{from}\t{seq}\t{msg_pwc}")
            }
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.w.flush()
    }
}

fn parse_header(s: &str) -> Option<(u16, u32)> {
    let rest = s.strip_prefix("#pwc-journal ")?;
    let mut agent = None;
    let mut u = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=')? {
            ("agent", v) => agent = v.parse().ok(),
            ("u", v) => u = v.parse().ok(),
            _ => return None,
        }
    }
    Some((agent?, u?))
}

fn parse_entry(s: &str) -> Option<JournalEntry> {
    let f: Vec<&str> = s.split('\t').collect();
    let n = |i: usize| f.get(i)?.parse::<u64>().ok();
    match (f[0], f.len()) {
        ("S", 6) => Some(JournalEntry::Send { pwc: n(1)?, clpt: n(2)?, pt: n(3)?, to: f[4].parse().ok()?, seq: n(5)? }),
        ("R", 7) => Some(JournalEntry::Receive {
            pwc: n(1)?,
            clpt: n(2)?,
            pt: n(3)?,
            from: f[4].parse().ok()?,
            seq: n(5)?,
            msg_pwc: n(6)?,
        }),
        _ => None,
    }
}

pub fn read_journal<R: BufRead>(r: R) -> Result<Journal, JournalError> {
    let mut lines = r.lines();
    let bad = |line: usize, msg: &str| JournalError::Parse { line, msg: msg.into() };
    let header = lines.next().ok_or_else(|| bad(1, "empty journal"))??;
    let (agent_id, u) = parse_header(&header).ok_or_else(|| bad(1, "bad header"))?;
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        entries.push(parse_entry(&line).ok_or_else(|| bad(i + 2, "bad entry"))?);
    }
    Ok(Journal { agent_id, u, entries })
}

#[derive(Debug)]
pub struct Merged {
    /// Process `k` of the log is `agents[k]`.
    pub agents: Vec<u16>,
    pub log: EventLog,
    /// Receives whose send is in no journal. They are recorded as local
    /// events so the process order around them is still checked.
    pub orphans: u64,
}

/// Interleaves the journals into one log in which every send precedes its
/// receives, reconstructing preds from `(sender, seq)`.
pub fn merge(journals: &[Journal]) -> Result<Merged, JournalError> {
    let mut order: Vec<usize> = (0..journals.len()).collect();
    order.sort_by_key(|&k| journals[k].agent_id);
    let agents: Vec<u16> = order.iter().map(|&k| journals[k].agent_id).collect();
    if let Some(w) = agents.windows(2).find(|w| w[0] == w[1]) {
        return Err(JournalError::DuplicateAgent(w[0]));
    }
    // None until the send has been placed in the log.
    let mut sends: HashMap<(u16, u64), Option<EventId>> = HashMap::new();
    for j in journals {
        for e in &j.entries {
            if let JournalEntry::Send { seq, .. } = *e {
                sends.insert((j.agent_id, seq), None);
            }
        }
    }

    let mut log = EventLog::new(journals.len());
    let mut orphans = 0;
    let mut cursor = vec![0usize; journals.len()];
    let total: usize = journals.iter().map(|j| j.entries.len()).sum();
    let mut placed = 0;
    while placed < total {
        let before = placed;
        for (p, &k) in order.iter().enumerate() {
            let j = &journals[k];
            while let Some(e) = j.entries.get(cursor[p]) {
                let (kind, remote, pwc, clpt, pt) = match *e {
                    JournalEntry::Send { pwc, clpt, pt, .. } => (EventKind::Send, None, pwc, clpt, pt),
                    JournalEntry::Receive { pwc, clpt, pt, from, seq, .. } => match sends.get(&(from, seq)) {
                        Some(None) => break,
                        Some(Some(id)) => (EventKind::Receive, Some(*id), pwc, clpt, pt),
                        None => {
                            orphans += 1;
                            (EventKind::Local, None, pwc, clpt, pt)
                        }
                    },
                };
                let id = log.record(NewEvent {
                    process: p as u32,
                    kind,
                    preds: Preds { local: log.last_on(p as u32), remote },
                    pwc: PwcTimestamp(pwc),
                    clpt,
                    pt,
                    clpt_max: None,
                })?;
                if let JournalEntry::Send { seq, .. } = *e {
                    sends.insert((j.agent_id, seq), Some(id));
                }
                cursor[p] += 1;
                placed += 1;
            }
        }
        if placed == before {
            return Err(JournalError::Stuck);
        }
    }
    Ok(Merged { agents, log, orphans })
}
