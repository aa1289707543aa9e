//! A UDP agent: one loop floods uniformly chosen peers with stamped
//! datagrams, another stamps whatever arrives. Both share one clock and hand
//! every outcome to a collector thread, which owns the statistics and the
//! journal.

use std::collections::HashMap;
use std::fs::File;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use pwc_core::analysis::BitsHistogram;
use pwc_core::clock::bits_needed;
use pwc_core::{
    ClockError, ClockParams, OverflowPolicy, PhysicalClockSource, PwcClock, PwcTimestamp, SharedPwcClock, Stamp,
    StampOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::{JournalEntry, JournalError, JournalWriter};
use crate::ntp::{ticks_to_duration, NtpClock};
use crate::wire::{WireMessage, HEADER_LEN, MAX_DATAGRAM};

const FLUSH_EVERY: Duration = Duration::from_secs(1);
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peer {
    pub id: u16,
    pub addr: SocketAddr,
}

fn default_u() -> u32 {
    8
}
fn default_payload() -> usize {
    64
}
fn default_linger() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub agent_id: u16,
    pub listen: SocketAddr,
    pub peers: Vec<Peer>,
    #[serde(default = "default_u")]
    pub u: u32,
    #[serde(default)]
    pub policy: OverflowPolicy,
    /// Messages per second; absent means as fast as possible.
    #[serde(default)]
    pub rate_limit: Option<u64>,
    pub duration_s: f64,
    #[serde(default = "default_payload")]
    pub payload_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Event journal, flushed every second.
    #[serde(default)]
    pub journal: Option<PathBuf>,
    /// Where to write the final stats as JSON.
    #[serde(default)]
    pub stats: Option<PathBuf>,
    /// How long to keep receiving after the last send.
    #[serde(default = "default_linger")]
    pub linger_s: f64,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.peers.is_empty() {
            return bad("no peers".into());
        }
        let mut ids: Vec<u16> = self.peers.iter().map(|p| p.id).collect();
        ids.push(self.agent_id);
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("agent id {} used twice", w[0]));
        }
        if !(HEADER_LEN..=MAX_DATAGRAM).contains(&self.payload_size) {
            return bad(format!("payload_size must be within {HEADER_LEN}..={MAX_DATAGRAM}"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive".into());
        }
        if !(self.linger_s >= 0.0 && self.linger_s.is_finite()) {
            return bad("linger_s must be non-negative".into());
        }
        if self.rate_limit == Some(0) {
            return bad("rate_limit must be positive when set".into());
        }
        ClockParams::new(self.u)?;
        self.policy.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStats {
    pub agent_id: u16,
    pub sent: u64,
    pub received: u64,
    /// Malformed datagrams.
    pub dropped: u64,
    /// Event counts by bits needed, up to the widest seen.
    pub histogram: Vec<u64>,
    pub delayed: u64,
    pub discarded: u64,
    pub u_mismatch: u64,
    /// Receives not stamped above the message's timestamp.
    pub causality_violations: u64,
    /// Stamps not above the agent's previous stamp.
    pub non_increasing: u64,
    /// Datagrams arriving with a sequence number at or below one already
    /// seen from the same peer.
    pub reordered: u64,
    pub send_errors: u64,
}

enum Note {
    Stamped(JournalEntry),
    Delayed,
    Discarded,
    Dropped,
    UMismatch,
    Reordered,
    SendError,
}

/// Binds `cfg.listen` and runs against the host clock.
pub fn run_agent(cfg: &AgentConfig) -> Result<AgentStats, NetError> {
    cfg.validate()?;
    let socket = UdpSocket::bind(cfg.listen)?;
    run_agent_on(cfg, socket, NtpClock::new())
}

/// Runs on an already bound socket with the given clock.
pub fn run_agent_on<S>(cfg: &AgentConfig, socket: UdpSocket, source: S) -> Result<AgentStats, NetError>
where
    S: PhysicalClockSource + Send,
{
    cfg.validate()?;
    let clock = SharedPwcClock::new(PwcClock::new(ClockParams::new(cfg.u)?, source));
    let journal = match &cfg.journal {
        Some(p) => Some(JournalWriter::new(File::create(p)?, cfg.agent_id, cfg.u)?),
        None => None,
    };
    socket.set_read_timeout(Some(POLL))?;
    let rx_socket = socket.try_clone()?;
    let start = Instant::now();
    let stop_sending = start + Duration::from_secs_f64(cfg.duration_s);
    let stop_receiving = stop_sending + Duration::from_secs_f64(cfg.linger_s);
    let (tx, rx) = mpsc::channel();

    let stats = thread::scope(|s| {
        let collector = s.spawn(|| collect(cfg, rx, journal));
        let send_tx = tx.clone();
        let sender = s.spawn(|| send_loop(cfg, &clock, &socket, send_tx, start, stop_sending));
        let receiver = s.spawn(|| receive_loop(cfg, &clock, &rx_socket, tx, stop_receiving));
        let sent = sender.join().expect("send loop panicked");
        let recv = receiver.join().expect("receive loop panicked");
        let stats = collector.join().expect("collector panicked");
        sent?;
        recv?;
        stats
    })?;

    if let Some(p) = &cfg.stats {
        write_stats(p, &stats)?;
    }
    Ok(stats)
}

pub fn write_stats(path: &Path, stats: &AgentStats) -> io::Result<()> {
    let f = File::create(path)?;
    serde_json::to_writer_pretty(f, stats)?;
    Ok(())
}

fn send_loop<S: PhysicalClockSource>(
    cfg: &AgentConfig,
    clock: &SharedPwcClock<S>,
    socket: &UdpSocket,
    tx: mpsc::Sender<Note>,
    start: Instant,
    stop: Instant,
) -> Result<(), NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((cfg.agent_id as u64) << 48));
    let period = cfg.rate_limit.map(|r| Duration::from_secs_f64(1.0 / r as f64));
    let mut buf = vec![0u8; cfg.payload_size];
    let mut seq = 0u64;
    let mut k = 0u32;
    loop {
        let now = Instant::now();
        if now >= stop {
            return Ok(());
        }
        if let Some(p) = period {
            let due = start + p * k;
            k = k.saturating_add(1);
            if due > now {
                thread::sleep(due - now);
            }
        }
        let peer = &cfg.peers[rng.gen_range(0..cfg.peers.len())];
        let mut delayed = false;
        let pwc = loop {
            let mut c = clock.lock();
            let pt = c.source().now();
            let clpt = c.clpt();
            match c.guarded_stamp(Stamp::Send, cfg.policy)? {
                StampOutcome::Timestamped(ts) => {
                    let e = JournalEntry::Send { pwc: ts.0, clpt, pt, to: peer.id, seq };
                    let _ = tx.send(Note::Stamped(e));
                    break Some(ts.0);
                }
                StampOutcome::Delayed { wait_ticks, .. } => {
                    drop(c);
                    if !delayed {
                        delayed = true;
                        let _ = tx.send(Note::Delayed);
                    }
                    thread::sleep(ticks_to_duration(wait_ticks));
                }
                StampOutcome::Discarded => {
                    let _ = tx.send(Note::Discarded);
                    break None;
                }
            }
        };
        if let Some(pwc) = pwc {
            WireMessage { sender_id: cfg.agent_id, seq, pwc, u: cfg.u as u8 }.write_header(&mut buf);
            seq += 1;
            if socket.send_to(&buf, peer.addr).is_err() {
                let _ = tx.send(Note::SendError);
            }
        }
    }
}

fn receive_loop<S: PhysicalClockSource>(
    cfg: &AgentConfig,
    clock: &SharedPwcClock<S>,
    socket: &UdpSocket,
    tx: mpsc::Sender<Note>,
    stop: Instant,
) -> Result<(), NetError> {
    let mut buf = vec![0u8; MAX_DATAGRAM];
    let mut last_seq: HashMap<u16, u64> = HashMap::new();
    while Instant::now() < stop {
        let n = match socket.recv_from(&mut buf) {
            Ok((n, _)) => n,
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock
                        | io::ErrorKind::TimedOut
                        | io::ErrorKind::Interrupted
                        | io::ErrorKind::ConnectionRefused
                        | io::ErrorKind::ConnectionReset
                ) =>
            {
                continue
            }
            Err(e) => return Err(e.into()),
        };
        let Ok(m) = WireMessage::decode(&buf[..n]) else {
            let _ = tx.send(Note::Dropped);
            continue;
        };
        if m.u as u32 != cfg.u {
            let _ = tx.send(Note::UMismatch);
        }
        match last_seq.insert(m.sender_id, m.seq) {
            Some(prev) if m.seq <= prev => {
                last_seq.insert(m.sender_id, prev);
                let _ = tx.send(Note::Reordered);
            }
            _ => {}
        }
        let mut delayed = false;
        loop {
            let mut c = clock.lock();
            let pt = c.source().now();
            let clpt = c.clpt();
            match c.guarded_stamp(Stamp::Receive(PwcTimestamp(m.pwc)), cfg.policy)? {
                StampOutcome::Timestamped(ts) => {
                    let e =
                        JournalEntry::Receive { pwc: ts.0, clpt, pt, from: m.sender_id, seq: m.seq, msg_pwc: m.pwc };
                    let _ = tx.send(Note::Stamped(e));
                    break;
                }
                StampOutcome::Delayed { wait_ticks, .. } => {
                    drop(c);
                    if !delayed {
                        delayed = true;
                        let _ = tx.send(Note::Delayed);
                    }
                    thread::sleep(ticks_to_duration(wait_ticks));
                }
                StampOutcome::Discarded => {
                    let _ = tx.send(Note::Discarded);
                    break;
                }
            }
        }
    }
    Ok(())
}

fn collect(
    cfg: &AgentConfig,
    rx: mpsc::Receiver<Note>,
    mut journal: Option<JournalWriter<File>>,
) -> Result<AgentStats, NetError> {
    let mut st = AgentStats { agent_id: cfg.agent_id, ..Default::default() };
    let mut hist = BitsHistogram::default();
    let mask = (1u64 << cfg.u) - 1;
    let mut last: Option<u64> = None;
    let mut next_flush = Instant::now() + FLUSH_EVERY;
    loop {
        let wait = next_flush.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok(Note::Stamped(e)) => {
                let pwc = e.pwc();
                match e {
                    JournalEntry::Send { .. } => st.sent += 1,
                    JournalEntry::Receive { msg_pwc, .. } => {
                        st.received += 1;
                        if pwc <= msg_pwc {
                            st.causality_violations += 1;
                        }
                    }
                }
                if last.is_some_and(|l| pwc <= l) {
                    st.non_increasing += 1;
                }
                last = Some(pwc);
                hist.0[bits_needed(pwc & mask) as usize] += 1;
                if let Some(j) = &mut journal {
                    j.entry(&e)?;
                }
            }
            Ok(Note::Delayed) => st.delayed += 1,
            Ok(Note::Discarded) => st.discarded += 1,
            Ok(Note::Dropped) => st.dropped += 1,
            Ok(Note::UMismatch) => st.u_mismatch += 1,
            Ok(Note::Reordered) => st.reordered += 1,
            Ok(Note::SendError) => st.send_errors += 1,
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
        if Instant::now() >= next_flush {
            if let Some(j) = &mut journal {
                j.flush()?;
            }
            next_flush += FLUSH_EVERY;
        }
    }
    if let Some(j) = &mut journal {
        j.flush()?;
    }
    let width = hist.max_bits() as usize + 1;
    st.histogram = hist.0[..width].to_vec();
    Ok(st)
}

/// Journal path used by [`run_loopback`] for agent `id`.
pub fn journal_path(dir: &Path, id: u16) -> PathBuf {
    dir.join(format!("agent-{id}.journal"))
}

/// Runs `n` agents (ids `1..=n`) against each other on 127.0.0.1, each with
/// a journal in `dir`. `template` supplies everything but the ids, addresses
/// and journal paths.
pub fn run_loopback(n: u16, template: &AgentConfig, dir: &Path) -> Result<Vec<AgentStats>, NetError> {
    if n < 2 {
        return Err(NetError::Config("need at least two agents".into()));
    }
    let sockets: Vec<UdpSocket> = (0..n).map(|_| UdpSocket::bind("127.0.0.1:0")).collect::<Result<_, _>>()?;
    let addrs: Vec<SocketAddr> = sockets.iter().map(UdpSocket::local_addr).collect::<Result<_, _>>()?;
    let configs: Vec<AgentConfig> = (0..n)
        .map(|k| AgentConfig {
            agent_id: k + 1,
            listen: addrs[k as usize],
            peers: (0..n).filter(|&j| j != k).map(|j| Peer { id: j + 1, addr: addrs[j as usize] }).collect(),
            journal: Some(journal_path(dir, k + 1)),
            ..template.clone()
        })
        .collect();
    thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .zip(sockets)
            .map(|(cfg, sock)| s.spawn(move || run_agent_on(cfg, sock, NtpClock::new())))
            .collect();
        handles.into_iter().map(|h| h.join().expect("agent panicked")).collect()
    })
}
