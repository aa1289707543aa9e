//! Per-message send and receive cost as a linear function of payload size:
//! `time(size) ≈ const1 + const2 · size`.
//!
//! The sender floods for a fixed time per size and divides by the number of
//! messages it managed to send. The receiver groups arrivals by datagram
//! size and divides the span between the first and last arrival of each size
//! by the number of gaps.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fewer messages than this per size gives too noisy an estimate.
pub const MIN_MESSAGES: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Send,
    Receive,
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("need at least two distinct payload sizes")]
    Degenerate,
    #[error("only {count} messages of {size} bytes; need {MIN_MESSAGES}")]
    TooFew { size: usize, count: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub size: usize,
    pub count: u64,
    pub per_message_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub const1_ns: f64,
    pub const2_ns_per_byte: f64,
    pub points: Vec<SizePoint>,
}

pub trait MessageSink {
    fn send(&mut self, size: usize) -> io::Result<()>;
}

pub trait MessageSource {
    /// Size of the next message, or `None` if nothing arrived in time.
    fn recv(&mut self) -> io::Result<Option<usize>>;
}

/// Sends zero-filled datagrams to the peers in turn.
pub struct UdpSink {
    socket: UdpSocket,
    peers: Vec<SocketAddr>,
    next: usize,
    buf: Vec<u8>,
}

impl UdpSink {
    pub fn new(socket: UdpSocket, peers: Vec<SocketAddr>) -> Self {
        Self { socket, peers, next: 0, buf: Vec::new() }
    }
}

impl MessageSink for UdpSink {
    fn send(&mut self, size: usize) -> io::Result<()> {
        if self.buf.len() < size {
            self.buf.resize(size, 0);
        }
        let to = self.peers[self.next];
        self.next = (self.next + 1) % self.peers.len();
        match self.socket.send_to(&self.buf[..size], to) {
            Ok(_) => Ok(()),
            // A full socket buffer or an absent listener is the network's
            // problem, not the sender's cost.
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::ConnectionRefused) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

pub struct UdpSource {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl UdpSource {
    pub fn new(socket: UdpSocket) -> io::Result<Self> {
        socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        Ok(Self { socket, buf: vec![0; crate::wire::MAX_DATAGRAM] })
    }
}

impl MessageSource for UdpSource {
    fn recv(&mut self) -> io::Result<Option<usize>> {
        match self.socket.recv_from(&mut self.buf) {
            Ok((n, _)) => Ok(Some(n)),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Test fixture: each send busy-waits a fixed time plus a per-byte time.
#[derive(Debug, Clone, Copy)]
pub struct SpinSink {
    pub per_message: Duration,
    pub per_byte: Duration,
}

impl MessageSink for SpinSink {
    fn send(&mut self, size: usize) -> io::Result<()> {
        let until = Instant::now() + self.per_message + self.per_byte * size as u32;
        while Instant::now() < until {
            std::hint::spin_loop();
        }
        Ok(())
    }
}

fn distinct(sizes: &[usize]) -> Result<(), MeasureError> {
    let mut s = sizes.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() < 2 {
        return Err(MeasureError::Degenerate);
    }
    Ok(())
}

/// Least-squares line through the points; exact for two.
pub fn fit(points: Vec<SizePoint>) -> Result<LinearFit, MeasureError> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.size as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.per_message_ns).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.size as f64 - mx).powi(2)).sum();
    if points.len() < 2 || sxx == 0.0 {
        return Err(MeasureError::Degenerate);
    }
    let sxy: f64 = points.iter().map(|p| (p.size as f64 - mx) * (p.per_message_ns - my)).sum();
    let slope = sxy / sxx;
    Ok(LinearFit { const1_ns: my - slope * mx, const2_ns_per_byte: slope, points })
}

/// Floods `sink` with each size in turn for `per_size`.
pub fn measure_send<S: MessageSink>(
    sink: &mut S,
    sizes: &[usize],
    per_size: Duration,
) -> Result<LinearFit, MeasureError> {
    distinct(sizes)?;
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let start = Instant::now();
        let mut count = 0u64;
        while start.elapsed() < per_size {
            sink.send(size)?;
            count += 1;
        }
        if count < MIN_MESSAGES {
            return Err(MeasureError::TooFew { size, count });
        }
        let per = start.elapsed().as_nanos() as f64 / count as f64;
        points.push(SizePoint { size, count, per_message_ns: per });
    }
    fit(points)
}

/// Receives for `total`, timing each of `sizes` separately. Datagrams of
/// other sizes are ignored.
pub fn measure_receive<S: MessageSource>(
    source: &mut S,
    sizes: &[usize],
    total: Duration,
) -> Result<LinearFit, MeasureError> {
    distinct(sizes)?;
    let mut seen: BTreeMap<usize, (Instant, Instant, u64)> = BTreeMap::new();
    let start = Instant::now();
    while start.elapsed() < total {
        let Some(n) = source.recv()? else { continue };
        if !sizes.contains(&n) {
            continue;
        }
        let now = Instant::now();
        let e = seen.entry(n).or_insert((now, now, 0));
        e.1 = now;
        e.2 += 1;
    }
    let mut points = Vec::new();
    for &size in sizes {
        let (first, last, count) = seen.get(&size).copied().unwrap_or((start, start, 0));
        if count < MIN_MESSAGES {
            return Err(MeasureError::TooFew { size, count });
        }
        let per = (last - first).as_nanos() as f64 / (count - 1) as f64;
        points.push(SizePoint { size, count, per_message_ns: per });
    }
    fit(points)
}
