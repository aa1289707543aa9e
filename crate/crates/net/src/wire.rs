//! Datagram layout. All integers are big-endian.
//!
//! ```text
//! 0      2    3        5            13           21   22
//! | "PW" | 01 | sender |    seq     |    pwc     | u  | padding...
//! ```

use thiserror::Error;

pub const MAGIC: [u8; 2] = *b"PW";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
/// Largest UDP payload over IPv4.
pub const MAX_DATAGRAM: usize = 65_507;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireMessage {
    pub sender_id: u16,
    pub seq: u64,
    pub pwc: u64,
    pub u: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("datagram of {0} bytes is shorter than the header")]
    Short(usize),
    #[error("bad magic {0:02x?}")]
    Magic([u8; 2]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("payload size {0} outside {HEADER_LEN}..={MAX_DATAGRAM}")]
    PayloadSize(usize),
}

impl WireMessage {
    /// Writes the header followed by zero padding up to `payload_size` bytes.
    pub fn encode(&self, payload_size: usize) -> Result<Vec<u8>, WireError> {
        if !(HEADER_LEN..=MAX_DATAGRAM).contains(&payload_size) {
            return Err(WireError::PayloadSize(payload_size));
        }
        let mut buf = vec![0u8; payload_size];
        self.write_header(&mut buf);
        Ok(buf)
    }

    /// Overwrites the first [`HEADER_LEN`] bytes of `buf`.
    ///
    /// # Panics
    /// If `buf` is shorter than the header.
    pub fn write_header(&self, buf: &mut [u8]) {
        buf[0..2].copy_from_slice(&MAGIC);
        buf[2] = VERSION;
        buf[3..5].copy_from_slice(&self.sender_id.to_be_bytes());
        buf[5..13].copy_from_slice(&self.seq.to_be_bytes());
        buf[13..21].copy_from_slice(&self.pwc.to_be_bytes());
        buf[21] = self.u;
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() < HEADER_LEN {
            return Err(WireError::Short(buf.len()));
        }
        let magic = [buf[0], buf[1]];
        if magic != MAGIC {
            return Err(WireError::Magic(magic));
        }
        if buf[2] != VERSION {
            return Err(WireError::Version(buf[2]));
        }
        let be64 = |r: std::ops::Range<usize>| u64::from_be_bytes(buf[r].try_into().unwrap());
        Ok(Self { sender_id: u16::from_be_bytes([buf[3], buf[4]]), seq: be64(5..13), pwc: be64(13..21), u: buf[21] })
    }
}
