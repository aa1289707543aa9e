//! PWC over a real network: UDP agents that stamp every datagram they send
//! and receive, journals that can be merged and checked offline, and a tool
//! for measuring per-message send and receive cost.

pub mod agent;
pub mod journal;
pub mod measure;
pub mod ntp;
pub mod wire;

pub use agent::{run_agent, run_agent_on, run_loopback, AgentConfig, AgentStats, NetError, Peer};
pub use journal::{merge, read_journal, Journal, JournalEntry, Merged};
pub use measure::{measure_receive, measure_send, LinearFit, MeasureError, Role};
pub use ntp::NtpClock;
pub use wire::{WireError, WireMessage};
