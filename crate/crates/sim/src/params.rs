use pwc_core::OverflowPolicy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Destinations uniform over all other processes.
    #[default]
    Random,
    /// Like `Random`, but process 0's clock is pinned near the top of the
    /// skew envelope.
    TimeLeader,
    /// Process 0 is the hub; spokes only talk to it.
    HubSpoke,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Random => "random",
            Topology::TimeLeader => "time_leader",
            Topology::HubSpoke => "hub_spoke",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Topology::Random),
            "time_leader" => Some(Topology::TimeLeader),
            "hub_spoke" => Some(Topology::HubSpoke),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traffic {
    /// Evenly spaced at the nominal rate, with a random phase per process.
    #[default]
    Uniform,
    /// Exponential gaps (Bernoulli per µs) at the nominal rate.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSkew {
    /// Every clock starts at true time.
    Zero,
    /// Offsets start uniform over the allowed envelope.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Clock steps ahead by this many µs, then slews back at half rate.
    ClockJumpForward(u64),
    /// Clock steps back by this many µs, then recovers at half rate.
    NegativeLeap(u64),
    /// Clock drifts this many µs past the envelope at half rate, then back.
    SkewViolation(u64),
    /// `pwc` is overwritten with this raw value.
    PwcCorruption(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at_us: u64,
    pub process: usize,
    pub kind: FaultKind,
}

/// One simulation. Times are µs; one physical tick is 1 µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub n_processes: usize,
    pub topology: Topology,
    pub epsilon_us: u64,
    pub delta_se_us: u64,
    pub delta_re_us: u64,
    pub delta_loc_us: u64,
    pub latency_min_us: u64,
    pub latency_max_us: u64,
    /// Messages per node per second.
    pub send_rate: u64,
    /// Local events per node per second.
    pub local_rate: u64,
    pub traffic: Traffic,
    pub duration_s: f64,
    pub u: u32,
    /// Per-process override of `u`; empty means all use `u`.
    pub process_u: Vec<u32>,
    /// Sub-tick resolution of the raw clock: raw = µs << tick_shift.
    /// Defaults to the largest `u` in use.
    pub tick_shift: Option<u32>,
    pub policy: OverflowPolicy,
    pub seed: u64,
    /// Largest per-millisecond drift, as a fraction of real time.
    pub skew_walk_step: f64,
    pub initial_skew: InitialSkew,
    /// Pin process 0 near the top of the envelope and keep others below it.
    /// Implied by `TimeLeader`.
    pub pin_leader: bool,
    pub faults: Vec<FaultSpec>,
    /// Run the range check on every process before stamping and each ms.
    pub sanity_reset: bool,
    /// Start times of windows `[t, t + 2ε]` in which nobody sends.
    pub suspend_windows: Vec<u64>,
    /// Also run a reference HLC on every process and count its failures.
    pub track_hlc: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            n_processes: 8,
            topology: Topology::Random,
            epsilon_us: 6_250,
            delta_se_us: 1,
            delta_re_us: 1,
            delta_loc_us: 1,
            latency_min_us: 1_000,
            latency_max_us: 20_000,
            send_rate: 1_000,
            local_rate: 0,
            traffic: Traffic::Uniform,
            duration_s: 1.0,
            u: 16,
            process_u: Vec::new(),
            tick_shift: None,
            policy: OverflowPolicy::Unguarded,
            seed: 0,
            skew_walk_step: DEFAULT_SKEW_WALK_STEP,
            initial_skew: InitialSkew::Uniform,
            pin_leader: false,
            faults: Vec::new(),
            sanity_reset: false,
            suspend_windows: Vec::new(),
            track_hlc: false,
        }
    }
}

pub const DEFAULT_SKEW_WALK_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{0}")]
    Invalid(String),
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ParamError> {
    Err(ParamError::Invalid(msg.into()))
}

impl SimParams {
    pub fn duration_us(&self) -> u64 {
        (self.duration_s * 1e6).round() as u64
    }

    pub fn u_of(&self, process: usize) -> u32 {
        self.process_u.get(process).copied().unwrap_or(self.u)
    }

    pub fn max_u(&self) -> u32 {
        self.process_u.iter().copied().fold(self.u, u32::max)
    }

    pub fn shift(&self) -> u32 {
        self.tick_shift.unwrap_or_else(|| self.max_u())
    }

    pub fn pinned(&self) -> bool {
        self.pin_leader || self.topology == Topology::TimeLeader
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.n_processes < 2 || self.n_processes > u16::MAX as usize {
            return bad("n_processes must be in 2..=65535");
        }
        if self.delta_se_us == 0 || self.delta_re_us == 0 || self.delta_loc_us == 0 {
            return bad("delta_se_us, delta_re_us and delta_loc_us must be at least 1");
        }
        if self.latency_min_us == 0 || self.latency_min_us > self.latency_max_us {
            return bad("need 1 <= latency_min_us <= latency_max_us");
        }
        if self.send_rate > 1_000_000 || self.local_rate > 1_000_000 {
            return bad("rates above one per µs are not representable");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive");
        }
        for u in std::iter::once(self.u).chain(self.process_u.iter().copied()) {
            if !(1..64).contains(&u) {
                return bad(format!("u = {u} outside 1..=63"));
            }
        }
        if !self.process_u.is_empty() && self.process_u.len() != self.n_processes {
            return bad("process_u must list one value per process");
        }
        if self.shift() < self.max_u() {
            return bad("tick_shift must be at least the largest u");
        }
        if !(0.0..=0.5).contains(&self.skew_walk_step) {
            return bad("skew_walk_step must be within [0, 0.5]");
        }
        self.policy.validate().map_err(|e| ParamError::Invalid(e.to_string()))?;
        let horizon = self.duration_us() as u128 + 4 * self.epsilon_us as u128 + self.max_fault_ticks() as u128 + 1;
        if horizon << self.shift() >= 1u128 << 62 {
            return bad("duration and epsilon do not fit the raw clock at this tick_shift");
        }
        for f in &self.faults {
            if f.process >= self.n_processes {
                return bad(format!("fault on unknown process {}", f.process));
            }
            if f.at_us >= self.duration_us() {
                return bad("fault scheduled after the end of the run");
            }
        }
        Ok(())
    }

    fn max_fault_ticks(&self) -> u64 {
        self.faults
            .iter()
            .map(|f| match f.kind {
                FaultKind::ClockJumpForward(j) | FaultKind::SkewViolation(j) => j,
                _ => 0,
            })
            .sum()
    }
}
