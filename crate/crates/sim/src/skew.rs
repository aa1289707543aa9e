//! Physical clocks under bounded skew.
//!
//! Each process's offset from true time drifts linearly within an epoch of
//! 1 ms, at a rate redrawn every epoch from `[-step, step]`, and is clamped
//! to `[0, ε]`. All pairwise offsets therefore stay within `ε`, and a clock
//! never runs backwards as long as `step ≤ 1`.
//!
//! With a pinned leader, process 0 sits at `ε·(1 − 1%)` and everyone else is
//! clamped below it.

use rand::Rng;

use crate::params::{FaultKind, InitialSkew, SimParams};

pub const EPOCH_US: u64 = 1_000;

#[derive(Debug, Clone, Copy)]
struct Walk {
    base: i64,
    drift: i64,
    start: u64,
}

#[derive(Debug, Clone, Copy)]
struct Adjust {
    kind: FaultKind,
    at: u64,
}

impl Adjust {
    /// Signed µs added to the clock at `t`, or `None` once it has decayed.
    fn value(&self, t: u64) -> Option<i64> {
        let dt = (t - self.at) as i64;
        match self.kind {
            FaultKind::ClockJumpForward(j) => {
                let v = j as i64 - dt / 2;
                (v > 0).then_some(v)
            }
            FaultKind::NegativeLeap(l) => {
                let v = l as i64 - dt / 2;
                (v > 0).then_some(-v)
            }
            FaultKind::SkewViolation(x) => {
                let x = x as i64;
                let up = dt / 2;
                if up <= x {
                    Some(up)
                } else {
                    let v = 2 * x - up;
                    (v > 0).then_some(v)
                }
            }
            FaultKind::PwcCorruption(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkewModel {
    walks: Vec<Walk>,
    adjusts: Vec<Vec<Adjust>>,
    max_drift: i64,
    eps: i64,
    leader: Option<i64>,
}

impl SkewModel {
    pub fn new<R: Rng>(p: &SimParams, rng: &mut R) -> Self {
        let eps = p.epsilon_us as i64;
        let leader = p.pinned().then(|| eps - eps / 100);
        let max_drift = (p.skew_walk_step * EPOCH_US as f64).round() as i64;
        let mut m = Self {
            walks: Vec::with_capacity(p.n_processes),
            adjusts: vec![Vec::new(); p.n_processes],
            max_drift,
            eps,
            leader,
        };
        for i in 0..p.n_processes {
            let (lo, hi) = m.bounds(i);
            let base = match p.initial_skew {
                InitialSkew::Zero => lo,
                InitialSkew::Uniform => rng.gen_range(lo..=hi),
            };
            let drift = m.draw(rng);
            m.walks.push(Walk { base, drift, start: 0 });
        }
        m
    }

    fn bounds(&self, i: usize) -> (i64, i64) {
        match self.leader {
            Some(l) if i == 0 => (l, l),
            Some(l) => (0, l),
            None => (0, self.eps),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> i64 {
        if self.max_drift == 0 {
            0
        } else {
            rng.gen_range(-self.max_drift..=self.max_drift)
        }
    }

    /// Offset of process `i` from true time, within the envelope.
    pub fn offset(&self, i: usize, t: u64) -> i64 {
        let w = self.walks[i];
        let (lo, hi) = self.bounds(i);
        let moved = (w.drift * (t - w.start) as i64).div_euclid(EPOCH_US as i64);
        (w.base + moved).clamp(lo, hi)
    }

    /// Reading of process `i`'s clock in µs at true time `t`.
    pub fn pt(&self, i: usize, t: u64) -> u64 {
        let mut v = t as i64 + self.offset(i, t);
        for a in &self.adjusts[i] {
            v += a.value(t).unwrap_or(0);
        }
        v.max(0) as u64
    }

    /// Starts a new epoch at `t`: offsets carry over, drift rates are redrawn.
    pub fn new_epoch<R: Rng>(&mut self, t: u64, rng: &mut R) {
        for i in 0..self.walks.len() {
            let base = self.offset(i, t);
            let drift = self.draw(rng);
            self.walks[i] = Walk { base, drift, start: t };
            self.adjusts[i].retain(|a| a.value(t).is_some());
        }
    }

    pub fn apply(&mut self, process: usize, kind: FaultKind, at: u64) {
        self.adjusts[process].push(Adjust { kind, at });
    }
}
