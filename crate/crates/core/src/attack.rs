//! Replay attacker on the occupancy measurement channel.
//!
//! The attacker watches the sensor from the start of the run, keeps the
//! smallest occupancy value seen so far, and from its start time onward
//! substitutes that stored value for the live sample on the targeted channel.
//! Everything downstream of the sensor (controller and detectors) receives
//! the substituted value. Because a stored minimum can only tie or undercut
//! the live reading, every occupancy difference the controller computes under
//! attack is nonpositive, which walks the green time down cycle after cycle.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct ReplayAttack<S: Scalar> {
    /// Running minimum of observed occupancy; +inf until the first sample.
    ras: S,
    /// Injection begins when sim_time reaches this, seconds. Infinity
    /// disables injection while recording continues.
    start_time: S,
    /// Index of the attacked occupancy channel.
    target_pair: usize,
}

impl<S: Scalar> ReplayAttack<S> {
    pub fn new(start_time: S, target_pair: usize) -> Self {
        ReplayAttack {
            ras: S::infinity(),
            start_time,
            target_pair,
        }
    }

    /// A recorder that never injects.
    pub fn disabled(target_pair: usize) -> Self {
        Self::new(S::infinity(), target_pair)
    }

    pub fn target_pair(&self) -> usize {
        self.target_pair
    }

    /// Stored minimum so far; infinite before the first recorded sample.
    pub fn ras(&self) -> S {
        self.ras
    }

    pub fn is_active(&self, sim_time: S) -> bool {
        sim_time >= self.start_time
    }

    /// Records one sensor sample. The first observation always lands because
    /// the stored value starts at infinity.
    pub fn record(&mut self, o_t: S) {
        if o_t < self.ras {
            self.ras = o_t;
        }
    }

    /// Returns what the downstream consumers see on the target channel at
    /// this instant. Callers must record the live sample first.
    pub fn inject(&self, o_true: S, sim_time: S) -> S {
        if self.is_active(sim_time) {
            self.ras
        } else {
            o_true
        }
    }

    /// Applies [`Self::inject`] to the targeted channel of a pair of
    /// occupancy measurements, leaving the other channel untouched.
    pub fn inject_pair(&self, o_meas: [S; 2], sim_time: S) -> [S; 2] {
        let mut out = o_meas;
        out[self.target_pair] = self.inject(o_meas[self.target_pair], sim_time);
        out
    }
}
