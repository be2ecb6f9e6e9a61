//! Proportion-of-trained-mini-batches metrics.
//!
//! The LPTM of a user is the fraction of its mini-batch set trained in one
//! round; the WGPTM is the aggregation-weighted sum of LPTMs and is the
//! quantity every allocator in this crate maximizes.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{RoundConfig, UserProfile};

/// Per-round training outcome, indexed by user position.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundMetrics {
    pub per_user_lptm: Vec<f64>,
    pub wgptm: f64,
    pub per_user_minibatches: Vec<f64>,
    pub per_user_uplink_s: Vec<f64>,
    pub per_user_compute_s: Vec<f64>,
    /// Whether the user's upload finishes within the round.
    pub per_user_feasible: Vec<bool>,
}

impl RoundMetrics {
    /// Builds the metrics of a round from the users' upload delays. Users
    /// whose upload does not fit in the round train nothing.
    pub fn from_uplink(config: &RoundConfig, users: &[UserProfile], uplink_s: &[f64]) -> Result<Self> {
        if users.len() != uplink_s.len() {
            return Err(Error::LengthMismatch { expected: users.len(), got: uplink_s.len() });
        }
        let usable = config.usable_time_s();
        let compute_s: Vec<f64> = uplink_s.iter().map(|&tu| if tu < usable { usable - tu } else { 0.0 }).collect();
        let feasible: Vec<bool> = uplink_s.iter().map(|&tu| tu <= usable).collect();
        Self::from_parts(config, users, uplink_s.to_vec(), compute_s, feasible)
    }

    /// Builds the metrics from explicit per-user training times, for
    /// schedules where the time lost to uploading is not the user's own
    /// upload delay (TDMA slots).
    pub fn from_parts(
        config: &RoundConfig,
        users: &[UserProfile],
        per_user_uplink_s: Vec<f64>,
        per_user_compute_s: Vec<f64>,
        per_user_feasible: Vec<bool>,
    ) -> Result<Self> {
        for len in [per_user_uplink_s.len(), per_user_compute_s.len(), per_user_feasible.len()] {
            if len != users.len() {
                return Err(Error::LengthMismatch { expected: users.len(), got: len });
            }
        }
        let mut per_user_minibatches = Vec::with_capacity(users.len());
        let mut per_user_lptm = Vec::with_capacity(users.len());
        for (u, &tc) in users.iter().zip(&per_user_compute_s) {
            let phi = tc.max(0.0) * u.flops_per_second / config.flops_per_minibatch;
            per_user_minibatches.push(phi);
            per_user_lptm.push(lptm(phi, u.minibatch_count)?);
        }
        let weights: Vec<f64> = users.iter().map(|u| u.weight).collect();
        let wgptm = wgptm(&weights, &per_user_lptm)?;
        Ok(Self { per_user_lptm, wgptm, per_user_minibatches, per_user_uplink_s, per_user_compute_s, per_user_feasible })
    }

    /// Replaces every user's LPTM with the smallest one (synchronous FL:
    /// everybody trains as much as the slowest user).
    pub fn synchronized(mut self, users: &[UserProfile], config: &RoundConfig) -> Self {
        let common = self.per_user_lptm.iter().copied().fold(f64::INFINITY, f64::min);
        let common = if common.is_finite() { common } else { 0.0 };
        for (k, u) in users.iter().enumerate() {
            self.per_user_lptm[k] = common;
            let phi = common * f64::from(u.minibatch_count);
            self.per_user_minibatches[k] = phi;
            self.per_user_compute_s[k] = phi * config.flops_per_minibatch / u.flops_per_second;
        }
        let total_weight: f64 = users.iter().map(|u| u.weight).sum();
        self.wgptm = common * total_weight;
        self
    }

    /// Number of users whose upload does not finish before the deadline.
    pub fn infeasible_users(&self) -> usize {
        self.per_user_feasible.iter().filter(|f| !**f).count()
    }
}

/// Fraction of a user's mini-batch set trained in the round; may exceed 1.
pub fn lptm(minibatches_trained: f64, minibatch_count: u32) -> Result<f64> {
    if minibatch_count == 0 {
        return Err(Error::InvalidArgument("mini-batch count must be at least 1"));
    }
    Ok(minibatches_trained / f64::from(minibatch_count))
}

pub fn wgptm(weights: &[f64], lptms: &[f64]) -> Result<f64> {
    if weights.len() != lptms.len() {
        return Err(Error::LengthMismatch { expected: weights.len(), got: lptms.len() });
    }
    Ok(weights.iter().zip(lptms).map(|(e, phi)| e * phi).sum())
}

/// WGPTM written directly in terms of upload delays:
/// `sum_k (T - T_d - T_u,k) * beta_k / (alpha * sum_k |M_k|)`, with each
/// user's term clamped at zero.
///
/// Agrees with [`wgptm`] of the per-user LPTMs whenever the weights are
/// `e_k = |M_k| / sum |M|`.
pub fn wgptm_from_delays(config: &RoundConfig, users: &[UserProfile], uplink_s: &[f64]) -> f64 {
    let total_minibatches: f64 = users.iter().map(|u| f64::from(u.minibatch_count)).sum();
    let usable = config.usable_time_s();
    let weighted: f64 = users
        .iter()
        .zip(uplink_s)
        .map(|(u, &tu)| if tu < usable { (usable - tu) * u.flops_per_second } else { 0.0 })
        .sum();
    weighted / (config.flops_per_minibatch * total_minibatches)
}
