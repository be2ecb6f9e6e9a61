//! Physical-layer and computation delay primitives.
//!
//! All rate formulas are evaluated in the noise-normalized domain: a user's
//! gain is `g = |h|^2 / N_0` and the noise power of a subchannel equals its
//! bandwidth `B_n`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    math::powf(10.0, (dbm - 30.0) / 10.0)
}

/// Converts a dB ratio to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    math::powf(10.0, db / 10.0)
}

/// Round-level physical and protocol constants.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RoundConfig {
    /// Uplink bandwidth shared by all subchannels.
    pub total_bandwidth_hz: f64,
    pub num_subchannels: usize,
    pub round_duration_s: f64,
    /// Broadcast delay of the global model, identical for every user.
    pub downlink_delay_s: f64,
    pub max_power_w: f64,
    /// Size of an encoded local model.
    pub payload_bits: f64,
    pub flops_per_minibatch: f64,
    /// Multiplier applied to `10^(dB/10)` when drawing normalized gains.
    pub gain_scale: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            total_bandwidth_hz: 30e6,
            num_subchannels: 10,
            round_duration_s: 10.0,
            downlink_delay_s: 0.5,
            max_power_w: dbm_to_watts(46.0),
            payload_bits: 4.84 * 8.0 * 1e6,
            flops_per_minibatch: 0.04e9,
            gain_scale: 1e6,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.total_bandwidth_hz,
            self.round_duration_s,
            self.downlink_delay_s,
            self.max_power_w,
            self.payload_bits,
            self.flops_per_minibatch,
            self.gain_scale,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("round config fields must be finite and positive"));
        }
        if self.num_subchannels == 0 {
            return Err(Error::InvalidArgument("num_subchannels must be at least 1"));
        }
        if self.downlink_delay_s >= self.round_duration_s {
            return Err(Error::InvalidArgument("downlink delay must be shorter than the round"));
        }
        Ok(())
    }

    /// Time left for uploading and training once the global model arrives.
    pub fn usable_time_s(&self) -> f64 {
        self.round_duration_s - self.downlink_delay_s
    }

    pub fn equal_bandwidth_hz(&self) -> f64 {
        self.total_bandwidth_hz / self.num_subchannels as f64
    }
}

/// Per-user compute and data characteristics for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UserProfile {
    pub user_id: u32,
    /// Number of mini-batches in the local dataset, `|M_k|`.
    pub minibatch_count: u32,
    /// Aggregation weight `e_k`.
    pub weight: f64,
    pub flops_per_second: f64,
    /// `|h_k|^2 / N_0` in Hz/W.
    pub normalized_gain: f64,
}

/// Checks the population invariants: positive gains and speeds, non-empty
/// mini-batch sets, weights in (0, 1] summing to one.
pub fn validate_users(users: &[UserProfile]) -> Result<()> {
    if users.is_empty() {
        return Err(Error::InvalidArgument("user population is empty"));
    }
    let mut total = 0.0;
    for u in users {
        if !(u.normalized_gain.is_finite() && u.normalized_gain > 0.0) {
            return Err(Error::InvalidArgument("normalized_gain must be positive"));
        }
        if !(u.flops_per_second.is_finite() && u.flops_per_second > 0.0) {
            return Err(Error::InvalidArgument("flops_per_second must be positive"));
        }
        if u.minibatch_count == 0 {
            return Err(Error::InvalidArgument("minibatch_count must be at least 1"));
        }
        if !(u.weight > 0.0 && u.weight <= 1.0) {
            return Err(Error::InvalidArgument("weights must lie in (0, 1]"));
        }
        total += u.weight;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("weights must sum to 1"));
    }
    Ok(())
}

/// Users grouped by subchannel. Entries are positions into the user slice the
/// assignment was built from, each list sorted by ascending gain.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Assignment {
    pub subchannels: Vec<Vec<usize>>,
}

impl Assignment {
    pub fn num_subchannels(&self) -> usize {
        self.subchannels.len()
    }

    pub fn num_users(&self) -> usize {
        self.subchannels.iter().map(Vec::len).sum()
    }

    /// Checks that every user appears exactly once and that each subchannel
    /// is ordered by non-decreasing gain.
    pub fn validate(&self, users: &[UserProfile]) -> Result<()> {
        let mut seen = alloc::vec![false; users.len()];
        for list in &self.subchannels {
            if list.is_empty() {
                return Err(Error::InvalidArgument("assignment has an empty subchannel"));
            }
            for &k in list {
                if k >= users.len() {
                    return Err(Error::IndexOutOfRange { index: k, len: users.len() });
                }
                if core::mem::replace(&mut seen[k], true) {
                    return Err(Error::InvalidArgument("user assigned to more than one subchannel"));
                }
            }
            if list
                .windows(2)
                .any(|w| users[w[0]].normalized_gain > users[w[1]].normalized_gain)
            {
                return Err(Error::InvalidArgument("subchannel users not sorted by ascending gain"));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("user missing from assignment"));
        }
        Ok(())
    }
}

fn check_sic_args(gains: &[f64], powers: &[f64], bandwidth_hz: f64, index: usize) -> Result<()> {
    if gains.len() != powers.len() {
        return Err(Error::LengthMismatch { expected: gains.len(), got: powers.len() });
    }
    if index >= gains.len() {
        return Err(Error::IndexOutOfRange { index, len: gains.len() });
    }
    if !(bandwidth_hz > 0.0) {
        return Err(Error::InvalidArgument("subchannel bandwidth must be positive"));
    }
    Ok(())
}

/// SINR of user `index` (0-based, ascending gain order) after SIC: the
/// weaker users `j < index` are still interfering when it is decoded.
pub fn sic_sinr(gains: &[f64], powers: &[f64], bandwidth_hz: f64, index: usize) -> Result<f64> {
    check_sic_args(gains, powers, bandwidth_hz, index)?;
    let interference: f64 = gains[..index]
        .iter()
        .zip(&powers[..index])
        .map(|(g, p)| g * p)
        .sum();
    Ok(gains[index] * powers[index] / (interference + bandwidth_hz))
}

/// Shannon rate of user `index` in bits/s.
pub fn uplink_rate(gains: &[f64], powers: &[f64], bandwidth_hz: f64, index: usize) -> Result<f64> {
    let sinr = sic_sinr(gains, powers, bandwidth_hz, index)?;
    Ok(bandwidth_hz * math::log2_1p(sinr))
}

/// Time to upload `payload_bits` for user `index`.
pub fn uplink_delay(
    payload_bits: f64,
    gains: &[f64],
    powers: &[f64],
    bandwidth_hz: f64,
    index: usize,
) -> Result<f64> {
    let rate = uplink_rate(gains, powers, bandwidth_hz, index)?;
    if payload_bits == 0.0 {
        return Ok(0.0);
    }
    if !(rate > 0.0) {
        return Err(Error::InfeasibleDelay);
    }
    Ok(payload_bits / rate)
}

/// Upload delays of every user sharing one subchannel. A user with zero rate
/// gets an infinite delay instead of an error.
pub fn subchannel_uplink_delays(
    payload_bits: f64,
    gains: &[f64],
    powers: &[f64],
    bandwidth_hz: f64,
) -> Vec<f64> {
    let mut received = bandwidth_hz;
    gains
        .iter()
        .zip(powers)
        .map(|(g, p)| {
            let own = g * p;
            let rate = bandwidth_hz * math::log2_1p(own / received);
            received += own;
            if payload_bits == 0.0 {
                0.0
            } else if rate > 0.0 {
                payload_bits / rate
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Local training time for `minibatches_trained` mini-batches.
pub fn compute_delay(minibatches_trained: f64, flops_per_minibatch: f64, flops_per_second: f64) -> Result<f64> {
    if !(flops_per_second > 0.0) {
        return Err(Error::InvalidArgument("processing speed must be positive"));
    }
    if minibatches_trained < 0.0 || flops_per_minibatch < 0.0 {
        return Err(Error::InvalidArgument("mini-batch count and FLOPs must be non-negative"));
    }
    Ok(minibatches_trained * flops_per_minibatch / flops_per_second)
}

pub fn total_delay(uplink_s: f64, compute_s: f64, downlink_s: f64) -> f64 {
    uplink_s + compute_s + downlink_s
}

/// Mini-batches that fit between the model broadcast and the upload
/// deadline. Fractional counts are allowed; clamps at zero.
pub fn feasible_minibatches(
    round_duration_s: f64,
    downlink_s: f64,
    uplink_s: f64,
    flops_per_second: f64,
    flops_per_minibatch: f64,
) -> f64 {
    let compute_s = round_duration_s - downlink_s - uplink_s;
    if compute_s > 0.0 {
        compute_s * flops_per_second / flops_per_minibatch
    } else {
        0.0
    }
}
