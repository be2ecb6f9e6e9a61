//! JSON scenario files and per-trial channel realizations.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wfl_alloc_core::baselines::OrderSearch;
use wfl_alloc_core::clustering::Clustering;
use wfl_alloc_core::flsim::{ToyChannel, ToyParams};
use wfl_alloc_core::model::db_to_linear;
use wfl_alloc_core::{RoundConfig, Scheme, UserProfile};

use crate::error::{Error, Result};

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Users,
    Subchannels,
    Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Toy training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlSimSpec {
    pub round: RoundConfig,
    pub num_users: usize,
    pub num_rounds: usize,
    /// Channel seeds `seed, seed + 1, ...`.
    pub num_seeds: usize,
    /// Seed of the (fixed) toy task.
    pub task_seed: u64,
    pub task: ToyParams,
    pub channel: ToyChannel,
    pub schemes: Vec<Scheme>,
    pub include_async: bool,
    /// Loss threshold `F* + fraction * (F(w0) - F*)` for rounds-to-threshold.
    pub threshold_fraction: f64,
}

impl Default for FlSimSpec {
    fn default() -> Self {
        Self {
            round: RoundConfig { num_subchannels: 4, flops_per_minibatch: 4e9, ..RoundConfig::default() },
            num_users: 8,
            num_rounds: 40,
            num_seeds: 20,
            task_seed: 0,
            task: ToyParams::default(),
            channel: ToyChannel::default(),
            schemes: Scheme::ALL.to_vec(),
            include_async: true,
            threshold_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub round: RoundConfig,
    pub num_users: usize,
    pub gain_db_min: f64,
    pub gain_db_max: f64,
    pub flops_per_second_min: f64,
    pub flops_per_second_max: f64,
    /// Samples per user, drawn uniformly from the integer range.
    pub dataset_size_min: u32,
    pub dataset_size_max: u32,
    pub minibatch_size: u32,
    pub clustering: Clustering,
    pub schemes: Vec<Scheme>,
    pub order_search: OrderSearch,
    pub num_trials: usize,
    pub seed: u64,
    pub sweep: Option<SweepSpec>,
    pub flsim: FlSimSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            round: RoundConfig::default(),
            num_users: 25,
            gain_db_min: 2.0,
            gain_db_max: 15.0,
            flops_per_second_min: 6e9,
            flops_per_second_max: 9e9,
            dataset_size_min: 300,
            dataset_size_max: 500,
            minibatch_size: 20,
            clustering: Clustering::Sorted,
            schemes: Scheme::ALL.to_vec(),
            order_search: OrderSearch::WithFallback,
            num_trials: 1000,
            seed: 0,
            sweep: None,
            flsim: FlSimSpec::default(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.round.validate().map_err(|e| Error::Config(e.to_string()))?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.num_users < self.round.num_subchannels {
            return bad("num_users must be at least num_subchannels");
        }
        if !(self.gain_db_min.is_finite() && self.gain_db_max.is_finite() && self.gain_db_min <= self.gain_db_max) {
            return bad("gain_db_min must not exceed gain_db_max");
        }
        if !(self.flops_per_second_min > 0.0 && self.flops_per_second_min <= self.flops_per_second_max && self.flops_per_second_max.is_finite()) {
            return bad("flops_per_second range must be positive and ordered");
        }
        if self.dataset_size_min == 0 || self.dataset_size_min > self.dataset_size_max {
            return bad("dataset_size range must be positive and ordered");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be at least 1");
        }
        if self.schemes.is_empty() {
            return bad("schemes must not be empty");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() || sweep.values.windows(2).any(|w| !(w[0] < w[1])) {
                return bad("sweep values must be non-empty and strictly increasing");
            }
        }
        let f = &self.flsim;
        f.round.validate().map_err(|e| Error::Config(format!("flsim.round: {e}")))?;
        if f.num_users < f.round.num_subchannels || f.num_rounds == 0 || f.num_seeds == 0 {
            return bad("flsim needs num_users >= num_subchannels and at least one round and seed");
        }
        if !(f.threshold_fraction > 0.0 && f.threshold_fraction < 1.0) {
            return bad("flsim.threshold_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Copy with the swept parameter set to `value`.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self> {
        let mut s = self.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("sweep value {v} is not a positive integer")))
            }
        };
        match param {
            SweepParam::Users => s.num_users = as_count(value)?,
            SweepParam::Subchannels => s.round.num_subchannels = as_count(value)?,
            SweepParam::Duration => s.round.round_duration_s = value,
        }
        s.validate()?;
        Ok(s)
    }
}

/// Seeded generator for trial `trial_index`: one ChaCha stream per trial.
pub fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

/// Draws the users of one trial. Weights are `|M_k| / sum |M|`, where
/// `|M_k| = max(1, round(|D_k| / M))`.
pub fn generate_realization(scenario: &Scenario, trial_index: u64) -> Vec<UserProfile> {
    let mut rng = trial_rng(scenario.seed, trial_index);
    let mut draws = Vec::with_capacity(scenario.num_users);
    for k in 0..scenario.num_users {
        let gain_db = rng.random_range(scenario.gain_db_min..=scenario.gain_db_max);
        let beta = rng.random_range(scenario.flops_per_second_min..=scenario.flops_per_second_max);
        let samples = rng.random_range(scenario.dataset_size_min..=scenario.dataset_size_max);
        let minibatches = ((f64::from(samples) / f64::from(scenario.minibatch_size)).round() as u32).max(1);
        draws.push((k, gain_db, beta, minibatches));
    }
    let total: u32 = draws.iter().map(|d| d.3).sum();
    draws
        .into_iter()
        .map(|(k, gain_db, beta, minibatches)| UserProfile {
            user_id: k as u32,
            minibatch_count: minibatches,
            weight: f64::from(minibatches) / f64::from(total),
            flops_per_second: beta,
            normalized_gain: scenario.round.gain_scale * db_to_linear(gain_db),
        })
        .collect()
}

/// Seed for random clustering in trial `trial_index`.
pub fn clustering_seed(seed: u64, trial_index: u64) -> u64 {
    seed.wrapping_add(trial_index.wrapping_mul(0x9E37_79B9_7F4A_7C15)).rotate_left(17)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realizations_are_seeded() {
        let s = Scenario { num_trials: 3, ..Scenario::default() };
        assert_eq!(generate_realization(&s, 4), generate_realization(&s, 4));
        assert_ne!(generate_realization(&s, 4), generate_realization(&s, 5));
    }

    #[test]
    fn weights_sum_to_one_and_gains_in_range() {
        let s = Scenario::default();
        let users = generate_realization(&s, 0);
        let total: f64 = users.iter().map(|u| u.weight).sum();
        assert!((total - 1.0).abs() <= 1e-9);
        let (lo, hi) = (1e6 * 10f64.powf(0.2), 1e6 * 10f64.powf(1.5));
        for u in &users {
            assert!(u.normalized_gain >= lo * (1.0 - 1e-12) && u.normalized_gain <= hi * (1.0 + 1e-12));
            assert!((15..=25).contains(&u.minibatch_count));
        }
    }

    #[test]
    fn json_defaults_and_validation() {
        let s = Scenario::from_json("{}").unwrap();
        assert_eq!(s, Scenario::default());
        let s = Scenario::from_json(r#"{"num_users": 12, "round": {"num_subchannels": 4}, "schemes": ["joint", "sync-oma"]}"#).unwrap();
        assert_eq!(s.num_users, 12);
        assert_eq!(s.round.num_subchannels, 4);
        assert_eq!(s.round.total_bandwidth_hz, 30e6);
        assert_eq!(s.schemes, [Scheme::Joint, Scheme::SyncOma]);
        assert!(Scenario::from_json(r#"{"num_users": 3}"#).is_err());
        assert!(Scenario::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(Scenario::from_json(r#"{"schemes": ["nope"]}"#).is_err());
        assert!(Scenario::from_json(r#"{"sweep": {"param": "duration", "values": [10, 5]}}"#).is_err());
    }

    #[test]
    fn sweep_overrides() {
        let s = Scenario::default();
        assert_eq!(s.with_param(SweepParam::Duration, 20.0).unwrap().round.round_duration_s, 20.0);
        assert_eq!(s.with_param(SweepParam::Users, 30.0).unwrap().num_users, 30);
        assert!(s.with_param(SweepParam::Users, 2.5).is_err());
        assert!(s.with_param(SweepParam::Subchannels, 40.0).is_err());
    }
}
