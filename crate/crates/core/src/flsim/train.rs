//! Local training, aggregation and round-by-round simulation.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::task::ToyTask;
use crate::baselines::oma_slot_duration;
use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{db_to_linear, Assignment, RoundConfig, UserProfile};
use crate::noma::AllocationResult;

/// Iterations a user completes between intermediate aggregations in the
/// asynchronous schedule.
pub const ASYNC_BLOCK_ITERATIONS: u64 = 4;

fn check_finite(w: &[f64]) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged)
    }
}

/// `count` sequential mini-batch SGD steps at rate `eta_k`, visiting
/// mini-batches in `order` (cyclically).
pub fn local_train(w_start: &[f64], user: usize, count: u64, task: &ToyTask, order: &[usize]) -> Result<Vec<f64>> {
    if w_start.len() != task.dimension {
        return Err(Error::LengthMismatch { expected: task.dimension, got: w_start.len() });
    }
    if count > 0 && order.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch order"));
    }
    let eta = task.user_rate(user);
    let mut w = w_start.to_vec();
    for c in 0..count {
        let g = task.minibatch_gradient(user, order[(c % order.len() as u64) as usize], &w);
        w.iter_mut().zip(&g).for_each(|(w, g)| *w -= eta * g);
        check_finite(&w)?;
    }
    Ok(w)
}

/// Deterministic variant: `steps` full-gradient steps on `F_k`.
pub fn full_gradient_train(w_start: &[f64], user: usize, steps: u64, task: &ToyTask) -> Result<Vec<f64>> {
    let eta = task.user_rate(user);
    let mut w = w_start.to_vec();
    for _ in 0..steps {
        let g = task.user_gradient(user, &w);
        w.iter_mut().zip(&g).for_each(|(w, g)| *w -= eta * g);
        check_finite(&w)?;
    }
    Ok(w)
}

/// Weighted average of local models.
pub fn aggregate(local_models: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if local_models.len() != weights.len() {
        return Err(Error::LengthMismatch { expected: local_models.len(), got: weights.len() });
    }
    let d = local_models.first().map_or(0, Vec::len);
    let mut out = alloc::vec![0.0; d];
    for (w, e) in local_models.iter().zip(weights) {
        if w.len() != d {
            return Err(Error::LengthMismatch { expected: d, got: w.len() });
        }
        out.iter_mut().zip(w).for_each(|(o, x)| *o += e * x);
    }
    Ok(out)
}

/// Shuffled mini-batch order of every user for one round.
pub fn batch_orders(task: &ToyTask, seed: u64, round: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + round as u64);
    (0..task.num_users())
        .map(|k| {
            let mut order: Vec<usize> = (0..task.users[k].minibatches.len()).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Per-round channel and compute draws for the users of a task.
pub trait ChannelModel {
    fn draw(&self, task: &ToyTask, rng: &mut ChaCha8Rng) -> Vec<UserProfile>;
}

/// Independent block fading: gains uniform in dB, speeds uniform in FLOPS.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ToyChannel {
    pub gain_db_min: f64,
    pub gain_db_max: f64,
    pub flops_per_second_min: f64,
    pub flops_per_second_max: f64,
    pub gain_scale: f64,
}

impl Default for ToyChannel {
    fn default() -> Self {
        Self { gain_db_min: 2.0, gain_db_max: 15.0, flops_per_second_min: 6e9, flops_per_second_max: 9e9, gain_scale: 1e6 }
    }
}

impl ChannelModel for ToyChannel {
    fn draw(&self, task: &ToyTask, rng: &mut ChaCha8Rng) -> Vec<UserProfile> {
        (0..task.num_users())
            .map(|k| {
                let db = rng.random_range(self.gain_db_min..=self.gain_db_max);
                let beta = rng.random_range(self.flops_per_second_min..=self.flops_per_second_max);
                UserProfile {
                    user_id: k as u32,
                    minibatch_count: task.minibatch_count(k),
                    weight: task.weights[k],
                    flops_per_second: beta,
                    normalized_gain: self.gain_scale * db_to_linear(db),
                }
            })
            .collect()
    }
}

/// Round-level knobs shared by the training loops.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSetup {
    pub config: RoundConfig,
    pub clustering: Clustering,
    pub num_rounds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingTrace {
    pub label: String,
    pub seed: u64,
    /// `F(w_G^0)`.
    pub initial_loss: f64,
    /// `F(w_G^t)` after round `t` (0-based).
    pub losses: Vec<f64>,
    pub wgptm: Vec<f64>,
    /// Mini-batches each user trained in each round.
    pub minibatches: Vec<Vec<u64>>,
    /// Wall-clock length of each round.
    pub round_duration_s: Vec<f64>,
}

impl TrainingTrace {
    /// `F(w^{t-1}) - F(w^t)` for every round.
    pub fn loss_decreases(&self) -> Vec<f64> {
        let mut prev = self.initial_loss;
        self.losses
            .iter()
            .map(|&l| {
                let d = prev - l;
                prev = l;
                d
            })
            .collect()
    }

    /// Number of rounds until the loss first drops to `threshold`.
    pub fn rounds_to_reach(&self, threshold: f64) -> Option<usize> {
        self.losses.iter().position(|&l| l <= threshold).map(|t| t + 1)
    }
}

fn empty_trace(label: &str, task: &ToyTask, setup: &TrainingSetup, w: &[f64]) -> TrainingTrace {
    TrainingTrace {
        label: label.into(),
        seed: setup.seed,
        initial_loss: task.global_loss(w),
        losses: Vec::with_capacity(setup.num_rounds),
        wgptm: Vec::with_capacity(setup.num_rounds),
        minibatches: Vec::with_capacity(setup.num_rounds),
        round_duration_s: Vec::with_capacity(setup.num_rounds),
    }
}

fn channel_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn clustering_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Flexible-aggregation training: every round draws a channel, clusters,
/// allocates, and lets each user run `floor(phi_k)` local steps from the
/// current global model before aggregation. Channel draws depend only on
/// the seed, so different allocators see the same realizations.
pub fn run_training<A>(
    task: &ToyTask,
    setup: &TrainingSetup,
    label: &str,
    allocator: A,
    channel: &dyn ChannelModel,
) -> Result<TrainingTrace>
where
    A: Fn(&Assignment, &[UserProfile], &RoundConfig) -> Result<AllocationResult>,
{
    let mut w = alloc::vec![0.0; task.dimension];
    let mut trace = empty_trace(label, task, setup, &w);
    let mut rng = channel_rng(setup.seed);
    for t in 0..setup.num_rounds {
        let users = channel.draw(task, &mut rng);
        let assignment = setup.clustering.assign(&users, setup.config.num_subchannels, clustering_seed(setup.seed, t))?;
        let result = allocator(&assignment, &users, &setup.config)?;
        let counts: Vec<u64> = result.metrics.per_user_minibatches.iter().map(|&phi| math::floor(phi.max(0.0)) as u64).collect();
        let orders = batch_orders(task, setup.seed, t);
        let locals = (0..task.num_users())
            .map(|k| local_train(&w, k, counts[k], task, &orders[k]))
            .collect::<Result<Vec<_>>>()?;
        w = aggregate(&locals, &task.weights)?;
        trace.losses.push(task.global_loss(&w));
        trace.wgptm.push(result.objective);
        trace.minibatches.push(counts);
        trace.round_duration_s.push(setup.config.round_duration_s);
    }
    Ok(trace)
}

/// Block counts of the idealized asynchronous MC-OMA schedule for one
/// realization, with the global round length.
///
/// Each subchannel's round is the sum of its TDMA slots plus the time its
/// slowest user needs for one block; the longest subchannel round sets the
/// global round. Every user then fits as many whole blocks as the time
/// left after its subchannel's slots allows (at least one).
pub fn async_blocks(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> (Vec<u64>, f64) {
    let block_s: Vec<f64> = users
        .iter()
        .map(|u| ASYNC_BLOCK_ITERATIONS as f64 * config.flops_per_minibatch / u.flops_per_second)
        .collect();
    let b = config.equal_bandwidth_hz();
    let slots: Vec<f64> = assignment
        .subchannels
        .iter()
        .map(|list| list.iter().map(|&k| oma_slot_duration(config, users[k].normalized_gain, b)).sum())
        .collect();
    let global = assignment
        .subchannels
        .iter()
        .zip(&slots)
        .map(|(list, s)| s + list.iter().map(|&k| block_s[k]).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let mut blocks = alloc::vec![1u64; users.len()];
    for (list, s) in assignment.subchannels.iter().zip(&slots) {
        for &k in list {
            let fit = math::floor((global - s) / block_s[k] * (1.0 + 1e-12));
            blocks[k] = if fit >= 1.0 { fit as u64 } else { 1 };
        }
    }
    (blocks, global)
}

/// Idealized asynchronous MC-OMA baseline. Within a global round every
/// user trains in blocks of four iterations; after each block the models
/// are averaged without upload cost, and users whose blocks are used up
/// contribute the current average unchanged. The per-round WGPTM is
/// `sum_k e_k (4 X_k) / |M_k|`.
pub fn run_async_oma(task: &ToyTask, setup: &TrainingSetup, channel: &dyn ChannelModel) -> Result<TrainingTrace> {
    let mut w = alloc::vec![0.0; task.dimension];
    let mut trace = empty_trace("async-oma", task, setup, &w);
    let mut rng = channel_rng(setup.seed);
    for t in 0..setup.num_rounds {
        let users = channel.draw(task, &mut rng);
        let assignment = setup.clustering.assign(&users, setup.config.num_subchannels, clustering_seed(setup.seed, t))?;
        let (blocks, global_s) = async_blocks(&assignment, &users, &setup.config);
        let orders = batch_orders(task, setup.seed, t);
        let most = blocks.iter().copied().max().unwrap_or(0);
        let mut done = alloc::vec![0u64; task.num_users()];
        for block in 0..most {
            let locals = (0..task.num_users())
                .map(|k| {
                    if block < blocks[k] {
                        let rotated: Vec<usize> = orders[k]
                            .iter()
                            .cycle()
                            .skip((done[k] % orders[k].len() as u64) as usize)
                            .take(orders[k].len())
                            .copied()
                            .collect();
                        done[k] += ASYNC_BLOCK_ITERATIONS;
                        local_train(&w, k, ASYNC_BLOCK_ITERATIONS, task, &rotated)
                    } else {
                        Ok(w.clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            w = aggregate(&locals, &task.weights)?;
        }
        let wgptm = (0..task.num_users())
            .map(|k| task.weights[k] * done[k] as f64 / f64::from(task.minibatch_count(k)))
            .sum();
        trace.losses.push(task.global_loss(&w));
        trace.wgptm.push(wgptm);
        trace.minibatches.push(done);
        trace.round_duration_s.push(global_s);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flsim::task::{make_toy_task, make_toy_task_with, ToyParams};
    use crate::noma::allocate_joint;
    use crate::{allocate, Scheme};
    use approx::assert_relative_eq;

    fn toy_setup(seed: u64) -> TrainingSetup {
        TrainingSetup {
            config: RoundConfig { num_subchannels: 2, flops_per_minibatch: 4e9, ..RoundConfig::default() },
            clustering: Clustering::Sorted,
            num_rounds: 6,
            seed,
        }
    }

    #[test]
    fn zero_steps_keep_the_model() {
        let task = make_toy_task(1, &[3], 2, 0).unwrap();
        assert_eq!(local_train(&[1.0, 2.0], 0, 0, &task, &[0, 1, 2]).unwrap(), [1.0, 2.0]);
    }

    #[test]
    fn single_full_batch_step() {
        let params = ToyParams { dimension: 1, minibatch_size: 4, ..ToyParams::default() };
        let task = make_toy_task_with(&[1], &params, 7).unwrap();
        let w0 = [0.7];
        let g = task.user_gradient(0, &w0)[0];
        let w1 = local_train(&w0, 0, 1, &task, &[0]).unwrap();
        assert_relative_eq!(w1[0], w0[0] - task.user_rate(0) * g, max_relative = 1e-14);
    }

    #[test]
    fn one_dimensional_training_reaches_minimizer() {
        let params = ToyParams { dimension: 1, minibatch_size: 1, step_fraction: 0.5, ..ToyParams::default() };
        let task = make_toy_task_with(&[1], &params, 3).unwrap();
        let w = full_gradient_train(&[0.0], 0, 20_000, &task).unwrap();
        let b = &task.users[0].minibatches[0];
        let (x, y) = (b.features[0], b.labels[0]);
        assert_relative_eq!(w[0], x * y / (x * x + task.regularization), max_relative = 1e-9);
    }

    #[test]
    fn full_gradient_steps_contract() {
        let task = make_toy_task(2, &[4, 6], 5, 1).unwrap();
        for k in 0..2 {
            let star = task.user_optimum(k).unwrap();
            let w0 = [3.0, -2.0, 1.0, 0.0, 4.0];
            let w1 = full_gradient_train(&w0, k, 3, &task).unwrap();
            let dist = |w: &[f64]| w.iter().zip(&star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            assert!(dist(&w1) <= dist(&w0));
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[alloc::vec![3.0, 1.0], alloc::vec![3.0, 1.0]], &[0.5, 0.5]).unwrap(), [3.0, 1.0]);
        assert_eq!(aggregate(&[alloc::vec![0.0], alloc::vec![2.0]], &[0.5, 0.5]).unwrap(), [1.0]);
        assert_eq!(aggregate(&[alloc::vec![4.0], alloc::vec![0.0]], &[0.25, 0.75]).unwrap(), [1.0]);
        assert!(aggregate(&[alloc::vec![4.0], alloc::vec![0.0, 1.0]], &[0.5, 0.5]).is_err());
        assert!(aggregate(&[alloc::vec![4.0]], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn idle_allocator_keeps_loss_constant() {
        let task = make_toy_task(4, &[5, 5, 5, 5], 3, 2).unwrap();
        let setup = TrainingSetup { config: RoundConfig { round_duration_s: 0.6, ..toy_setup(1).config }, ..toy_setup(1) };
        let trace = run_training(&task, &setup, "idle", allocate_joint, &ToyChannel::default()).unwrap();
        assert!(trace.minibatches.iter().flatten().all(|&c| c == 0));
        assert!(trace.losses.iter().all(|&l| l == trace.initial_loss));
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let task = make_toy_task(4, &[10, 12, 14, 16], 4, 3).unwrap();
        let setup = toy_setup(5);
        let a = run_training(&task, &setup, "joint", allocate_joint, &ToyChannel::default()).unwrap();
        let b = run_training(&task, &setup, "joint", allocate_joint, &ToyChannel::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.losses.last().unwrap() < &a.initial_loss);
        assert_eq!(a.loss_decreases().len(), setup.num_rounds);
        let sync = run_training(&task, &setup, "sync", |a, u, c| allocate(Scheme::SyncJoint, a, u, c), &ToyChannel::default()).unwrap();
        assert!(sync.wgptm.iter().zip(&a.wgptm).all(|(s, j)| s <= &(j * (1.0 + 1e-9))));
    }

    #[test]
    fn async_identical_users_train_one_block() {
        let users: Vec<UserProfile> = (0..4)
            .map(|k| UserProfile { user_id: k, minibatch_count: 10, weight: 0.25, flops_per_second: 7e9, normalized_gain: 5e6 })
            .collect();
        let a = Assignment { subchannels: alloc::vec![alloc::vec![0, 1], alloc::vec![2, 3]] };
        let (blocks, _) = async_blocks(&a, &users, &RoundConfig { num_subchannels: 2, ..RoundConfig::default() });
        assert_eq!(blocks, [1, 1, 1, 1]);
    }

    #[test]
    fn async_faster_users_train_more() {
        let speeds = [3e9, 9e9, 3e9, 9e9];
        let users: Vec<UserProfile> = (0..4)
            .map(|k| UserProfile { user_id: k as u32, minibatch_count: 10, weight: 0.25, flops_per_second: speeds[k], normalized_gain: 5e6 })
            .collect();
        let a = Assignment { subchannels: alloc::vec![alloc::vec![0, 1], alloc::vec![2, 3]] };
        let config = RoundConfig { num_subchannels: 2, flops_per_minibatch: 4e9, ..RoundConfig::default() };
        let (blocks, _) = async_blocks(&a, &users, &config);
        assert!(blocks[1] >= blocks[0] && blocks[3] >= blocks[2]);
        assert!(blocks[1] > blocks[0]);
    }

    #[test]
    fn async_single_user_is_plain_sgd() {
        let task = make_toy_task(1, &[5], 3, 4).unwrap();
        let setup = TrainingSetup {
            config: RoundConfig { num_subchannels: 1, ..toy_setup(0).config },
            num_rounds: 2,
            ..toy_setup(0)
        };
        let trace = run_async_oma(&task, &setup, &ToyChannel::default()).unwrap();
        let mut w = alloc::vec![0.0; 3];
        for t in 0..2 {
            let order = &batch_orders(&task, setup.seed, t)[0];
            w = local_train(&w, 0, trace.minibatches[t][0], &task, order).unwrap();
            assert_relative_eq!(trace.losses[t], task.global_loss(&w), max_relative = 1e-12);
        }
    }
}
