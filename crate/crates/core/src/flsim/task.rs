//! Synthetic ridge-regression task with i.i.d. mini-batches.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::linalg;
use crate::error::{Error, Result};

/// Knobs of [`make_toy_task_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ToyParams {
    pub dimension: usize,
    /// Rows per mini-batch (`M`).
    pub minibatch_size: usize,
    /// Ridge coefficient.
    pub regularization: f64,
    /// Standard deviation of the label noise.
    pub label_noise: f64,
    /// Standard deviation of the true model's coordinates.
    pub model_scale: f64,
    /// Largest per-step rate as a fraction of `1 / L`.
    pub step_fraction: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            dimension: 10,
            minibatch_size: 20,
            regularization: 0.1,
            label_noise: 0.5,
            model_scale: 3.0,
            step_fraction: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    /// Row-major `rows x dimension`.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

/// One user's data and its loss as an explicit quadratic
/// `F_k(w) = w' H w / 2 - b' w + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyUser {
    pub minibatches: Vec<MiniBatch>,
    hessian: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub dimension: usize,
    pub minibatch_size: usize,
    pub regularization: f64,
    pub users: Vec<ToyUser>,
    /// Aggregation weights `|M_k| / sum |M|`.
    pub weights: Vec<f64>,
    /// Smallest eigenvalue of any user's Hessian (`m`).
    pub strong_convexity: f64,
    /// Largest eigenvalue of any mini-batch Hessian (`L`).
    pub smoothness: f64,
    /// Bound on every mini-batch gradient norm inside the ball of radius
    /// [`ToyTask::gradient_radius`] (`G`).
    pub gradient_bound: f64,
    pub gradient_radius: f64,
    /// Global learning rate `eta`; user `k` steps with `eta / |M_k|`.
    pub learning_rate: f64,
}

/// Task with default parameters except the dimension.
pub fn make_toy_task(num_users: usize, minibatch_counts: &[u32], dimension: usize, seed: u64) -> Result<ToyTask> {
    if minibatch_counts.len() != num_users {
        return Err(Error::LengthMismatch { expected: num_users, got: minibatch_counts.len() });
    }
    make_toy_task_with(minibatch_counts, &ToyParams { dimension, ..ToyParams::default() }, seed)
}

pub fn make_toy_task_with(minibatch_counts: &[u32], params: &ToyParams, seed: u64) -> Result<ToyTask> {
    let d = params.dimension;
    if d == 0 || params.minibatch_size == 0 {
        return Err(Error::InvalidArgument("dimension and mini-batch size must be at least 1"));
    }
    if minibatch_counts.is_empty() || minibatch_counts.contains(&0) {
        return Err(Error::InvalidArgument("every user needs at least one mini-batch"));
    }
    if !(params.regularization > 0.0 && params.step_fraction > 0.0 && params.step_fraction <= 1.0) {
        return Err(Error::InvalidArgument("regularization must be positive and step_fraction in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..d).map(|_| params.model_scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let rows = params.minibatch_size;
    let m = rows as f64;

    let mut users = Vec::with_capacity(minibatch_counts.len());
    let mut smoothness: f64 = 0.0;
    let mut target_norm: f64 = 0.0;
    for &count in minibatch_counts {
        let mut minibatches = Vec::with_capacity(count as usize);
        let mut hessian = alloc::vec![0.0; d * d];
        let mut linear = alloc::vec![0.0; d];
        let mut constant = 0.0;
        for _ in 0..count {
            let features: Vec<f64> = (0..rows * d).map(|_| rng.sample(StandardNormal)).collect();
            let labels: Vec<f64> = features
                .chunks(d)
                .map(|x| linalg::dot(x, &truth) + params.label_noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut batch_hessian = alloc::vec![0.0; d * d];
            let mut batch_linear = alloc::vec![0.0; d];
            for (x, &y) in features.chunks(d).zip(&labels) {
                for i in 0..d {
                    batch_linear[i] += x[i] * y / m;
                    for j in 0..d {
                        batch_hessian[i * d + j] += x[i] * x[j] / m;
                    }
                }
                constant += 0.5 * y * y / m;
            }
            for i in 0..d {
                batch_hessian[i * d + i] += params.regularization;
            }
            smoothness = smoothness.max(*linalg::symmetric_eigenvalues(&batch_hessian, d).last().unwrap_or(&0.0));
            target_norm = target_norm.max(linalg::norm(&batch_linear));
            for (h, bh) in hessian.iter_mut().zip(&batch_hessian) {
                *h += bh;
            }
            for (l, bl) in linear.iter_mut().zip(&batch_linear) {
                *l += bl;
            }
            minibatches.push(MiniBatch { features, labels });
        }
        let scale = 1.0 / f64::from(count);
        hessian.iter_mut().for_each(|h| *h *= scale);
        linear.iter_mut().for_each(|l| *l *= scale);
        users.push(ToyUser { minibatches, hessian, linear, constant: constant * scale });
    }

    let strong_convexity = users
        .iter()
        .map(|u| linalg::symmetric_eigenvalues(&u.hessian, d)[0])
        .fold(f64::INFINITY, f64::min);
    let mut radius: f64 = 0.0;
    for u in &users {
        radius = radius.max(linalg::norm(&linalg::solve_spd(&u.hessian, &u.linear)?));
    }
    let gradient_radius = 2.0 * radius + 1.0;
    let total: u32 = minibatch_counts.iter().sum();
    let min_count = f64::from(*minibatch_counts.iter().min().unwrap_or(&1));
    Ok(ToyTask {
        dimension: d,
        minibatch_size: rows,
        regularization: params.regularization,
        users,
        weights: minibatch_counts.iter().map(|&c| f64::from(c) / f64::from(total)).collect(),
        strong_convexity,
        smoothness,
        gradient_bound: smoothness * gradient_radius + target_norm,
        gradient_radius,
        learning_rate: params.step_fraction * min_count / smoothness,
    })
}

impl ToyTask {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn minibatch_count(&self, user: usize) -> u32 {
        self.users[user].minibatches.len() as u32
    }

    /// `eta_k = eta / |M_k|`.
    pub fn user_rate(&self, user: usize) -> f64 {
        self.learning_rate / f64::from(self.minibatch_count(user))
    }

    /// Per-step contraction `c_k = 2 m eta_k - m L eta_k^2`.
    pub fn contraction(&self, user: usize) -> f64 {
        let eta = self.user_rate(user);
        2.0 * self.strong_convexity * eta - self.strong_convexity * self.smoothness * eta * eta
    }

    pub fn user_loss(&self, user: usize, w: &[f64]) -> f64 {
        let u = &self.users[user];
        let mut hw = alloc::vec![0.0; self.dimension];
        linalg::mat_vec(&u.hessian, w, &mut hw);
        0.5 * linalg::dot(w, &hw) - linalg::dot(&u.linear, w) + u.constant
    }

    pub fn user_gradient(&self, user: usize, w: &[f64]) -> Vec<f64> {
        let u = &self.users[user];
        let mut g = alloc::vec![0.0; self.dimension];
        linalg::mat_vec(&u.hessian, w, &mut g);
        g.iter_mut().zip(&u.linear).for_each(|(g, b)| *g -= b);
        g
    }

    pub fn minibatch_loss(&self, user: usize, batch: usize, w: &[f64]) -> f64 {
        let b = &self.users[user].minibatches[batch];
        let m = self.minibatch_size as f64;
        let residual: f64 = b
            .features
            .chunks(self.dimension)
            .zip(&b.labels)
            .map(|(x, y)| {
                let r = linalg::dot(x, w) - y;
                r * r
            })
            .sum();
        0.5 * residual / m + 0.5 * self.regularization * linalg::dot(w, w)
    }

    pub fn minibatch_gradient(&self, user: usize, batch: usize, w: &[f64]) -> Vec<f64> {
        let b = &self.users[user].minibatches[batch];
        let m = self.minibatch_size as f64;
        let mut g: Vec<f64> = w.iter().map(|wi| self.regularization * wi).collect();
        for (x, y) in b.features.chunks(self.dimension).zip(&b.labels) {
            let r = (linalg::dot(x, w) - y) / m;
            g.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
        }
        g
    }

    /// `F(w) = sum_k e_k F_k(w)`.
    pub fn global_loss(&self, w: &[f64]) -> f64 {
        self.weights.iter().enumerate().map(|(k, e)| e * self.user_loss(k, w)).sum()
    }

    pub fn user_optimum(&self, user: usize) -> Result<Vec<f64>> {
        let u = &self.users[user];
        linalg::solve_spd(&u.hessian, &u.linear)
    }

    pub fn global_optimum(&self) -> Result<Vec<f64>> {
        let d = self.dimension;
        let mut h = alloc::vec![0.0; d * d];
        let mut b = alloc::vec![0.0; d];
        for (u, e) in self.users.iter().zip(&self.weights) {
            h.iter_mut().zip(&u.hessian).for_each(|(h, x)| *h += e * x);
            b.iter_mut().zip(&u.linear).for_each(|(b, x)| *b += e * x);
        }
        linalg::solve_spd(&h, &b)
    }
}
