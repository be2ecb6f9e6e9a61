//! Rank correlation between per-round WGPTM and loss decrease.

use alloc::vec::Vec;

use super::train::TrainingTrace;
use crate::error::{Error, Result};
use crate::math;

/// Fraction of rounds, from the start, used by [`early_round_correlation`].
pub const EARLY_WINDOW: f64 = 0.3;
/// Fewest pairs [`early_round_correlation`] accepts.
pub const MIN_PAIRS: usize = 20;

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / math::sqrt(sxx * syy))
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two pairs"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pools `(WGPTM, loss decrease)` over the first [`EARLY_WINDOW`] of the
/// rounds of every trace and returns their Spearman correlation.
pub fn early_round_correlation(traces: &[TrainingTrace]) -> Result<f64> {
    let mut wgptm = Vec::new();
    let mut decrease = Vec::new();
    for trace in traces {
        let window = libm::ceil(EARLY_WINDOW * trace.losses.len() as f64) as usize;
        wgptm.extend_from_slice(&trace.wgptm[..window]);
        decrease.extend(trace.loss_decreases().into_iter().take(window));
    }
    if wgptm.len() < MIN_PAIRS {
        return Err(Error::InvalidArgument("too few (WGPTM, loss decrease) pairs"));
    }
    spearman(&wgptm, &decrease)
}
