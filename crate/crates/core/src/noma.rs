//! Joint power and bandwidth allocation for MC-NOMA with flexible
//! aggregation.
//!
//! Maximizing the WGPTM of a round is the same as minimizing the
//! speed-weighted upload time `sum_k beta_k * T_u,k`, which separates over
//! subchannels. Within a subchannel the strongest user always transmits at
//! `P_max`, and after the log-domain substitution
//!
//! ```text
//! A_i = log2(sum_{j<=i} g_j p_j + B_n),   A_0 = log2(B_n)
//! ```
//!
//! the weak users' part of the cost, `sum_i beta_i / (A_i - A_{i-1})`, is
//! bounded below by `(sum_i sqrt(beta_i))^2 / (A_{K-1} - A_0)` (Cauchy), with
//! equality when the increments are proportional to `sqrt(beta_i)`. That
//! leaves two variables per subchannel, `A_{K-1}` and `B_n`, over which the
//! cost `Z_n` is jointly convex:
//!
//! ```text
//! Z_n = S beta_K / (B_n (A_K - A_{K-1})) + S (sum_{i<K} sqrt(beta_i))^2 / (B_n (A_{K-1} - A_0))
//! A_K = log2(g_K P_max + 2^{A_{K-1}})
//! ```
//!
//! [`solve_reduced`] minimizes `sum_n Z_n` (inner golden-section search over
//! `A_{K-1}`, outer dual bisection over the bandwidth budget), and the
//! per-user powers are then recovered in closed form.
//!
//! All `A` values here are in the noise-normalized domain (`N_0` divided
//! out), so `A_0 = log2(B_n)` exactly.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::kernel::{self, LINE_SEARCH_TOL};
use crate::math;
use crate::metric::RoundMetrics;
use crate::model::{self, Assignment, RoundConfig, UserProfile};

/// Margin keeping `A_{K-1} - A_0` away from zero.
pub const BRACKET_MARGIN: f64 = 1e-9;
/// Smallest bandwidth a subchannel may receive, as a fraction of `B / N`.
pub const MIN_BANDWIDTH_FRACTION: f64 = 1e-3;

/// Allocation scheme tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Scheme {
    /// Optimal powers and bandwidths (flexible aggregation).
    Joint,
    /// Optimal powers over equal bandwidths.
    PowerOnly,
    /// Everyone at `P_max` over equal bandwidths.
    FullPower,
    /// TDMA within equal-bandwidth subchannels, best slot order.
    Oma,
    SyncJoint,
    SyncPowerOnly,
    SyncFullPower,
    SyncOma,
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Joint,
        Scheme::PowerOnly,
        Scheme::FullPower,
        Scheme::Oma,
        Scheme::SyncJoint,
        Scheme::SyncPowerOnly,
        Scheme::SyncFullPower,
        Scheme::SyncOma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Joint => "joint",
            Scheme::PowerOnly => "power-only",
            Scheme::FullPower => "full-power",
            Scheme::Oma => "oma",
            Scheme::SyncJoint => "sync-joint",
            Scheme::SyncPowerOnly => "sync-power-only",
            Scheme::SyncFullPower => "sync-full-power",
            Scheme::SyncOma => "sync-oma",
        }
    }

    pub fn is_sync(self) -> bool {
        matches!(self, Scheme::SyncJoint | Scheme::SyncPowerOnly | Scheme::SyncFullPower | Scheme::SyncOma)
    }

    /// The flexible-aggregation scheme a synchronous one is compared with.
    pub fn flexible(self) -> Scheme {
        match self {
            Scheme::SyncJoint => Scheme::Joint,
            Scheme::SyncPowerOnly => Scheme::PowerOnly,
            Scheme::SyncFullPower => Scheme::FullPower,
            Scheme::SyncOma => Scheme::Oma,
            other => other,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or(Error::InvalidArgument("unknown scheme"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SolverStatus {
    Optimal,
    /// A recovered power exceeded `P_max` and was clipped.
    Clipped,
    /// At least one user cannot finish uploading within the round.
    Infeasible,
}

/// Log-domain variables of one subchannel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubstitutedVars {
    /// `A_0 ..= A_K`; `a[0] = log2(B_n)`.
    pub a: Vec<f64>,
    /// Common ratio `(A_i - A_{i-1}) / sqrt(beta_i)` of the weak users, if
    /// there are any.
    pub q: Option<f64>,
}

impl SubstitutedVars {
    /// Evaluates `A_i = log2(sum_{j<=i} g_j p_j + B_n)` for given powers.
    pub fn from_powers(gains: &[f64], powers: &[f64], bandwidth_hz: f64) -> Self {
        let mut a = Vec::with_capacity(gains.len() + 1);
        let mut received = bandwidth_hz;
        a.push(math::log2(received));
        for (g, p) in gains.iter().zip(powers) {
            received += g * p;
            a.push(math::log2(received));
        }
        Self { a, q: None }
    }

    /// `(A_i - A_{i-1}) / sqrt(beta_i)` for the weak users `i < K`.
    pub fn weak_ratios(&self, betas: &[f64]) -> Vec<f64> {
        let weak = betas.len().saturating_sub(1);
        (1..=weak).map(|i| (self.a[i] - self.a[i - 1]) / math::sqrt(betas[i - 1])).collect()
    }
}

/// Result of any allocator in this crate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AllocationResult {
    pub scheme: Scheme,
    pub assignment: Assignment,
    pub bandwidths_hz: Vec<f64>,
    /// Per subchannel, in the assignment's ascending-gain order.
    pub powers_w: Vec<Vec<f64>>,
    pub metrics: RoundMetrics,
    /// The round's WGPTM.
    pub objective: f64,
    pub status: SolverStatus,
    /// TDMA schemes only: per subchannel, user positions in slot order.
    pub slot_orders: Vec<Vec<usize>>,
    /// Set when a slot order came from a ratio rule instead of enumeration.
    pub heuristic_order: bool,
}

impl AllocationResult {
    /// Evaluates the upload delays and metrics implied by NOMA powers and
    /// bandwidths.
    pub fn from_noma_allocation(
        scheme: Scheme,
        assignment: &Assignment,
        users: &[UserProfile],
        config: &RoundConfig,
        bandwidths_hz: Vec<f64>,
        powers_w: Vec<Vec<f64>>,
        clipped: bool,
    ) -> Result<Self> {
        let mut uplink = alloc::vec![0.0; users.len()];
        for ((list, &b), powers) in assignment.subchannels.iter().zip(&bandwidths_hz).zip(&powers_w) {
            let gains: Vec<f64> = list.iter().map(|&k| users[k].normalized_gain).collect();
            let delays = model::subchannel_uplink_delays(config.payload_bits, &gains, powers, b);
            for (&k, d) in list.iter().zip(delays) {
                uplink[k] = d;
            }
        }
        let metrics = RoundMetrics::from_uplink(config, users, &uplink)?;
        Ok(Self::from_metrics(scheme, assignment, bandwidths_hz, powers_w, metrics, clipped))
    }

    pub(crate) fn from_metrics(
        scheme: Scheme,
        assignment: &Assignment,
        bandwidths_hz: Vec<f64>,
        powers_w: Vec<Vec<f64>>,
        metrics: RoundMetrics,
        clipped: bool,
    ) -> Self {
        let status = if metrics.infeasible_users() > 0 {
            SolverStatus::Infeasible
        } else if clipped {
            SolverStatus::Clipped
        } else {
            SolverStatus::Optimal
        };
        Self {
            scheme,
            assignment: assignment.clone(),
            bandwidths_hz,
            powers_w,
            objective: metrics.wgptm,
            metrics,
            status,
            slot_orders: Vec::new(),
            heuristic_order: false,
        }
    }

    /// Log-domain variables of subchannel `n`, evaluated from the powers.
    pub fn substituted(&self, users: &[UserProfile], n: usize) -> SubstitutedVars {
        let gains: Vec<f64> = self.assignment.subchannels[n].iter().map(|&k| users[k].normalized_gain).collect();
        SubstitutedVars::from_powers(&gains, &self.powers_w[n], self.bandwidths_hz[n])
    }
}

/// Power of user `i` given its cumulative log-domain variables,
/// `(2^{a_i} - 2^{a_prev}) / g_i`.
pub fn power_from_a(gain: f64, a_i: f64, a_prev: f64) -> Result<f64> {
    if !(gain > 0.0) {
        return Err(Error::InvalidArgument("gain must be positive"));
    }
    if a_i < a_prev {
        return Err(Error::InvalidArgument("log-domain variables must be non-decreasing"));
    }
    Ok(math::exp2(a_prev) * libm::expm1((a_i - a_prev) * core::f64::consts::LN_2) / gain)
}

/// `A_K` of the strongest user transmitting at `max_power_w`.
pub fn a_last(gain_strongest: f64, max_power_w: f64, a_prev: f64) -> f64 {
    a_prev + math::log2_1p(gain_strongest * max_power_w / math::exp2(a_prev))
}

/// Per-subchannel constants of the reduced cost `Z_n`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ReducedCost {
    payload: f64,
    strongest_gain_power: f64,
    strongest_beta: f64,
    /// `sum_{i<K} g_i P_max`.
    weak_gain_power: f64,
    /// `(sum_{i<K} sqrt(beta_i))^2`.
    weak_beta_root_sq: f64,
    has_weak: bool,
}

impl ReducedCost {
    pub(crate) fn new(gains: &[f64], betas: &[f64], config: &RoundConfig) -> Result<Self> {
        let k = gains.len();
        if k == 0 || betas.len() != k {
            return Err(Error::InvalidArgument("subchannel needs matching non-empty gains and betas"));
        }
        let root_sum: f64 = betas[..k - 1].iter().map(|&b| math::sqrt(b)).sum();
        Ok(Self {
            payload: config.payload_bits,
            strongest_gain_power: gains[k - 1] * config.max_power_w,
            strongest_beta: betas[k - 1],
            weak_gain_power: gains[..k - 1].iter().sum::<f64>() * config.max_power_w,
            weak_beta_root_sq: root_sum * root_sum,
            has_weak: k > 1,
        })
    }

    /// Upper end of the bracket for `u = A_{K-1} - A_0`.
    pub(crate) fn u_max(&self, bandwidth_hz: f64) -> f64 {
        math::log2_1p(self.weak_gain_power / bandwidth_hz)
    }

    /// `Z_n` as a function of `u = A_{K-1} - log2(B_n)` and `B_n`.
    pub(crate) fn at(&self, u: f64, bandwidth_hz: f64) -> f64 {
        let strong_increment = math::log2_1p(self.strongest_gain_power / (bandwidth_hz * math::exp2(u)));
        let w1 = self.payload * self.strongest_beta / (bandwidth_hz * strong_increment);
        if self.has_weak {
            w1 + self.payload * self.weak_beta_root_sq / (bandwidth_hz * u)
        } else {
            w1
        }
    }

    /// Best `u` for a fixed bandwidth. `None` when the bracket is empty.
    pub(crate) fn best_u(&self, bandwidth_hz: f64) -> Result<Option<(f64, f64)>> {
        if !self.has_weak {
            return Ok(Some((0.0, self.at(0.0, bandwidth_hz))));
        }
        let hi = self.u_max(bandwidth_hz);
        if !(hi > BRACKET_MARGIN) {
            return Ok(None);
        }
        kernel::minimize_1d(|u| self.at(u, bandwidth_hz), BRACKET_MARGIN, hi, LINE_SEARCH_TOL).map(Some)
    }

    /// Reduced cost after optimizing the log-domain variable; infinite when
    /// the subchannel cannot be served at this bandwidth.
    pub(crate) fn cost(&self, bandwidth_hz: f64) -> f64 {
        match self.best_u(bandwidth_hz) {
            Ok(Some((_, z))) => z,
            _ => f64::INFINITY,
        }
    }
}

fn subchannel_vectors(list: &[usize], users: &[UserProfile]) -> (Vec<f64>, Vec<f64>) {
    let gains = list.iter().map(|&k| users[k].normalized_gain).collect();
    let betas = list.iter().map(|&k| users[k].flops_per_second).collect();
    (gains, betas)
}

/// Reduced cost `Z_n(A_{K-1}, B_n)` of a subchannel whose users (ascending
/// gain) have normalized `gains` and speeds `betas`, in s*FLOPS.
///
/// With a single user there is no weak-user variable; `a_weak` is ignored
/// and `Z_n = S beta_1 / (B_n log2(1 + g_1 P_max / B_n))`.
pub fn zn_objective(
    a_weak: f64,
    bandwidth_hz: f64,
    gains: &[f64],
    betas: &[f64],
    config: &RoundConfig,
) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive"));
    }
    let cost = ReducedCost::new(gains, betas, config)?;
    if !cost.has_weak {
        return Ok(cost.at(0.0, bandwidth_hz));
    }
    let u = a_weak - math::log2(bandwidth_hz);
    if !(u > 0.0 && u <= cost.u_max(bandwidth_hz) * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument("log-domain variable outside its feasible bracket"));
    }
    Ok(cost.at(u, bandwidth_hz))
}

/// Both sides of the Cauchy bound on the weak users' cost:
/// `sum beta_i / (A_i - A_{i-1}) >= (sum sqrt(beta_i))^2 / (A_last - A_0)`.
pub fn cauchy_bound_check(betas: &[f64], a_values: &[f64]) -> Result<(f64, f64)> {
    if a_values.len() != betas.len() + 1 {
        return Err(Error::LengthMismatch { expected: betas.len() + 1, got: a_values.len() });
    }
    if a_values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("log-domain variables must be strictly increasing"));
    }
    let lhs = betas.iter().zip(a_values.windows(2)).map(|(b, w)| b / (w[1] - w[0])).sum();
    let root_sum: f64 = betas.iter().map(|&b| math::sqrt(b)).sum();
    let rhs = root_sum * root_sum / (a_values[a_values.len() - 1] - a_values[0]);
    Ok((lhs, rhs))
}

/// Optimum of the reduced problem for one subchannel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedOptimum {
    /// `A*_{K-1}`; equals `log2(B_n*)` for a single-user subchannel.
    pub a_star: f64,
    pub b_star: f64,
    /// `Z_n` at the optimum.
    pub cost: f64,
    /// False when the bracket for `A_{K-1}` was empty.
    pub feasible: bool,
}

fn reduced_at_bandwidth(cost: &ReducedCost, b: f64) -> Result<ReducedOptimum> {
    Ok(match cost.best_u(b)? {
        Some((u, z)) => ReducedOptimum { a_star: math::log2(b) + u, b_star: b, cost: z, feasible: true },
        None => ReducedOptimum { a_star: math::log2(b), b_star: b, cost: f64::INFINITY, feasible: false },
    })
}

/// Minimizes `sum_n Z_n` over `(A_{K-1}(n), B_n)` for every subchannel,
/// subject to `sum_n B_n <= B`.
pub fn solve_reduced(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<Vec<ReducedOptimum>> {
    let costs = reduced_costs(assignment, users, config)?;
    let n = costs.len();
    let floor = MIN_BANDWIDTH_FRACTION * config.total_bandwidth_hz / n as f64;
    let closures: Vec<_> = costs.iter().map(|c| move |b: f64| c.cost(b)).collect();
    let refs: Vec<&dyn Fn(f64) -> f64> = closures.iter().map(|c| c as &dyn Fn(f64) -> f64).collect();
    let lower = alloc::vec![floor; n];
    let split = kernel::allocate_budget(&refs, config.total_bandwidth_hz, &lower, kernel::BUDGET_TOL)?;
    if !split.converged {
        return Err(Error::NoConvergence("bandwidth split"));
    }
    costs.iter().zip(&split.amounts).map(|(c, &b)| reduced_at_bandwidth(c, b)).collect()
}

/// Same as [`solve_reduced`] with every subchannel fixed at `B / N`.
pub fn solve_reduced_equal_bandwidth(
    assignment: &Assignment,
    users: &[UserProfile],
    config: &RoundConfig,
) -> Result<Vec<ReducedOptimum>> {
    let b = config.total_bandwidth_hz / assignment.num_subchannels() as f64;
    reduced_costs(assignment, users, config)?.iter().map(|c| reduced_at_bandwidth(c, b)).collect()
}

fn reduced_costs(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<Vec<ReducedCost>> {
    config.validate()?;
    assignment.validate(users)?;
    assignment
        .subchannels
        .iter()
        .map(|list| {
            let (gains, betas) = subchannel_vectors(list, users);
            ReducedCost::new(&gains, &betas, config)
        })
        .collect()
}

/// Common ratio of the weak users' log-domain increments at the optimum,
/// `(A*_{K-1} - log2(B*)) / sum sqrt(beta_i)`. `None` without weak users.
pub fn recover_qn(a_star: f64, b_star: f64, betas_weak: &[f64]) -> Option<f64> {
    if betas_weak.is_empty() {
        return None;
    }
    let root_sum: f64 = betas_weak.iter().map(|&b| math::sqrt(b)).sum();
    Some((a_star - math::log2(b_star)) / root_sum)
}

/// `A*_i = q * sum_{j<=i} sqrt(beta_j) + A_0` for every weak user.
pub fn recover_a_all(q_star: f64, a0: f64, betas_weak: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    betas_weak
        .iter()
        .map(|&b| {
            acc += math::sqrt(b);
            acc * q_star + a0
        })
        .collect()
}

/// Transmit powers from `A_0 ..= A_{K-1}` (so `a_with_a0.len() == gains.len()`):
/// weak users get `min((2^{A_i} - 2^{A_{i-1}}) / g_i, P_max)`, the strongest
/// user gets `P_max`. The flag reports whether any clipping happened.
pub fn recover_powers(a_with_a0: &[f64], gains: &[f64], max_power_w: f64) -> Result<(Vec<f64>, bool)> {
    if a_with_a0.len() != gains.len() {
        return Err(Error::LengthMismatch { expected: gains.len(), got: a_with_a0.len() });
    }
    let mut clipped = false;
    let mut powers = Vec::with_capacity(gains.len());
    for i in 1..gains.len() {
        let p = power_from_a(gains[i - 1], a_with_a0[i], a_with_a0[i - 1])?;
        if p > max_power_w {
            clipped = true;
            powers.push(max_power_w);
        } else {
            powers.push(p);
        }
    }
    powers.push(max_power_w);
    Ok((powers, clipped))
}

/// Powers of one subchannel from its reduced optimum.
pub(crate) fn powers_from_optimum(opt: &ReducedOptimum, gains: &[f64], betas: &[f64], max_power_w: f64) -> Result<(Vec<f64>, bool)> {
    let weak = &betas[..betas.len() - 1];
    let a0 = math::log2(opt.b_star);
    let mut a = alloc::vec![a0];
    if let Some(q) = recover_qn(opt.a_star, opt.b_star, weak) {
        a.extend(recover_a_all(q.max(0.0), a0, weak));
    }
    recover_powers(&a, gains, max_power_w)
}

fn allocation_from_optima(
    scheme: Scheme,
    optima: &[ReducedOptimum],
    assignment: &Assignment,
    users: &[UserProfile],
    config: &RoundConfig,
) -> Result<AllocationResult> {
    let mut powers_w = Vec::with_capacity(optima.len());
    let mut any_clipped = false;
    for (opt, list) in optima.iter().zip(&assignment.subchannels) {
        let (gains, betas) = subchannel_vectors(list, users);
        let (powers, clipped) = powers_from_optimum(opt, &gains, &betas, config.max_power_w)?;
        any_clipped |= clipped;
        powers_w.push(powers);
    }
    let bandwidths = optima.iter().map(|o| o.b_star).collect();
    AllocationResult::from_noma_allocation(scheme, assignment, users, config, bandwidths, powers_w, any_clipped)
}

/// Optimal joint power and bandwidth allocation: solves the reduced
/// problem, recovers every user's power, and evaluates the resulting delays
/// and WGPTM.
///
/// Clipping a recovered power can leave the result behind a simpler
/// feasible allocation; when clipping happens the power-only allocation is
/// returned instead if it scores higher.
pub fn allocate_joint(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    let optima = solve_reduced(assignment, users, config)?;
    let joint = allocation_from_optima(Scheme::Joint, &optima, assignment, users, config)?;
    if joint.status != SolverStatus::Clipped {
        return Ok(joint);
    }
    let fallback = allocate_power_only(assignment, users, config)?;
    Ok(better_of(joint, fallback))
}

/// `primary` unless `candidate` scores strictly higher, in which case the
/// candidate is relabeled with the primary's scheme and marked clipped.
fn better_of(primary: AllocationResult, candidate: AllocationResult) -> AllocationResult {
    if candidate.objective > primary.objective {
        let status = if candidate.status == SolverStatus::Infeasible { SolverStatus::Infeasible } else { SolverStatus::Clipped };
        AllocationResult { scheme: primary.scheme, status, ..candidate }
    } else {
        primary
    }
}

/// Optimal powers with every subchannel at `B / N`.
///
/// When clipping happens the full-power allocation is returned instead if it
/// scores higher.
pub fn allocate_power_only(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    let optima = solve_reduced_equal_bandwidth(assignment, users, config)?;
    let power_only = allocation_from_optima(Scheme::PowerOnly, &optima, assignment, users, config)?;
    if power_only.status != SolverStatus::Clipped {
        return Ok(power_only);
    }
    let fallback = crate::baselines::allocate_full_power(assignment, users, config)?;
    Ok(better_of(power_only, fallback))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn profile(k: u32, gain: f64, beta: f64, weight: f64) -> UserProfile {
        UserProfile { user_id: k, minibatch_count: 20, weight, flops_per_second: beta, normalized_gain: gain }
    }

    #[test]
    fn power_from_a_examples() {
        assert_relative_eq!(power_from_a(2.0, 3.0, 1.0).unwrap(), 3.0, max_relative = 1e-14);
        assert_eq!(power_from_a(2.0, 1.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(power_from_a(1.0, 1.0, 0.0).unwrap(), 1.0, max_relative = 1e-14);
        assert!(power_from_a(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn a_last_examples() {
        assert_relative_eq!(a_last(4.0, 2.0, 3.0), 4.0, max_relative = 1e-14);
        assert_eq!(a_last(4.0, 0.0, 3.0), 3.0);
        assert_relative_eq!(a_last(1.0, 1.0, 0.0), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn zn_single_user() {
        let config = RoundConfig { payload_bits: 10.0, max_power_w: 3.0, ..RoundConfig::default() };
        let z = zn_objective(0.0, 1.0, &[1.0], &[2.0], &config).unwrap();
        assert_relative_eq!(z, 10.0, max_relative = 1e-14);
    }

    #[test]
    fn zn_matches_weighted_delay_at_cauchy_split() {
        // Equal betas: the Cauchy split gives equal increments, and Z_n then
        // equals the actual speed-weighted upload time of the subchannel.
        let config = RoundConfig { payload_bits: 10.0, max_power_w: 50.0, ..RoundConfig::default() };
        let gains = [1.0, 2.0, 5.0];
        let betas = [4.0, 4.0, 3.0];
        let b = 2.0;
        let a0 = math::log2(b);
        let a_weak = a0 + 2.0;
        let a = [a0, a0 + 1.0, a0 + 2.0];
        let (powers, clipped) = recover_powers(&a, &gains, config.max_power_w).unwrap();
        assert!(!clipped);
        let delays = model::subchannel_uplink_delays(config.payload_bits, &gains, &powers, b);
        let weighted: f64 = delays.iter().zip(&betas).map(|(t, beta)| t * beta).sum();
        let z = zn_objective(a_weak, b, &gains, &betas, &config).unwrap();
        assert_relative_eq!(z, weighted, max_relative = 1e-12);
    }

    #[test]
    fn zn_rejects_out_of_bracket() {
        let config = RoundConfig { payload_bits: 10.0, max_power_w: 1.0, ..RoundConfig::default() };
        assert!(zn_objective(0.0, 1.0, &[1.0, 2.0], &[1.0, 1.0], &config).is_err());
        assert!(zn_objective(5.0, 1.0, &[1.0, 2.0], &[1.0, 1.0], &config).is_err());
        assert!(zn_objective(0.5, 1.0, &[1.0, 2.0], &[1.0, 1.0], &config).is_ok());
    }

    #[test]
    fn cauchy_examples() {
        let (l, r) = cauchy_bound_check(&[4.0, 4.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(l, 8.0);
        assert_relative_eq!(r, 8.0);
        let (l, r) = cauchy_bound_check(&[4.0, 4.0], &[0.0, 0.5, 2.0]).unwrap();
        assert_relative_eq!(l, 8.0 + 4.0 / 1.5, max_relative = 1e-14);
        assert_relative_eq!(r, 8.0);
        let (l, r) = cauchy_bound_check(&[1.0], &[0.0, 2.0]).unwrap();
        assert_eq!((l, r), (0.5, 0.5));
        assert!(cauchy_bound_check(&[1.0, 1.0], &[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn recovery_examples() {
        assert_relative_eq!(recover_qn(5.0, 2.0, &[4.0, 4.0]).unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(recover_qn(1.0, 2.0, &[4.0, 4.0]).unwrap(), 0.0);
        assert_relative_eq!(recover_qn(3.0, 2.0, &[1.0]).unwrap(), 2.0);
        assert_eq!(recover_qn(3.0, 2.0, &[]), None);

        assert_eq!(recover_a_all(1.0, 1.0, &[4.0, 4.0]), vec![3.0, 5.0]);
        assert_eq!(recover_a_all(0.0, 1.5, &[4.0, 9.0]), vec![1.5, 1.5]);
        assert_eq!(recover_a_all(2.0, 0.0, &[9.0]), vec![6.0]);

        let (p, clipped) = recover_powers(&[1.0, 3.0, 5.0], &[1.0, 2.0, 7.0], 100.0).unwrap();
        assert!(!clipped);
        assert_relative_eq!(p[0], 6.0, max_relative = 1e-14);
        assert_relative_eq!(p[1], 12.0, max_relative = 1e-14);
        assert_eq!(p[2], 100.0);
        let (p, _) = recover_powers(&[1.0, 1.0, 1.0], &[1.0, 2.0, 7.0], 100.0).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 100.0]);
        let (p, clipped) = recover_powers(&[1.0, 3.0, 5.0], &[1.0, 2.0, 7.0], 1e-3).unwrap();
        assert!(clipped);
        assert_eq!(p, vec![1e-3; 3]);
    }

    fn two_user_pair(weight: f64, offset: u32) -> [UserProfile; 2] {
        [profile(offset, 3e6, 7e9, weight), profile(offset + 1, 2e7, 8e9, weight)]
    }

    #[test]
    fn single_subchannel_single_user_takes_everything() {
        let users = [profile(0, 5e6, 7e9, 1.0)];
        let config = RoundConfig { num_subchannels: 1, ..RoundConfig::default() };
        let a = clustering::cluster_sorted(&users, 1).unwrap();
        let opt = solve_reduced(&a, &users, &config).unwrap();
        assert_eq!(opt[0].b_star, config.total_bandwidth_hz);
        let r = allocate_joint(&a, &users, &config).unwrap();
        assert_eq!(r.powers_w, vec![vec![config.max_power_w]]);
    }

    #[test]
    fn symmetric_subchannels_split_evenly() {
        let [a0, a1] = two_user_pair(0.25, 0);
        let [b0, b1] = two_user_pair(0.25, 2);
        let users = [a0, a1, b0, b1];
        let assignment = Assignment { subchannels: vec![vec![0, 1], vec![2, 3]] };
        let config = RoundConfig { num_subchannels: 2, ..RoundConfig::default() };
        let opt = solve_reduced(&assignment, &users, &config).unwrap();
        assert_relative_eq!(opt[0].b_star, 15e6, max_relative = 1e-5);
        assert_relative_eq!(opt[1].b_star, 15e6, max_relative = 1e-5);
        let joint = allocate_joint(&assignment, &users, &config).unwrap();
        let equal = allocate_power_only(&assignment, &users, &config).unwrap();
        assert_relative_eq!(joint.objective, equal.objective, max_relative = 1e-6);
    }

    #[test]
    fn power_only_equals_joint_with_one_subchannel() {
        let users = [profile(0, 2e6, 6.5e9, 0.3), profile(1, 6e6, 8e9, 0.3), profile(2, 2e7, 7e9, 0.4)];
        let config = RoundConfig { num_subchannels: 1, ..RoundConfig::default() };
        let a = clustering::cluster_sorted(&users, 1).unwrap();
        let joint = allocate_joint(&a, &users, &config).unwrap();
        let po = allocate_power_only(&a, &users, &config).unwrap();
        assert_eq!(joint.objective, po.objective);
        assert_eq!(joint.powers_w, po.powers_w);
    }

    #[test]
    fn unbalanced_subchannels_gain_from_bandwidth() {
        let users = [
            profile(0, 2e6, 7e9, 0.2),
            profile(1, 4e6, 7e9, 0.2),
            profile(2, 9e6, 7e9, 0.2),
            profile(3, 1.5e7, 7e9, 0.2),
            profile(4, 3e7, 7e9, 0.2),
        ];
        let assignment = Assignment { subchannels: vec![vec![0, 1, 2, 3], vec![4]] };
        let config = RoundConfig { num_subchannels: 2, ..RoundConfig::default() };
        let joint = allocate_joint(&assignment, &users, &config).unwrap();
        let po = allocate_power_only(&assignment, &users, &config).unwrap();
        assert!(joint.objective > po.objective);
        assert!(joint.bandwidths_hz[0] > joint.bandwidths_hz[1]);
        assert_relative_eq!(joint.bandwidths_hz.iter().sum::<f64>(), config.total_bandwidth_hz, max_relative = 1e-9);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("fastest".parse::<Scheme>().is_err());
        assert_eq!(Scheme::SyncOma.flexible(), Scheme::Oma);
    }
}
