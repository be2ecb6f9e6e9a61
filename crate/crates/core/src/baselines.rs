//! Comparison allocators: full power, TDMA-style MC-OMA, and the
//! synchronous-aggregation family.
//!
//! Synchronous schemes make every user train the smallest iteration count
//! among all users, so their WGPTM is the global minimum LPTM (weights sum
//! to one).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel;
use crate::math;
use crate::metric::RoundMetrics;
use crate::model::{Assignment, RoundConfig, UserProfile};
use crate::noma::{AllocationResult, Scheme, MIN_BANDWIDTH_FRACTION};

/// Largest subchannel whose TDMA slot order is found by enumeration.
pub const MAX_ENUMERATION_USERS: usize = 9;

/// How a TDMA slot order is searched for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum OrderSearch {
    /// Enumerate every permutation; subchannels above
    /// [`MAX_ENUMERATION_USERS`] are an error.
    #[default]
    Exhaustive,
    /// Enumerate small subchannels and use a ratio rule for large ones.
    WithFallback,
}

fn check_inputs(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<()> {
    config.validate()?;
    assignment.validate(users)
}

fn full_power_powers(assignment: &Assignment, config: &RoundConfig) -> Vec<Vec<f64>> {
    assignment.subchannels.iter().map(|list| alloc::vec![config.max_power_w; list.len()]).collect()
}

/// Every user transmits at `P_max` on an equal bandwidth share.
pub fn allocate_full_power(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    check_inputs(assignment, users, config)?;
    let n = assignment.num_subchannels();
    let bandwidths = alloc::vec![config.equal_bandwidth_hz(); n];
    let powers = full_power_powers(assignment, config);
    AllocationResult::from_noma_allocation(Scheme::FullPower, assignment, users, config, bandwidths, powers, false)
}

/// TDMA slot of one user: solo rate over `B / N` at full power.
pub fn oma_slot_duration(config: &RoundConfig, gain: f64, bandwidth_hz: f64) -> f64 {
    let rate = bandwidth_hz * math::log2_1p(gain * config.max_power_w / bandwidth_hz);
    if config.payload_bits == 0.0 {
        0.0
    } else if rate > 0.0 {
        config.payload_bits / rate
    } else {
        f64::INFINITY
    }
}

/// Time each slot position loses to uploading when slots are packed to end
/// at the deadline: its own slot plus every later one.
pub fn oma_time_lost(durations_in_order: &[f64]) -> Vec<f64> {
    let mut tail = 0.0;
    let mut lost: Vec<f64> = durations_in_order
        .iter()
        .rev()
        .map(|d| {
            tail += d;
            tail
        })
        .collect();
    lost.reverse();
    lost
}

/// Per-user pieces of a TDMA subchannel, in the subchannel's list order.
struct OmaChannel {
    durations: Vec<f64>,
    /// LPTM per second of training, `beta / (alpha |M|)`.
    rates: Vec<f64>,
    weights: Vec<f64>,
    usable: f64,
}

impl OmaChannel {
    fn new(list: &[usize], users: &[UserProfile], config: &RoundConfig) -> Self {
        let b = config.equal_bandwidth_hz();
        Self {
            durations: list.iter().map(|&k| oma_slot_duration(config, users[k].normalized_gain, b)).collect(),
            rates: list
                .iter()
                .map(|&k| users[k].flops_per_second / (config.flops_per_minibatch * f64::from(users[k].minibatch_count)))
                .collect(),
            weights: list.iter().map(|&k| users[k].weight).collect(),
            usable: config.usable_time_s(),
        }
    }

    fn lptm(&self, i: usize, lost: f64) -> f64 {
        if lost < self.usable {
            (self.usable - lost) * self.rates[i]
        } else {
            0.0
        }
    }

    /// `(min LPTM, weighted LPTM sum)` of an order of local indices.
    fn score(&self, order: &[usize]) -> (f64, f64) {
        let mut tail = 0.0;
        let mut min = f64::INFINITY;
        let mut sum = 0.0;
        for &i in order.iter().rev() {
            tail += self.durations[i];
            let phi = self.lptm(i, tail);
            min = min.min(phi);
            sum += self.weights[i] * phi;
        }
        (min, sum)
    }

    fn better(&self, candidate: (f64, f64), best: (f64, f64), max_min: bool) -> bool {
        if max_min {
            candidate.0 > best.0 || (candidate.0 == best.0 && candidate.1 > best.1)
        } else {
            candidate.1 > best.1
        }
    }

    fn enumerate(&self, max_min: bool) -> Vec<usize> {
        let k = self.durations.len();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = perm.clone();
        let mut best_score = self.score(&perm);
        // Heap's algorithm, iterative form.
        let mut c = alloc::vec![0usize; k];
        let mut i = 1;
        while i < k {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                let s = self.score(&perm);
                if self.better(s, best_score, max_min) {
                    best_score = s;
                    best.clone_from(&perm);
                }
                c[i] += 1;
                i = 1;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    /// Weighted-sum order by exchange argument: ascending
    /// `weight * rate / duration` from the first slot to the last.
    fn ratio_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.durations.len()).collect();
        let key = |i: usize| self.weights[i] * self.rates[i] / self.durations[i];
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
        order
    }

    /// Max-min order built from the first slot on: each slot goes to the
    /// remaining user who is least hurt by the time it would lose there.
    fn greedy_max_min_order(&self) -> Vec<usize> {
        let mut remaining: Vec<usize> = (0..self.durations.len()).collect();
        let mut order = Vec::with_capacity(remaining.len());
        let mut tail: f64 = self.durations.iter().sum();
        while !remaining.is_empty() {
            let (pos, _) = remaining
                .iter()
                .enumerate()
                .map(|(pos, &i)| (pos, self.lptm(i, tail)))
                .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            let i = remaining.remove(pos);
            tail -= self.durations[i];
            order.push(i);
        }
        order
    }
}

fn allocate_oma(
    scheme: Scheme,
    assignment: &Assignment,
    users: &[UserProfile],
    config: &RoundConfig,
    search: OrderSearch,
    max_min: bool,
) -> Result<AllocationResult> {
    check_inputs(assignment, users, config)?;
    let usable = config.usable_time_s();
    let mut uplink = alloc::vec![0.0; users.len()];
    let mut compute = alloc::vec![0.0; users.len()];
    let mut feasible = alloc::vec![true; users.len()];
    let mut slot_orders = Vec::with_capacity(assignment.num_subchannels());
    let mut heuristic = false;
    for list in &assignment.subchannels {
        let channel = OmaChannel::new(list, users, config);
        let order = if list.len() <= MAX_ENUMERATION_USERS {
            channel.enumerate(max_min)
        } else if search == OrderSearch::WithFallback {
            heuristic = true;
            if max_min {
                channel.greedy_max_min_order()
            } else {
                channel.ratio_order()
            }
        } else {
            return Err(Error::EnumerationTooLarge { users: list.len(), max: MAX_ENUMERATION_USERS });
        };
        let in_order: Vec<f64> = order.iter().map(|&i| channel.durations[i]).collect();
        for (&i, lost) in order.iter().zip(oma_time_lost(&in_order)) {
            let k = list[i];
            uplink[k] = channel.durations[i];
            compute[k] = if lost < usable { usable - lost } else { 0.0 };
            feasible[k] = lost <= usable;
        }
        slot_orders.push(order.iter().map(|&i| list[i]).collect());
    }
    let mut metrics = RoundMetrics::from_parts(config, users, uplink, compute, feasible)?;
    if scheme.is_sync() {
        metrics = metrics.synchronized(users, config);
    }
    let bandwidths = alloc::vec![config.equal_bandwidth_hz(); assignment.num_subchannels()];
    let mut result = AllocationResult::from_metrics(
        scheme,
        assignment,
        bandwidths,
        full_power_powers(assignment, config),
        metrics,
        false,
    );
    result.slot_orders = slot_orders;
    result.heuristic_order = heuristic;
    Ok(result)
}

/// MC-OMA with flexible aggregation: each subchannel is time-shared at full
/// power and the slot order maximizing the weighted LPTM sum is found by
/// enumeration.
pub fn allocate_oma_flexible(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    allocate_oma(Scheme::Oma, assignment, users, config, OrderSearch::Exhaustive, false)
}

/// [`allocate_oma_flexible`] with an explicit order search policy.
pub fn allocate_oma_flexible_with(
    assignment: &Assignment,
    users: &[UserProfile],
    config: &RoundConfig,
    search: OrderSearch,
) -> Result<AllocationResult> {
    allocate_oma(Scheme::Oma, assignment, users, config, search, false)
}

/// Synchronous MC-OMA: slot orders maximize the smallest LPTM of each
/// subchannel, ties broken by the weighted sum.
pub fn allocate_sync_oma(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    allocate_oma(Scheme::SyncOma, assignment, users, config, OrderSearch::Exhaustive, true)
}

pub fn allocate_sync_oma_with(
    assignment: &Assignment,
    users: &[UserProfile],
    config: &RoundConfig,
    search: OrderSearch,
) -> Result<AllocationResult> {
    allocate_oma(Scheme::SyncOma, assignment, users, config, search, true)
}

/// Min-max power allocation of one NOMA subchannel at a fixed bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncSubchannel {
    pub powers_w: Vec<f64>,
    /// Common value of `T_u,k * beta_k / (alpha |M_k|)` over the subchannel
        pub level: f64,
    /// Whether a weak user's power cap binds; the strongest user then
    /// transmits below `P_max`.
    pub capped: bool,
}

/// Equalizes `T_u,k * beta_k / (alpha |M_k|)` over the users of a subchannel
/// (ascending gain), with the strongest user at `P_max` when possible.
///
/// Writing `c_k = beta_k / (alpha |M_k|)`, equal values mean every user's
/// log-domain increment is `D c_k` for a common `D`, and `D` solves
/// `log2(1 + g_K P_max / (B 2^{D sum_{i<K} c_i})) = D c_K`. If that asks a
/// weak user for more than `P_max`, `D` is lowered until it does not and
/// the strongest user backs off to match.
pub fn sync_subchannel(
    gains: &[f64],
    ratios: &[f64],
    bandwidth_hz: f64,
    config: &RoundConfig,
) -> Result<SyncSubchannel> {
    let k = gains.len();
    if k == 0 || ratios.len() != k {
        return Err(Error::InvalidArgument("subchannel needs matching non-empty gains and ratios"));
    }
    if !(bandwidth_hz > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive"));
    }
    let p = config.max_power_w;
    let weak_sum: f64 = ratios[..k - 1].iter().sum();
    let strong_gap = |d: f64| math::log2_1p(gains[k - 1] * p / (bandwidth_hz * math::exp2(d * weak_sum))) - d * ratios[k - 1];
    let weak_powers = |d: f64| -> Vec<f64> {
        let mut received = bandwidth_hz;
        ratios[..k - 1]
            .iter()
            .zip(gains)
            .map(|(&c, &g)| {
                let power = received * libm::expm1(d * c * core::f64::consts::LN_2) / g;
                received += g * power;
                power
            })
            .collect()
    };
    let weak_ok = |d: f64| weak_powers(d).iter().all(|&w| w <= p);

    let hi = math::log2_1p(gains[k - 1] * p / bandwidth_hz) / ratios[k - 1];
    let mut d = kernel::root_bracketed(strong_gap, 0.0, hi, 1e-15);
    let mut capped = false;
    if !weak_ok(d) {
        capped = true;
        let slack = |d: f64| p - weak_powers(d).into_iter().fold(0.0, f64::max);
        d = kernel::root_bracketed(slack, 0.0, d, 1e-15);
    }
    if !(d > 0.0) {
        return Err(Error::NoConvergence("synchronous power allocation"));
    }
    let mut powers_w: Vec<f64> = weak_powers(d).into_iter().map(|w| w.min(p)).collect();
    let strongest = if capped {
        // Spare power of the strongest user cannot raise the minimum; spend
        // only what keeps its value level with the others.
        let received = bandwidth_hz + gains.iter().zip(&powers_w).map(|(g, w)| g * w).sum::<f64>();
        (received * libm::expm1(d * ratios[k - 1] * core::f64::consts::LN_2) / gains[k - 1]).min(p)
    } else {
        p
    };
    powers_w.push(strongest);
    Ok(SyncSubchannel { powers_w, level: config.payload_bits / (bandwidth_hz * d), capped })
}

fn sync_inputs(list: &[usize], users: &[UserProfile], config: &RoundConfig) -> (Vec<f64>, Vec<f64>) {
    let gains = list.iter().map(|&k| users[k].normalized_gain).collect();
    let ratios = list
        .iter()
        .map(|&k| users[k].flops_per_second / (config.flops_per_minibatch * f64::from(users[k].minibatch_count)))
        .collect();
    (gains, ratios)
}

fn sync_noma(
    scheme: Scheme,
    assignment: &Assignment,
    users: &[UserProfile],
    config: &RoundConfig,
    bandwidths: Vec<f64>,
) -> Result<AllocationResult> {
    let mut powers_w = Vec::with_capacity(bandwidths.len());
    let mut capped = false;
    for (list, &b) in assignment.subchannels.iter().zip(&bandwidths) {
        let (gains, ratios) = sync_inputs(list, users, config);
        let sol = sync_subchannel(&gains, &ratios, b, config)?;
        capped |= sol.capped;
        powers_w.push(sol.powers_w);
    }
    let flexible = AllocationResult::from_noma_allocation(scheme, assignment, users, config, bandwidths, powers_w, capped)?;
    let metrics = flexible.metrics.synchronized(users, config);
    Ok(AllocationResult { objective: metrics.wgptm, metrics, ..flexible })
}

/// Synchronous joint allocation: min-max powers per subchannel, and a
/// bandwidth split equalizing the subchannels' levels.
pub fn allocate_sync_joint(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    check_inputs(assignment, users, config)?;
    let n = assignment.num_subchannels();
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = assignment.subchannels.iter().map(|l| sync_inputs(l, users, config)).collect();
    let closures: Vec<_> = inputs
        .iter()
        .map(|(g, r)| move |b: f64| sync_subchannel(g, r, b, config).map_or(f64::INFINITY, |s| s.level))
        .collect();
    let refs: Vec<&dyn Fn(f64) -> f64> = closures.iter().map(|c| c as &dyn Fn(f64) -> f64).collect();
    let floor = MIN_BANDWIDTH_FRACTION * config.total_bandwidth_hz / n as f64;
    let split = kernel::equalize_budget(&refs, config.total_bandwidth_hz, &alloc::vec![floor; n], 1e-12)?;
    sync_noma(Scheme::SyncJoint, assignment, users, config, split.amounts)
}

/// Synchronous power-only allocation: min-max powers at `B / N`.
pub fn allocate_sync_power_only(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    check_inputs(assignment, users, config)?;
    let bandwidths = alloc::vec![config.equal_bandwidth_hz(); assignment.num_subchannels()];
    sync_noma(Scheme::SyncPowerOnly, assignment, users, config, bandwidths)
}

pub fn allocate_sync_full_power(assignment: &Assignment, users: &[UserProfile], config: &RoundConfig) -> Result<AllocationResult> {
    let flexible = allocate_full_power(assignment, users, config)?;
    let metrics = flexible.metrics.synchronized(users, config);
    Ok(AllocationResult { scheme: Scheme::SyncFullPower, objective: metrics.wgptm, metrics, ..flexible })
}
