//! Property and oracle checks shared by `selftest` and the acceptance suite.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use wfl_alloc_core::baselines::allocate_sync_joint;
use wfl_alloc_core::flsim::full_gradient_train;
use wfl_alloc_core::kernel::hessian_psd_check;
use wfl_alloc_core::noma::{allocate_joint, zn_objective};
use wfl_alloc_core::{RoundConfig, Scheme, SolverStatus, UserProfile};

use crate::montecarlo::{run_trials, summarize, trial_instance, write_montecarlo_csv};
use crate::scenario::{trial_rng, Scenario};
use crate::toy::{build_task, run_flsim, write_trace_csv};

/// Sizes of the checks. [`CheckPlan::full`] is the acceptance setting,
/// [`CheckPlan::quick`] trims the Monte-Carlo counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckPlan {
    pub seed: u64,
    pub oracle_instances: usize,
    pub oracle_grid: usize,
    pub cauchy_instances: usize,
    pub convexity_points: usize,
    /// Smallest `u = A_{K-1} - log2(B_n)` sampled by the convexity check;
    /// 0 covers the whole feasible region.
    pub convexity_min_u: f64,
    pub dominance_trials: usize,
    pub affine_trials: usize,
    pub equalization_trials: usize,
    pub contraction_steps: u64,
    pub threads: usize,
}

impl CheckPlan {
    pub fn full() -> Self {
        Self {
            seed: 0,
            oracle_instances: 50,
            oracle_grid: 60,
            cauchy_instances: 200,
            convexity_points: 100,
            convexity_min_u: 0.0,
            dominance_trials: 1000,
            affine_trials: 100,
            equalization_trials: 100,
            contraction_steps: 50,
            threads: 0,
        }
    }

    pub fn quick() -> Self {
        Self { dominance_trials: 50, affine_trials: 50, equalization_trials: 50, ..Self::full() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

fn outcome(id: u8, name: &'static str, result: crate::Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((passed, detail)) => CheckOutcome { id, name, passed, detail },
        Err(e) => CheckOutcome { id, name, passed: false, detail: format!("error: {e}") },
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// All checks, in id order; the reproducibility check here runs in-process.
pub const ALL_CHECKS: [fn(&CheckPlan) -> CheckOutcome; 10] = [
    oracle_optimality,
    cauchy_equality,
    convexity,
    dominance,
    affine_in_duration,
    sync_equalization,
    loss_correlation,
    gradient_contraction,
    reproducibility,
    complexity,
];

pub fn run_all(plan: &CheckPlan) -> Vec<CheckOutcome> {
    ALL_CHECKS.iter().map(|check| check(plan)).collect()
}

/// Checks whose 1-based ids are listed; unknown ids are ignored.
pub fn run_selected(plan: &CheckPlan, ids: &[u8]) -> Vec<CheckOutcome> {
    ALL_CHECKS.iter().enumerate().filter(|(i, _)| ids.contains(&(*i as u8 + 1))).map(|(_, check)| check(plan)).collect()
}

/// WGPTM of one two-user subchannel with the weak user at log-domain value
/// `a` and the strong user at `P_max`, evaluated from first principles.
fn two_user_wgptm(config: &RoundConfig, pair: [&UserProfile; 2], a: f64, bandwidth: f64) -> f64 {
    let [weak, strong] = pair;
    let received_weak = 2f64.powf(a) - bandwidth;
    let rate_weak = bandwidth * (1.0 + received_weak / bandwidth).log2();
    let rate_strong = bandwidth * (1.0 + strong.normalized_gain * config.max_power_w / (received_weak + bandwidth)).log2();
    [(weak, rate_weak), (strong, rate_strong)]
        .iter()
        .map(|(u, rate)| {
            let train = (config.round_duration_s - config.downlink_delay_s - config.payload_bits / rate).max(0.0);
            u.weight * train * u.flops_per_second / (config.flops_per_minibatch * f64::from(u.minibatch_count))
        })
        .sum()
}

/// Best WGPTM on a grid over the weak user's log-domain variable of each
/// subchannel and the bandwidth split (the full band is always used).
fn grid_optimum(config: &RoundConfig, pairs: &[[&UserProfile; 2]; 2], points: usize) -> f64 {
    let total = config.total_bandwidth_hz;
    let best_for = |pair: [&UserProfile; 2], b: f64| {
        let a0 = b.log2();
        let a_max = (b + pair[0].normalized_gain * config.max_power_w).log2();
        (1..=points)
            .map(|j| two_user_wgptm(config, pair, a0 + (a_max - a0) * j as f64 / points as f64, b))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    (1..=points)
        .map(|j| {
            let b1 = total * j as f64 / (points + 1) as f64;
            best_for(pairs[0], b1) + best_for(pairs[1], total - b1)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn oracle_optimality(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let scenario = Scenario {
            num_users: 4,
            round: RoundConfig { num_subchannels: 2, ..RoundConfig::default() },
            seed: plan.seed,
            ..Scenario::default()
        };
        let mut worst_gap = f64::NEG_INFINITY;
        let mut slowest = Duration::ZERO;
        let mut violations = 0;
        for trial in 0..plan.oracle_instances as u64 {
            let (users, assignment) = trial_instance(&scenario, trial)?;
            let start = Instant::now();
            let result = allocate_joint(&assignment, &users, &scenario.round)?;
            slowest = slowest.max(start.elapsed());
            let pair = |n: usize| [&users[assignment.subchannels[n][0]], &users[assignment.subchannels[n][1]]];
            let grid = grid_optimum(&scenario.round, &[pair(0), pair(1)], plan.oracle_grid);
            let gap = (grid - result.objective) / grid.abs();
            worst_gap = worst_gap.max(gap);
            if gap > 1e-3 {
                violations += 1;
            }
        }
        let passed = violations == 0 && slowest < Duration::from_secs(1);
        Ok((
            passed,
            format!(
                "{} instances, {violations} below grid optimum by > 1e-3 rel, worst (grid - joint)/grid = {worst_gap:.3e}, slowest {:.1} ms",
                plan.oracle_instances,
                slowest.as_secs_f64() * 1e3
            ),
        ))
    };
    outcome(1, "oracle optimality", run())
}

pub fn cauchy_equality(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let mut checked = 0;
        let mut skipped_clipped = 0;
        let mut worst = 0.0f64;
        let mut trial = 0u64;
        let max_attempts = 50 * plan.cauchy_instances as u64;
        while checked < plan.cauchy_instances && trial < max_attempts {
            let per_channel = 3 + (trial % 3) as usize;
            let scenario = Scenario {
                num_users: 2 * per_channel,
                round: RoundConfig { num_subchannels: 2, ..RoundConfig::default() },
                seed: plan.seed.wrapping_add(1),
                ..Scenario::default()
            };
            let (users, assignment) = trial_instance(&scenario, trial)?;
            trial += 1;
            let result = allocate_joint(&assignment, &users, &scenario.round)?;
            if result.status != SolverStatus::Optimal {
                skipped_clipped += 1;
                continue;
            }
            for (n, list) in assignment.subchannels.iter().enumerate() {
                let betas: Vec<f64> = list.iter().map(|&k| users[k].flops_per_second).collect();
                let ratios = result.substituted(&users, n).weak_ratios(&betas);
                let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
                worst = worst.max(rel_gap(hi, lo));
            }
            checked += 1;
        }
        Ok((
            checked == plan.cauchy_instances && worst <= 1e-6,
            format!("{checked} unclipped instances ({skipped_clipped} clipped skipped), worst ratio spread {worst:.3e} rel"),
        ))
    };
    outcome(2, "cauchy equality", run())
}

/// `2 / (3 ln 2)`: below this value of `u = A_{K-1} - log2(B_n)` the weak
/// users' term `1 / (B_n u)` has an indefinite Hessian.
pub const CONVEX_U_THRESHOLD: f64 = 2.0 / (3.0 * core::f64::consts::LN_2);

pub fn convexity(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let base = Scenario { seed: plan.seed.wrapping_add(2), ..Scenario::default() };
        let config = base.round;
        let b_equal = config.equal_bandwidth_hz();
        let mut failures = 0;
        let mut failures_high_u = 0;
        let mut max_failing_u = f64::NEG_INFINITY;
        let mut worst = f64::INFINITY;
        let classes = [1usize, 2, 3, 5];
        for (c, &size) in classes.iter().enumerate() {
            let mut rng = trial_rng(base.seed, c as u64);
            for _ in 0..plan.convexity_points {
                let mut users: Vec<(f64, f64)> = (0..size)
                    .map(|_| {
                        let g = config.gain_scale * 10f64.powf(rng.random_range(base.gain_db_min..=base.gain_db_max) / 10.0);
                        (g, rng.random_range(base.flops_per_second_min..=base.flops_per_second_max))
                    })
                    .collect();
                users.sort_by(|x, y| x.0.total_cmp(&y.0));
                let gains: Vec<f64> = users.iter().map(|u| u.0).collect();
                let betas: Vec<f64> = users.iter().map(|u| u.1).collect();
                let b = b_equal * rng.random_range(0.2..2.0);
                let weak_power: f64 = gains[..size - 1].iter().sum::<f64>() * config.max_power_w;
                let u_max = (1.0 + weak_power / b).log2();
                let u_lo = (0.05 * u_max).max(plan.convexity_min_u);
                let a = if size > 1 { b.log2() + rng.random_range(u_lo..0.95 * u_max) } else { 0.0 };
                let f = |a: f64, b: f64| zn_objective(a, b, &gains, &betas, &config).unwrap_or(f64::NAN);
                let check = hessian_psd_check(f, (a, b), 1e-4)?;
                let scale = 1.0 + check.max_eigenvalue.abs();
                worst = worst.min(check.min_eigenvalue / scale);
                if !check.psd {
                    failures += 1;
                    let u = a - b.log2();
                    max_failing_u = max_failing_u.max(u);
                    if u >= CONVEX_U_THRESHOLD {
                        failures_high_u += 1;
                    }
                }
            }
        }
        Ok((
            failures == 0,
            format!(
                "u >= {:.3}, {} points per class |K_n| in {classes:?}, {failures} not PSD (largest failing u = A - log2 B: {max_failing_u:.3}; {failures_high_u} with u >= {CONVEX_U_THRESHOLD:.3}), worst min_eig/(1+|max_eig|) = {worst:.3e}",
                plan.convexity_min_u,
                plan.convexity_points
            ),
        ))
    };
    outcome(3, "convexity", run())
}

const DOMINANCE_SLACK: f64 = 1e-9;

pub fn dominance(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let scenario = Scenario { num_trials: plan.dominance_trials, seed: plan.seed, ..Scenario::default() };
        let outcomes = run_trials(&scenario, plan.threads)?;
        let index = |s: Scheme| scenario.schemes.iter().position(|&x| x == s).expect("all schemes present");
        let mut pairs: Vec<(Scheme, Scheme)> = vec![(Scheme::Joint, Scheme::PowerOnly), (Scheme::PowerOnly, Scheme::FullPower)];
        pairs.extend(Scheme::ALL.iter().filter(|s| s.is_sync()).map(|&s| (s.flexible(), s)));
        let mut violations = 0;
        let mut errors = 0;
        let mut worst = f64::NEG_INFINITY;
        for o in &outcomes {
            for &(hi, lo) in &pairs {
                match (&o.results[index(hi)], &o.results[index(lo)]) {
                    (Ok(h), Ok(l)) => {
                        let deficit = (l.wgptm - h.wgptm) / h.wgptm.abs().max(l.wgptm.abs()).max(1e-300);
                        worst = worst.max(deficit);
                        if deficit > DOMINANCE_SLACK {
                            violations += 1;
                        }
                    }
                    _ => errors += 1,
                }
            }
        }
        Ok((
            violations == 0 && errors == 0,
            format!(
                "{} trials x {} pairs, {violations} violations, {errors} failed allocations, worst relative deficit {worst:.3e}",
                outcomes.len(),
                pairs.len()
            ),
        ))
    };
    outcome(4, "dominance chain", run())
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    }
}

pub const AFFINE_DURATIONS: [f64; 6] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

/// R^2 of the linear fit of mean WGPTM against the round duration, per
/// scheme.
pub fn affine_fits(plan: &CheckPlan) -> crate::Result<Vec<(Scheme, f64)>> {
    let scenario = Scenario { num_trials: plan.affine_trials, seed: plan.seed, ..Scenario::default() };
    let mut means = vec![Vec::new(); scenario.schemes.len()];
    for &t in &AFFINE_DURATIONS {
        let mut s = scenario.clone();
        s.round.round_duration_s = t;
        for (i, summary) in summarize(&s, &run_trials(&s, plan.threads)?).into_iter().enumerate() {
            means[i].push(summary.mean_wgptm);
        }
    }
    Ok(scenario.schemes.iter().zip(&means).map(|(&s, m)| (s, r_squared(&AFFINE_DURATIONS, m))).collect())
}

pub fn affine_in_duration(plan: &CheckPlan) -> CheckOutcome {
    affine_outcome(plan, affine_fits(plan))
}

/// Outcome of the duration check from precomputed fits.
pub fn affine_outcome(plan: &CheckPlan, fits: crate::Result<Vec<(Scheme, f64)>>) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let fits = fits?;
        let listed: Vec<String> = fits.iter().map(|(s, r2)| format!("{s} {r2:.6}")).collect();
        Ok((
            fits.iter().all(|f| f.1 > 0.999),
            format!("{} trials per duration, R^2: {}", plan.affine_trials, listed.join(", ")),
        ))
    };
    outcome(5, "affine in duration", run())
}

pub fn sync_equalization(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let scenario = Scenario { seed: plan.seed.wrapping_add(3), ..Scenario::default() };
        let config = &scenario.round;
        let mut within = 0.0f64;
        let mut across = 0.0f64;
        for trial in 0..plan.equalization_trials as u64 {
            let (users, assignment) = trial_instance(&scenario, trial)?;
            let result = allocate_sync_joint(&assignment, &users, config)?;
            let level = |k: usize| {
                result.metrics.per_user_uplink_s[k] * users[k].flops_per_second / (config.flops_per_minibatch * f64::from(users[k].minibatch_count))
            };
            let mut per_channel = Vec::new();
            for list in &assignment.subchannels {
                let q: Vec<f64> = list.iter().map(|&k| level(k)).collect();
                let (lo, hi) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                within = within.max(rel_gap(hi, lo));
                per_channel.push(q.iter().sum::<f64>() / q.len() as f64);
            }
            let (lo, hi) = per_channel.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            across = across.max(rel_gap(hi, lo));
        }
        Ok((
            within <= 1e-6 && across <= 1e-5,
            format!("{} instances, worst spread within subchannel {within:.3e}, across subchannels {across:.3e}", plan.equalization_trials),
        ))
    };
    outcome(6, "sync equalization", run())
}

pub fn loss_correlation(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let scenario = Scenario::default();
        let report = run_flsim(&scenario, plan.seed, plan.threads)?;
        let joint = report.median_rounds_of(Scheme::Joint.name()).unwrap_or(f64::NAN);
        let full = report.median_rounds_of(Scheme::FullPower.name()).unwrap_or(f64::NAN);
        let rho = report.correlation.clone();
        let passed = matches!(rho, Ok(r) if r > 0.5) && joint <= full;
        let rho_text = match rho {
            Ok(r) => format!("{r:.4}"),
            Err(e) => format!("undefined ({e})"),
        };
        Ok((passed, format!("spearman = {rho_text}, median rounds to threshold: joint {joint}, full-power {full}")))
    };
    outcome(7, "wgptm vs loss decrease", run())
}

pub fn gradient_contraction(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let task = build_task(&Scenario::default())?;
        let w0 = vec![0.0; task.dimension];
        let mut worst = f64::NEG_INFINITY;
        for k in 0..task.num_users() {
            let f_star = task.user_loss(k, &task.user_optimum(k)?);
            let gap0 = task.user_loss(k, &w0) - f_star;
            let c = task.contraction(k);
            let mut w = w0.clone();
            for phi in 0..=plan.contraction_steps {
                if phi > 0 {
                    w = full_gradient_train(&w, k, 1, &task)?;
                }
                let excess = task.user_loss(k, &w) - f_star - (1.0 - c).powi(phi as i32) * gap0;
                worst = worst.max(excess);
            }
        }
        Ok((
            worst <= 1e-9,
            format!("{} users x {} steps, worst excess over the bound {worst:.3e}", task.num_users(), plan.contraction_steps),
        ))
    };
    outcome(8, "gradient contraction", run())
}

pub fn reproducibility(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let scenario = Scenario { num_users: 12, num_trials: 20, seed: plan.seed, ..Scenario::default() };
        let montecarlo = |threads: usize| -> crate::Result<Vec<u8>> {
            let mut buf = Vec::new();
            write_montecarlo_csv(&scenario, &run_trials(&scenario, threads)?, &mut buf)?;
            Ok(buf)
        };
        let mut toy = Scenario::default();
        toy.flsim.num_seeds = 2;
        toy.flsim.num_rounds = 5;
        let flsim = |threads: usize| -> crate::Result<Vec<u8>> {
            let mut buf = Vec::new();
            write_trace_csv(&run_flsim(&toy, plan.seed, threads)?.traces, &mut buf)?;
            Ok(buf)
        };
        let same_mc = montecarlo(1)? == montecarlo(plan.threads)?;
        let same_fl = flsim(1)? == flsim(plan.threads)?;
        Ok((same_mc && same_fl, format!("montecarlo identical: {same_mc}, flsim identical: {same_fl}")))
    };
    outcome(9, "reproducibility", run())
}

pub const COMPLEXITY_SUBCHANNELS: [usize; 4] = [5, 10, 20, 40];
const COMPLEXITY_USERS: usize = 80;
/// Largest accepted log-log slope of runtime against the subchannel count.
pub const MAX_COMPLEXITY_DEGREE: f64 = 4.5;

fn median_time(repeats: usize, mut f: impl FnMut() -> crate::Result<()>) -> crate::Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[repeats / 2])
}

pub fn complexity(plan: &CheckPlan) -> CheckOutcome {
    let run = || -> crate::Result<(bool, String)> {
        let base = Scenario { seed: plan.seed, ..Scenario::default() };
        let (users, assignment) = trial_instance(&base, 0)?;
        let headline = median_time(3, || {
            allocate_joint(&assignment, &users, &base.round)?;
            Ok(())
        })?;
        let mut times = Vec::new();
        for &n in &COMPLEXITY_SUBCHANNELS {
            let s = Scenario { num_users: COMPLEXITY_USERS, round: RoundConfig { num_subchannels: n, ..base.round }, ..base.clone() };
            let (users, assignment) = trial_instance(&s, 0)?;
            times.push(median_time(5, || {
                allocate_joint(&assignment, &users, &s.round)?;
                Ok(())
            })?);
        }
        let xs: Vec<f64> = COMPLEXITY_SUBCHANNELS.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        let max_step = ys.windows(2).zip(xs.windows(2)).map(|(y, x)| (y[1] - y[0]) / (x[1] - x[0])).fold(f64::NEG_INFINITY, f64::max);
        let ms: Vec<String> = times.iter().map(|t| format!("{:.1}", t * 1e3)).collect();
        Ok((
            headline < 1.0 && slope <= MAX_COMPLEXITY_DEGREE && max_step <= MAX_COMPLEXITY_DEGREE,
            format!(
                "N=10,K=25 in {:.1} ms; K={COMPLEXITY_USERS}, N={COMPLEXITY_SUBCHANNELS:?}: [{}] ms, log-log slope {slope:.2}, steepest segment {max_step:.2}",
                headline * 1e3,
                ms.join(", ")
            ),
        ))
    };
    outcome(10, "complexity", run())
}
