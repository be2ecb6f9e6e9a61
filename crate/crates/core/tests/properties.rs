use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wfl_alloc_core::baselines::{allocate_full_power, allocate_oma_flexible, oma_slot_duration, oma_time_lost};
use wfl_alloc_core::clustering::cluster_sorted;
use wfl_alloc_core::flsim::aggregate;
use wfl_alloc_core::model::{feasible_minibatches, sic_sinr, uplink_delay, validate_users};
use wfl_alloc_core::noma::{allocate_joint, allocate_power_only, recover_a_all, recover_powers, recover_qn, solve_reduced, SubstitutedVars};
use wfl_alloc_core::{allocate, RoundConfig, RoundMetrics, Scheme, SolverStatus, UserProfile};

fn users_from(draws: &[(f64, f64, u32)]) -> Vec<UserProfile> {
    let total: u32 = draws.iter().map(|d| d.2).sum();
    draws
        .iter()
        .enumerate()
        .map(|(k, &(gain_db, beta, m))| UserProfile {
            user_id: k as u32,
            minibatch_count: m,
            weight: f64::from(m) / f64::from(total),
            flops_per_second: beta,
            normalized_gain: 1e6 * 10f64.powf(gain_db / 10.0),
        })
        .collect()
}

fn population(max_users: usize) -> impl Strategy<Value = Vec<UserProfile>> {
    prop::collection::vec((2.0f64..15.0, 6e9f64..9e9, 15u32..=25), 2..=max_users).prop_map(|d| users_from(&d))
}

fn config_for(num_subchannels: usize) -> RoundConfig {
    RoundConfig { num_subchannels, ..RoundConfig::default() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sic_monotone_in_powers(
        gains in prop::collection::vec(1e5f64..1e8, 2..6),
        powers in prop::collection::vec(0.1f64..40.0, 6),
        bump in 0.01f64..5.0,
    ) {
        let mut gains = gains;
        gains.sort_by(f64::total_cmp);
        let k = gains.len();
        let powers = &powers[..k];
        let b = 3e6;
        for i in 0..k {
            let base = sic_sinr(&gains, powers, b, i).unwrap();
            let mut own = powers.to_vec();
            own[i] += bump;
            prop_assert!(sic_sinr(&gains, &own, b, i).unwrap() > base);
            for j in 0..i {
                let mut other = powers.to_vec();
                other[j] += bump;
                prop_assert!(sic_sinr(&gains, &other, b, i).unwrap() <= base);
            }
        }
    }

    #[test]
    fn rates_telescope(
        gains in prop::collection::vec(1e5f64..1e8, 1..6),
        powers in prop::collection::vec(0.1f64..40.0, 6),
        b in 1e5f64..1e7,
    ) {
        let k = gains.len();
        let powers = &powers[..k];
        let mut sum = 0.0;
        let mut received = b;
        for m in 0..k {
            sum += (1.0 + sic_sinr(&gains, powers, b, m).unwrap()).log2();
            received += gains[m] * powers[m];
            prop_assert!(rel(sum, (received / b).log2()) <= 1e-12);
        }
    }

    #[test]
    fn delay_falls_with_bandwidth_at_fixed_sinr(g in 1e5f64..1e8, p in 0.1f64..40.0, b in 1e5f64..1e7, scale in 1.01f64..4.0) {
        let slow = uplink_delay(4e7, &[g], &[p], b, 0).unwrap();
        let fast = uplink_delay(4e7, &[g], &[p * scale], b * scale, 0).unwrap();
        prop_assert!(fast < slow);
    }

    #[test]
    fn feasible_minibatches_affine_in_duration(tu in 0.0f64..3.0, beta in 6e9f64..9e9, t in 4.0f64..30.0, dt in 0.1f64..10.0) {
        let alpha = 0.04e9;
        let a = feasible_minibatches(t, 0.5, tu, beta, alpha);
        let b = feasible_minibatches(t + dt, 0.5, tu, beta, alpha);
        prop_assert!(rel(b - a, dt * beta / alpha) <= 1e-9);
    }

    #[test]
    fn joint_dominates_power_only_dominates_full_power(users in population(12), n in 1usize..4) {
        prop_assume!(users.len() >= n);
        let config = config_for(n);
        let a = cluster_sorted(&users, n).unwrap();
        let joint = allocate_joint(&a, &users, &config).unwrap();
        let power_only = allocate_power_only(&a, &users, &config).unwrap();
        let full = allocate_full_power(&a, &users, &config).unwrap();
        prop_assert!(joint.objective >= power_only.objective * (1.0 - 1e-9));
        prop_assert!(power_only.objective >= full.objective * (1.0 - 1e-9));
        let used: f64 = joint.bandwidths_hz.iter().sum();
        prop_assert!(rel(used, config.total_bandwidth_hz) <= 1e-6);
        for powers in &joint.powers_w {
            prop_assert_eq!(*powers.last().unwrap(), config.max_power_w);
            prop_assert!(powers.iter().all(|&p| p >= 0.0 && p <= config.max_power_w));
        }
    }

    #[test]
    fn flexible_dominates_sync(users in population(9), n in 1usize..4) {
        prop_assume!(users.len() >= n);
        let config = config_for(n);
        let a = cluster_sorted(&users, n).unwrap();
        for scheme in Scheme::ALL.into_iter().filter(|s| s.is_sync()) {
            let sync = allocate(scheme, &a, &users, &config).unwrap();
            let flexible = allocate(scheme.flexible(), &a, &users, &config).unwrap();
            prop_assert!(flexible.objective >= sync.objective * (1.0 - 1e-9), "{scheme}");
            prop_assert!(sync.objective.is_finite() && sync.objective >= 0.0);
        }
    }

    #[test]
    fn unclipped_optimum_satisfies_cauchy_and_reconstructs(users in population(6)) {
        let config = config_for(1);
        let a = cluster_sorted(&users, 1).unwrap();
        let result = allocate_joint(&a, &users, &config).unwrap();
        if result.status != SolverStatus::Optimal {
            return Ok(());
        }
        let list = &a.subchannels[0];
        let gains: Vec<f64> = list.iter().map(|&k| users[k].normalized_gain).collect();
        let betas: Vec<f64> = list.iter().map(|&k| users[k].flops_per_second).collect();
        let vars = result.substituted(&users, 0);
        let ratios = vars.weak_ratios(&betas);
        for r in &ratios {
            prop_assert!(rel(*r, ratios[0]) <= 1e-6);
        }
        let opt = solve_reduced(&a, &users, &config).unwrap()[0];
        let weak = &betas[..betas.len() - 1];
        let a0 = opt.b_star.log2();
        let mut a_all = vec![a0];
        a_all.extend(recover_a_all(recover_qn(opt.a_star, opt.b_star, weak).unwrap(), a0, weak));
        let (powers, clipped) = recover_powers(&a_all, &gains, config.max_power_w).unwrap();
        prop_assert!(!clipped);
        let back = SubstitutedVars::from_powers(&gains, &powers, opt.b_star);
        prop_assert!((back.a[gains.len() - 1] - opt.a_star).abs() <= 1e-9 * opt.a_star.abs());
    }

    #[test]
    fn enumerated_order_beats_random_orders(users in population(4), seed in any::<u64>()) {
        let config = config_for(1);
        let a = cluster_sorted(&users, 1).unwrap();
        let best = allocate_oma_flexible(&a, &users, &config).unwrap();
        let list = &a.subchannels[0];
        let b = config.total_bandwidth_hz;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..list.len()).collect();
        for _ in 0..100 {
            order.shuffle(&mut rng);
            let durations: Vec<f64> = order.iter().map(|&i| oma_slot_duration(&config, users[list[i]].normalized_gain, b)).collect();
            let lost = oma_time_lost(&durations);
            let mut uplink = vec![0.0; users.len()];
            let mut compute = vec![0.0; users.len()];
            let mut feasible = vec![true; users.len()];
            for (pos, &i) in order.iter().enumerate() {
                let k = list[i];
                uplink[k] = durations[pos];
                compute[k] = (config.usable_time_s() - lost[pos]).max(0.0);
                feasible[k] = lost[pos] <= config.usable_time_s();
            }
            let m = RoundMetrics::from_parts(&config, &users, uplink, compute, feasible).unwrap();
            prop_assert!(best.objective >= m.wgptm * (1.0 - 1e-12));
        }
    }

    #[test]
    fn aggregate_stays_within_local_bounds(
        models in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..6),
        raw in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let raw = &raw[..models.len()];
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let w = aggregate(&models, &weights).unwrap();
        for d in 0..3 {
            let lo = models.iter().map(|m| m[d]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(w[d] >= lo - 1e-12 && w[d] <= hi + 1e-12);
        }
    }
}

#[test]
fn generated_populations_are_valid() {
    let users = users_from(&[(2.0, 6e9, 15), (15.0, 9e9, 25)]);
    validate_users(&users).unwrap();
}
