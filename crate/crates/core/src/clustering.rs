//! User-to-subchannel assignment.
//!
//! Both methods label users cyclically `1..N` and group equal labels; they
//! differ only in the order users are labeled in. Each subchannel list ends
//! up sorted by ascending gain, which the SIC decoding order relies on.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Assignment, UserProfile};

/// How users are grouped onto subchannels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Clustering {
    /// Label users in ascending gain order.
    #[default]
    Sorted,
    /// Label users in a uniformly random order.
    Random,
}

impl Clustering {
    pub fn assign(self, users: &[UserProfile], num_subchannels: usize, seed: u64) -> Result<Assignment> {
        match self {
            Clustering::Sorted => cluster_sorted(users, num_subchannels),
            Clustering::Random => cluster_random(users, num_subchannels, seed),
        }
    }
}

fn check(users: &[UserProfile], num_subchannels: usize) -> Result<()> {
    if num_subchannels == 0 {
        return Err(Error::InvalidArgument("num_subchannels must be at least 1"));
    }
    if users.len() < num_subchannels {
        return Err(Error::InvalidArgument("fewer users than subchannels"));
    }
    Ok(())
}

fn sort_by_gain(users: &[UserProfile], list: &mut [usize]) {
    list.sort_by(|&a, &b| {
        users[a]
            .normalized_gain
            .total_cmp(&users[b].normalized_gain)
            .then(a.cmp(&b))
    });
}

fn label_cyclically(users: &[UserProfile], order: &[usize], num_subchannels: usize) -> Assignment {
    let mut subchannels: Vec<Vec<usize>> = (0..num_subchannels).map(|_| Vec::new()).collect();
    for (rank, &k) in order.iter().enumerate() {
        subchannels[rank % num_subchannels].push(k);
    }
    for list in &mut subchannels {
        sort_by_gain(users, list);
    }
    Assignment { subchannels }
}

pub fn cluster_sorted(users: &[UserProfile], num_subchannels: usize) -> Result<Assignment> {
    check(users, num_subchannels)?;
    let mut order: Vec<usize> = (0..users.len()).collect();
    sort_by_gain(users, &mut order);
    Ok(label_cyclically(users, &order, num_subchannels))
}

pub fn cluster_random(users: &[UserProfile], num_subchannels: usize, seed: u64) -> Result<Assignment> {
    check(users, num_subchannels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..users.len()).collect();
    order.shuffle(&mut rng);
    Ok(label_cyclically(users, &order, num_subchannels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn users_with_gains(gains: &[f64]) -> Vec<UserProfile> {
        let n = gains.len() as f64;
        gains
            .iter()
            .enumerate()
            .map(|(k, &g)| UserProfile {
                user_id: k as u32,
                minibatch_count: 1,
                weight: 1.0 / n,
                flops_per_second: 1.0,
                normalized_gain: g,
            })
            .collect()
    }

    #[test]
    fn sorted_labels_cyclically() {
        let users = users_with_gains(&[3.0, 1.0, 4.0, 2.0]);
        let a = cluster_sorted(&users, 2).unwrap();
        // subchannel 1 gets gains {1, 3}, subchannel 2 gets {2, 4}
        assert_eq!(a.subchannels, vec![vec![1, 0], vec![3, 2]]);
    }

    #[test]
    fn sorted_degenerate_sizes() {
        let users = users_with_gains(&[3.0, 1.0, 2.0]);
        assert_eq!(cluster_sorted(&users, 1).unwrap().subchannels, vec![vec![1, 2, 0]]);
        let one_each = cluster_sorted(&users, 3).unwrap();
        assert!(one_each.subchannels.iter().all(|s| s.len() == 1));
        assert!(cluster_sorted(&users, 4).is_err());
        assert!(cluster_sorted(&users, 0).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let users = users_with_gains(&[5.0, 1.0, 4.0, 2.0, 9.0, 7.0]);
        assert_eq!(cluster_random(&users, 3, 11).unwrap(), cluster_random(&users, 3, 11).unwrap());
        let single = cluster_random(&users, 1, 99).unwrap();
        assert_eq!(single.subchannels, vec![vec![1, 3, 2, 0, 5, 4]]);
        let four = users_with_gains(&[1.0, 2.0, 3.0, 4.0]);
        let a = cluster_random(&four, 2, 5).unwrap();
        assert_eq!(a.subchannels.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2]);
        assert!(cluster_random(&four, 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_order(
            gains in prop::collection::vec(0.1f64..100.0, 1..40),
            n_frac in 0.0f64..1.0,
            seed in any::<u64>(),
            random in any::<bool>(),
        ) {
            let users = users_with_gains(&gains);
            let n = 1 + ((users.len() - 1) as f64 * n_frac) as usize;
            let method = if random { Clustering::Random } else { Clustering::Sorted };
            let a = method.assign(&users, n, seed).unwrap();
            prop_assert!(a.validate(&users).is_ok());
            prop_assert_eq!(a.num_subchannels(), n);
            let sizes: Vec<usize> = a.subchannels.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
