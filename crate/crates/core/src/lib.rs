//! Joint power and bandwidth allocation for multi-carrier NOMA wireless
//! federated learning with flexible aggregation.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs; randomness is always drawn from an explicitly
//! seeded generator passed in by the caller.
//!
//! Conventions used throughout:
//!
//! * channel gains are *normalized* gains `g = |h|^2 / N_0` in Hz/W, so the
//!   noise power of a subchannel of bandwidth `B_n` is simply `B_n`;
//! * within a subchannel users are ordered by ascending gain and decoded by
//!   SIC from the strongest down, so user `i` is interfered only by users
//!   `j < i`;
//! * mini-batch counts are real-valued (flexible aggregation allows partial
//!   iterations), except inside the toy trainer which floors them.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod math;

pub mod baselines;
pub mod clustering;
pub mod flsim;
pub mod kernel;
pub mod metric;
pub mod model;
pub mod noma;

pub use error::{Error, Result};
pub use metric::RoundMetrics;
pub use model::{Assignment, RoundConfig, UserProfile};
pub use noma::{AllocationResult, Scheme, SolverStatus};

/// Runs the allocator for `scheme` on one channel realization.
pub fn allocate(
    scheme: Scheme,
    assignment: &Assignment,
    users: &[UserProfile],
    config: &RoundConfig,
) -> Result<AllocationResult> {
    match scheme {
        Scheme::Joint => noma::allocate_joint(assignment, users, config),
        Scheme::PowerOnly => noma::allocate_power_only(assignment, users, config),
        Scheme::FullPower => baselines::allocate_full_power(assignment, users, config),
        Scheme::Oma => baselines::allocate_oma_flexible(assignment, users, config),
        Scheme::SyncJoint => baselines::allocate_sync_joint(assignment, users, config),
        Scheme::SyncPowerOnly => baselines::allocate_sync_power_only(assignment, users, config),
        Scheme::SyncFullPower => baselines::allocate_sync_full_power(assignment, users, config),
        Scheme::SyncOma => baselines::allocate_sync_oma(assignment, users, config),
    }
}
