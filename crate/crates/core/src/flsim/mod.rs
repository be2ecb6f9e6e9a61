//! Toy federated training on a strongly convex ridge task, used to check
//! that rounds with a larger WGPTM decrease the global loss faster.

mod linalg;
mod stats;
mod task;
mod train;

pub use stats::{average_ranks, spearman, early_round_correlation, EARLY_WINDOW, MIN_PAIRS};
pub use task::{make_toy_task, make_toy_task_with, MiniBatch, ToyParams, ToyTask, ToyUser};
pub use train::{
    aggregate, async_blocks, batch_orders, full_gradient_train, local_train, run_async_oma, run_training, ChannelModel,
    ToyChannel, TrainingSetup, TrainingTrace, ASYNC_BLOCK_ITERATIONS,
};
