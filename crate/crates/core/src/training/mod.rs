//! Imitation and contrastive losses, batch gradients with module routing,
//! the optimizer, and the training loop.

mod grad;
mod gradcheck;
mod loss;
mod optim;
mod pairing;
mod train;

pub use grad::{
    backward_with_routing, lgc_active, loss_and_gradients, total_loss, BatchItem, LossBreakdown, LossTerms,
};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use loss::{
    cosine_similarity, cosine_with_grad, degenerate_cosine_count, imitation_grad, imitation_loss, lgc_branch,
    lgc_loss, lgc_with_grad, LossConfig, PairBranch,
};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use pairing::{pair_batch, BatchPairing};
pub use train::{
    checkpoint_dir, list_checkpoints, mean_imitation_loss, metrics_csv, train, MetricsRow, OptimizerConfig,
    RunConfig, TrainConfig, TrainData, TrainReport, METRICS_HEADER,
};
