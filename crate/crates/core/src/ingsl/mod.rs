//! Diversity-guided pruning of the candidate graph and its training loop.

mod mi;
mod prune;
mod scorer;
mod train;

pub use mi::{mi_loss, sample_batch, total_loss, COSINE_FLOOR};
pub use prune::{keep_entries, prune, prune_scores, select_threshold, survivor_count, Pruned, Threshold};
pub use scorer::{diversity_scores, DiversityScorer, ScorerKind, ScorerVars};
pub use train::{
    forward, train_ingsl, EpochDraws, EpochRecord, Forward, PruneMode, TrainConfig, TrainOutcome,
    TrainReport, TrainedModel,
};
