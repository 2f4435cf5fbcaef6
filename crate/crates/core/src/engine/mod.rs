//! Biased-model training, disagreement-based sampling and debiased training.

mod log;
mod objective;
mod sampling;
mod train;

pub use log::{GapEntry, LogEntry, Phase, TrainingLog};
pub use objective::{oracle_weights, weighted_group_objective};
pub use sampling::{
    compute_sampling_table, disagreement_prob, disagreements, estimate_marginal_disagreement,
    sample_minibatch, CategoricalSampler, SamplingTable, DEGENERATE_THRESHOLD,
};
pub use train::{
    init_model, train_biased, train_debiased, train_erm, train_reweighted, TrainOutcome,
    TrainSchedule,
};
