//! Group-conditioned losses and accuracies, disagreement histograms and the
//! aligned-vs-conflicting loss ordering check.

mod histogram;
mod metrics;

pub use histogram::{disagreement_histogram, DisagreementHistogram};
pub use metrics::{
    check_assumption1, group_losses, unbiased_accuracy, worst_group_accuracy, AssumptionCheck,
    AssumptionStatus, GroupMetrics, GroupStat,
};
