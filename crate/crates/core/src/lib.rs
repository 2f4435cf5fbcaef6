//! Disagreement-probability resampling (DPR) for training classifiers that
//! stay accurate on data lacking the spurious correlations present in most of
//! the training set.
//!
//! The pipeline has four stages, each in its own module:
//!
//! - [`data`]: synthetic datasets with a controlled bias-conflicting ratio,
//!   IDX ingestion, augmentation and the native dataset file format.
//! - [`nn`]: a small dense network, cross-entropy / generalized cross-entropy
//!   losses with closed-form gradients and momentum SGD.
//! - [`engine`]: biased-model training, disagreement-based sampling tables and
//!   resampled (or reweighted) debiased training.
//! - [`eval`] and [`bounds`]: group-conditioned metrics and empirical checks of
//!   the generalization bounds for the group min-max objective.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the experiments use.

pub mod bounds;
pub mod data;
pub mod engine;
mod error;
pub mod eval;
pub mod nn;
mod scalar;

pub use error::{DprError, Result};
pub use scalar::Scalar;

pub use bounds::{BoundReport, MonteCarloBoundStats, Theorem};
pub use data::{
    AugmentParams, BiasedDataset, BiasedExample, DatasetKind, FeatureLayout, GenConfig,
};
pub use engine::{SamplingTable, TrainOutcome, TrainSchedule, TrainingLog};
pub use eval::{AssumptionCheck, DisagreementHistogram, GroupMetrics};
pub use nn::{ClassifierModel, GradientBuffer, LossKind, OptimizerState, SgdConfig};

pub type Classifier = ClassifierModel<f64>;
pub type Classifier32 = ClassifierModel<f32>;
pub type Dataset = BiasedDataset<f64>;
pub type Dataset32 = BiasedDataset<f32>;
pub type Example = BiasedExample<f64>;
pub type Table = SamplingTable<f64>;
pub type Metrics = GroupMetrics<f64>;
pub type Gradients = GradientBuffer<f64>;
pub type Optimizer = OptimizerState<f64>;
