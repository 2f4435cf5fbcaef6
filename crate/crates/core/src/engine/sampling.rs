use rand::Rng;

use crate::data::{BiasedDataset, BiasedExample};
use crate::nn::{softmax_with_temperature, ClassifierModel, Workspace};
use crate::{DprError, Result, Scalar};

/// Tables whose every disagreement falls below this are rejected.
pub const DEGENERATE_THRESHOLD: f64 = 1e-9;

/// `1 - p_bias(y | x)` with `p_bias` the temperature-scaled softmax of the
/// biased model.
pub fn disagreement_prob<S: Scalar>(model: &ClassifierModel<S>, example: &BiasedExample<S>, tau: S) -> Result<S> {
    let mut ws = Workspace::for_model(model);
    disagreement_with(model, example, tau, &mut ws)
}

fn disagreement_with<S: Scalar>(
    model: &ClassifierModel<S>,
    example: &BiasedExample<S>,
    tau: S,
    ws: &mut Workspace<S>,
) -> Result<S> {
    let logits = model.forward_with(&example.features, ws)?;
    if example.y >= logits.len() {
        return Err(DprError::Index {
            index: example.y,
            classes: logits.len(),
        });
    }
    let p = softmax_with_temperature(logits, tau)?;
    Ok((S::one() - p[example.y]).max(S::zero()).min(S::one()))
}

/// Disagreement probability of every example, in dataset order.
pub fn disagreements<S: Scalar>(model: &ClassifierModel<S>, data: &BiasedDataset<S>, tau: S) -> Result<Vec<S>> {
    let mut ws = Workspace::for_model(model);
    data.examples()
        .iter()
        .map(|e| disagreement_with(model, e, tau, &mut ws))
        .collect()
}

/// Mean disagreement over the dataset, the estimate of `p(y != y_bias)`.
pub fn estimate_marginal_disagreement<S: Scalar>(
    model: &ClassifierModel<S>,
    data: &BiasedDataset<S>,
    tau: S,
) -> Result<S> {
    if data.is_empty() {
        return Err(DprError::param("marginal disagreement of an empty dataset"));
    }
    let d = disagreements(model, data, tau)?;
    Ok(d.iter().copied().sum::<S>() / S::from_usize_lossy(d.len()))
}

/// Per-example sampling probabilities proportional to the disagreement
/// probability, `r(x, y) = d(x, y) / sum_j d_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingTable<S> {
    probs: Vec<S>,
    marginal: S,
    disagreement: Vec<S>,
}

impl<S: Scalar> SamplingTable<S> {
    pub fn from_disagreements(disagreement: Vec<S>) -> Result<Self> {
        if disagreement.is_empty() {
            return Err(DprError::param("sampling table over an empty dataset"));
        }
        if let Some(i) = disagreement.iter().position(|d| !(*d >= S::zero() && *d <= S::one())) {
            return Err(DprError::param(format!(
                "disagreement {} at index {i} is outside [0, 1]",
                disagreement[i]
            )));
        }
        if disagreement.iter().all(|d| *d < S::lit(DEGENERATE_THRESHOLD)) {
            return Err(DprError::DegenerateTable {
                threshold: DEGENERATE_THRESHOLD,
            });
        }
        let total: S = disagreement.iter().copied().sum();
        let probs = disagreement.iter().map(|d| *d / total).collect();
        let table = Self {
            probs,
            marginal: total / S::from_usize_lossy(disagreement.len()),
            disagreement,
        };
        table.validate()?;
        Ok(table)
    }

    /// Every example equally likely; the table a constant disagreement yields.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_disagreements(vec![S::one(); n])
    }

    /// Checks nonnegativity, normalization (1e-9) and proportionality to the
    /// disagreements (1e-12).
    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.disagreement.len() {
            return Err(DprError::Consistency("probability and disagreement lengths differ".into()));
        }
        if self.probs.iter().any(|p| !(*p >= S::zero())) {
            return Err(DprError::Consistency("negative sampling probability".into()));
        }
        let sum: f64 = self.probs.iter().map(|p| p.to_f64_lossy()).sum();
        let tol = if std::mem::size_of::<S>() >= 8 { 1e-9 } else { 1e-5 };
        if (sum - 1.0).abs() > tol {
            return Err(DprError::Consistency(format!("sampling probabilities sum to {sum}")));
        }
        let total: f64 = self.disagreement.iter().map(|d| d.to_f64_lossy()).sum();
        let id_tol = if std::mem::size_of::<S>() >= 8 { 1e-12 } else { 1e-6 };
        for (p, d) in self.probs.iter().zip(&self.disagreement) {
            if (p.to_f64_lossy() - d.to_f64_lossy() / total).abs() > id_tol {
                return Err(DprError::Consistency(
                    "sampling probabilities are not proportional to disagreements".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    /// Estimated `p(y != y_bias)`, the mean disagreement.
    pub fn marginal(&self) -> S {
        self.marginal
    }

    pub fn disagreement(&self) -> &[S] {
        &self.disagreement
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Per-example loss weights `n * r_i`; averaging to one over the dataset.
    pub fn loss_weights(&self) -> Vec<S> {
        let n = S::from_usize_lossy(self.probs.len());
        self.probs.iter().map(|p| *p * n).collect()
    }
}

/// Builds the resampling table from a trained biased model.
pub fn compute_sampling_table<S: Scalar>(
    model: &ClassifierModel<S>,
    data: &BiasedDataset<S>,
    tau: S,
) -> Result<SamplingTable<S>> {
    SamplingTable::from_disagreements(disagreements(model, data, tau)?)
}

/// Inverse-CDF sampler over a fixed categorical distribution.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl CategoricalSampler {
    pub fn new<S: Scalar>(table: &SamplingTable<S>) -> Self {
        let mut acc = 0.0;
        let cumulative = table
            .probs()
            .iter()
            .map(|p| {
                acc += p.to_f64_lossy();
                acc
            })
            .collect();
        let last_positive = table
            .probs()
            .iter()
            .rposition(|p| *p > S::zero())
            .unwrap_or(0);
        Self {
            cumulative,
            last_positive,
        }
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.cumulative[self.cumulative.len() - 1];
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|c| *c <= u)
            .min(self.last_positive)
    }
}

/// `batch_size` independent draws with replacement, returned as indices into `train`.
pub fn sample_minibatch<S: Scalar, R: Rng + ?Sized>(
    table: &SamplingTable<S>,
    train: &BiasedDataset<S>,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if table.len() != train.len() {
        return Err(DprError::Consistency(format!(
            "table covers {} examples but the dataset has {}",
            table.len(),
            train.len()
        )));
    }
    let sampler = CategoricalSampler::new(table);
    Ok((0..batch_size).map(|_| sampler.sample(rng)).collect())
}
