use crate::data::BiasedDataset;
use crate::nn::{ce_loss, ClassifierModel, Workspace};
use crate::{DprError, Result, Scalar};

/// `sum_i w_i * CE(f(x_i), y_i)`.
pub fn weighted_group_objective<S: Scalar>(
    model: &ClassifierModel<S>,
    data: &BiasedDataset<S>,
    weights: &[S],
) -> Result<S> {
    if weights.len() != data.len() {
        return Err(DprError::Consistency(format!(
            "{} weights for {} examples",
            weights.len(),
            data.len()
        )));
    }
    let mut ws = Workspace::for_model(model);
    let mut total = S::zero();
    for (e, w) in data.examples().iter().zip(weights) {
        let logits = model.forward_with(&e.features, &mut ws)?;
        total += *w * ce_loss(logits, e.y)?;
    }
    Ok(total)
}

/// Weights `(1/n) * p(b = conflicting | x) / p(b = conflicting)` built from
/// the true bias flags: `1 / n_conflicting` on conflicting examples, zero
/// elsewhere.
pub fn oracle_weights<S: Scalar>(data: &BiasedDataset<S>) -> Result<Vec<S>> {
    let n = data.len();
    let (_, n_conflicting) = data.group_sizes();
    if n_conflicting == 0 {
        return Err(DprError::Inconclusive("no bias-conflicting examples".into()));
    }
    let inv_n = S::one() / S::from_usize_lossy(n);
    let prior = S::from_usize_lossy(n_conflicting) / S::from_usize_lossy(n);
    Ok(data
        .examples()
        .iter()
        .map(|e| {
            let posterior = if e.is_conflicting() { S::one() } else { S::zero() };
            inv_n * posterior / prior
        })
        .collect())
}
