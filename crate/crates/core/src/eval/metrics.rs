use std::collections::BTreeMap;

use crate::data::BiasedDataset;
use crate::nn::{argmax, ClassifierModel, LossKind, Workspace};
use crate::{DprError, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat<S> {
    pub n: usize,
    pub avg_loss: S,
    pub accuracy: S,
}

/// Per-group statistics over the bias-aligned and bias-conflicting groups.
/// A group with no members is `None`, never zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics<S> {
    pub aligned: Option<GroupStat<S>>,
    pub conflicting: Option<GroupStat<S>>,
    pub n: usize,
    pub avg_loss: S,
    pub max_group_loss: S,
    /// `|L_aligned - L_conflicting|`, present when both groups are.
    pub loss_gap: Option<S>,
    /// Overall argmax accuracy.
    pub unbiased_accuracy: S,
    /// Minimum accuracy over nonempty (label, bias labels) cells.
    pub worst_group_accuracy: S,
}

impl<S: Scalar> GroupMetrics<S> {
    /// `sum_b (n_b / n) L_b`, which equals `avg_loss` up to rounding.
    pub fn mixture_loss(&self) -> S {
        let n = S::from_usize_lossy(self.n);
        [&self.aligned, &self.conflicting]
            .into_iter()
            .flatten()
            .map(|g| S::from_usize_lossy(g.n) / n * g.avg_loss)
            .sum()
    }
}

#[derive(Default)]
struct Acc {
    n: usize,
    loss: f64,
    correct: usize,
}

/// Single pass over `data` computing (clipped) group losses and accuracies.
/// Predictions break ties towards the lowest class index.
pub fn group_losses<S: Scalar>(
    model: &ClassifierModel<S>,
    data: &BiasedDataset<S>,
    loss_kind: LossKind,
    loss_cap: Option<S>,
) -> Result<GroupMetrics<S>> {
    if data.is_empty() {
        return Err(DprError::param("group metrics of an empty dataset"));
    }
    loss_kind.validate()?;
    if let Some(c) = loss_cap {
        if !(c > S::zero()) {
            return Err(DprError::param("loss cap must be positive"));
        }
    }
    let mut ws = Workspace::for_model(model);
    let mut groups = [Acc::default(), Acc::default()];
    let mut cells: BTreeMap<(usize, Vec<usize>), (usize, usize)> = BTreeMap::new();
    for e in data.examples() {
        let logits = model.forward_with(&e.features, &mut ws)?;
        let mut loss = loss_kind.loss(logits, e.y)?;
        if let Some(c) = loss_cap {
            loss = loss.min(c);
        }
        let hit = argmax(logits) == e.y;
        let g = &mut groups[usize::from(e.is_conflicting())];
        g.n += 1;
        g.loss += loss.to_f64_lossy();
        g.correct += usize::from(hit);
        let cell = cells.entry((e.y, e.bias_labels.clone())).or_default();
        cell.0 += 1;
        cell.1 += usize::from(hit);
    }
    let stat = |a: &Acc| {
        (a.n > 0).then(|| GroupStat {
            n: a.n,
            avg_loss: S::lit(a.loss / a.n as f64),
            accuracy: S::lit(a.correct as f64 / a.n as f64),
        })
    };
    let aligned = stat(&groups[0]);
    let conflicting = stat(&groups[1]);
    let n = data.len();
    let total_loss = groups[0].loss + groups[1].loss;
    let correct = groups[0].correct + groups[1].correct;
    let max_group_loss = [&aligned, &conflicting]
        .into_iter()
        .flatten()
        .map(|g| g.avg_loss)
        .fold(S::neg_infinity(), S::max);
    let loss_gap = match (&aligned, &conflicting) {
        (Some(a), Some(c)) => Some((a.avg_loss - c.avg_loss).abs()),
        _ => None,
    };
    let worst = cells
        .values()
        .map(|(count, hits)| *hits as f64 / *count as f64)
        .fold(f64::INFINITY, f64::min);
    Ok(GroupMetrics {
        aligned,
        conflicting,
        n,
        avg_loss: S::lit(total_loss / n as f64),
        max_group_loss,
        loss_gap,
        unbiased_accuracy: S::lit(correct as f64 / n as f64),
        worst_group_accuracy: S::lit(worst),
    })
}

/// Overall argmax accuracy on an evaluation set.
pub fn unbiased_accuracy<S: Scalar>(model: &ClassifierModel<S>, test: &BiasedDataset<S>) -> Result<S> {
    if test.is_empty() {
        return Err(DprError::param("accuracy of an empty dataset"));
    }
    let mut ws = Workspace::for_model(model);
    let mut correct = 0usize;
    for e in test.examples() {
        correct += usize::from(argmax(model.forward_with(&e.features, &mut ws)?) == e.y);
    }
    Ok(S::lit(correct as f64 / test.len() as f64))
}

/// Minimum accuracy over the nonempty (label, bias labels) cells.
pub fn worst_group_accuracy<S: Scalar>(model: &ClassifierModel<S>, test: &BiasedDataset<S>) -> Result<S> {
    if test.is_empty() {
        return Err(DprError::param("every (label, bias) cell is empty"));
    }
    Ok(group_losses(model, test, LossKind::CrossEntropy, None)?.worst_group_accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionStatus {
    /// Aligned loss strictly below conflicting loss.
    Holds,
    Violated,
    /// One of the groups is empty.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck<S> {
    pub status: AssumptionStatus,
    pub aligned_loss: Option<S>,
    pub conflicting_loss: Option<S>,
}

impl<S: Scalar> AssumptionCheck<S> {
    pub fn holds(&self) -> bool {
        self.status == AssumptionStatus::Holds
    }

    /// `L_conflicting - L_aligned` when both groups are present.
    pub fn gap(&self) -> Option<S> {
        Some(self.conflicting_loss? - self.aligned_loss?)
    }
}

/// Whether the model's cross-entropy on the conflicting group strictly
/// exceeds its loss on the aligned group.
pub fn check_assumption1<S: Scalar>(model: &ClassifierModel<S>, train: &BiasedDataset<S>) -> Result<AssumptionCheck<S>> {
    let m = group_losses(model, train, LossKind::CrossEntropy, None)?;
    let aligned_loss = m.aligned.as_ref().map(|g| g.avg_loss);
    let conflicting_loss = m.conflicting.as_ref().map(|g| g.avg_loss);
    let status = match (aligned_loss, conflicting_loss) {
        (Some(a), Some(c)) if a < c => AssumptionStatus::Holds,
        (Some(_), Some(_)) => AssumptionStatus::Violated,
        _ => AssumptionStatus::Inconclusive,
    };
    Ok(AssumptionCheck {
        status,
        aligned_loss,
        conflicting_loss,
    })
}
