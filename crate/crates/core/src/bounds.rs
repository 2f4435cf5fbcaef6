//! Empirical checks of the concentration bounds on the group min-max
//! objective.
//!
//! With losses capped at `C` and `|B| = 2` groups (aligned, conflicting):
//!
//! - gap bound: `|L_a - L_c| <= 2 max_b L̂_b + C max_b sqrt(8 ln(2/δ) / n_b)`
//! - average bound: `L_avg <= max_b L̂_b + C sqrt(2 ln(1/δ) / n)`
//!
//! where `L` are expected losses (approximated on a large population sample)
//! and `L̂` are training-set averages.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::BiasedDataset;
use crate::eval::group_losses;
use crate::nn::{ClassifierModel, LossKind};
use crate::{DprError, Result, Scalar};

/// Number of groups the bounds are stated over.
pub const NUM_GROUPS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem {
    /// Bound on the expected loss gap between groups.
    GroupGap,
    /// Bound on the expected average loss.
    AverageLoss,
}

impl Theorem {
    pub fn id(self) -> u8 {
        match self {
            Theorem::GroupGap => 1,
            Theorem::AverageLoss => 2,
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub lhs: f64,
    pub rhs: f64,
    /// `max_b L̂_b` on the training set, clipped at `cap`.
    pub max_group_train_loss: f64,
    pub concentration_term: f64,
    pub cap: f64,
    pub delta: f64,
    pub n: usize,
    /// Training `(aligned, conflicting)` group sizes.
    pub group_sizes: (usize, usize),
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloBoundStats {
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub delta: f64,
}

fn check_cap_delta(cap: f64, delta: f64) -> Result<()> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(DprError::param("loss cap C must be positive and finite"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DprError::param("confidence delta must lie in (0, 1)"));
    }
    Ok(())
}

/// `C * max_b sqrt(8 ln(|B|/δ) / n_b)` over the given group sizes.
pub fn group_gap_concentration(cap: f64, delta: f64, group_sizes: &[usize]) -> f64 {
    let smallest = group_sizes.iter().copied().min().unwrap_or(0) as f64;
    cap * (8.0 * (NUM_GROUPS / delta).ln() / smallest).sqrt()
}

/// `C * sqrt(2 ln(1/δ) / n)`.
pub fn average_loss_concentration(cap: f64, delta: f64, n: usize) -> f64 {
    cap * (2.0 * (1.0 / delta).ln() / n as f64).sqrt()
}

/// Per-group Hoeffding radius `C * sqrt(2 ln(|B|/δ) / n_b)`.
pub fn hoeffding_radius(cap: f64, delta: f64, n_b: usize) -> f64 {
    cap * (2.0 * (NUM_GROUPS / delta).ln() / n_b as f64).sqrt()
}

struct Evaluated {
    train_aligned: f64,
    train_conflicting: f64,
    sizes: (usize, usize),
    pop_aligned: f64,
    pop_conflicting: f64,
}

fn evaluate<S: Scalar>(
    model: &ClassifierModel<S>,
    train: &BiasedDataset<S>,
    population: &BiasedDataset<S>,
    cap: f64,
    delta: f64,
) -> Result<Evaluated> {
    check_cap_delta(cap, delta)?;
    let c = Some(S::lit(cap));
    let tm = group_losses(model, train, LossKind::CrossEntropy, c)?;
    let pm = group_losses(model, population, LossKind::CrossEntropy, c)?;
    let (Some(ta), Some(tc)) = (tm.aligned, tm.conflicting) else {
        return Err(DprError::Inconclusive("a training group is empty".into()));
    };
    let (Some(pa), Some(pc)) = (pm.aligned, pm.conflicting) else {
        return Err(DprError::Inconclusive("a population group is empty".into()));
    };
    Ok(Evaluated {
        train_aligned: ta.avg_loss.to_f64_lossy(),
        train_conflicting: tc.avg_loss.to_f64_lossy(),
        sizes: (ta.n, tc.n),
        pop_aligned: pa.avg_loss.to_f64_lossy(),
        pop_conflicting: pc.avg_loss.to_f64_lossy(),
    })
}

fn gap_report(ev: &Evaluated, cap: f64, delta: f64, n: usize) -> BoundReport {
    let max_group = ev.train_aligned.max(ev.train_conflicting);
    let conc = group_gap_concentration(cap, delta, &[ev.sizes.0, ev.sizes.1]);
    let lhs = (ev.pop_aligned - ev.pop_conflicting).abs();
    let rhs = 2.0 * max_group + conc;
    BoundReport {
        theorem: Theorem::GroupGap,
        lhs,
        rhs,
        max_group_train_loss: max_group,
        concentration_term: conc,
        cap,
        delta,
        n,
        group_sizes: ev.sizes,
        holds: lhs <= rhs,
    }
}

fn average_report(ev: &Evaluated, cap: f64, delta: f64, n: usize, rho: f64) -> BoundReport {
    let max_group = ev.train_aligned.max(ev.train_conflicting);
    let conc = average_loss_concentration(cap, delta, n);
    let lhs = (1.0 - rho) * ev.pop_aligned + rho * ev.pop_conflicting;
    let rhs = max_group + conc;
    BoundReport {
        theorem: Theorem::AverageLoss,
        lhs,
        rhs,
        max_group_train_loss: max_group,
        concentration_term: conc,
        cap,
        delta,
        n,
        group_sizes: ev.sizes,
        holds: lhs <= rhs,
    }
}

/// Gap bound. The population stands in for the group-conditional
/// distributions; its group means approximate `L_a` and `L_c`.
pub fn theorem1_report<S: Scalar>(
    model: &ClassifierModel<S>,
    train: &BiasedDataset<S>,
    population: &BiasedDataset<S>,
    cap: f64,
    delta: f64,
) -> Result<BoundReport> {
    let ev = evaluate(model, train, population, cap, delta)?;
    Ok(gap_report(&ev, cap, delta, train.len()))
}

/// Average-loss bound. The expected loss under the training distribution is
/// the group mixture `(1 - rho) L_a + rho L_c` with `rho = train.rho()`.
pub fn theorem2_report<S: Scalar>(
    model: &ClassifierModel<S>,
    train: &BiasedDataset<S>,
    population: &BiasedDataset<S>,
    cap: f64,
    delta: f64,
) -> Result<BoundReport> {
    let ev = evaluate(model, train, population, cap, delta)?;
    Ok(average_report(&ev, cap, delta, train.len(), train.rho()))
}

/// Both reports for every `delta` at one cap, evaluating the model once.
/// Ordered by delta, gap bound first.
pub fn bound_reports<S: Scalar>(
    model: &ClassifierModel<S>,
    train: &BiasedDataset<S>,
    population: &BiasedDataset<S>,
    cap: f64,
    deltas: &[f64],
) -> Result<Vec<BoundReport>> {
    let Some(&first) = deltas.first() else {
        return Ok(Vec::new());
    };
    for &d in deltas {
        check_cap_delta(cap, d)?;
    }
    let ev = evaluate(model, train, population, cap, first)?;
    Ok(deltas
        .iter()
        .flat_map(|&d| {
            [
                gap_report(&ev, cap, d, train.len()),
                average_report(&ev, cap, d, train.len(), train.rho()),
            ]
        })
        .collect())
}

/// Monte-Carlo frequency with which a size-`n_b` resample mean of `values`
/// strays from the population mean by more than the Hoeffding radius.
pub fn hoeffding_violation_rate(
    values: &[f64],
    n_b: usize,
    cap: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloBoundStats> {
    check_cap_delta(cap, delta)?;
    if values.is_empty() || n_b == 0 {
        return Err(DprError::param("need a nonempty population and sample size"));
    }
    if trials < 1000 {
        return Err(DprError::param("at least 1000 trials are required"));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= cap)) {
        return Err(DprError::Precondition(format!("value {v} lies outside [0, {cap}]")));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let radius = hoeffding_radius(cap, delta, n_b);
    let violations = (0..trials)
        .filter(|&t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let s: f64 = (0..n_b).map(|_| values[rng.random_range(0..values.len())]).sum();
            (s / n_b as f64 - mean).abs() > radius
        })
        .count();
    Ok(MonteCarloBoundStats {
        trials,
        violations,
        violation_rate: violations as f64 / trials as f64,
        delta,
    })
}

/// `(x + y)/2 + |x - y|/2`, generic so it can run on exact rationals.
pub fn max_via_midpoint<T>(x: T, y: T) -> T
where
    T: Signed + Clone + FromPrimitive,
{
    let two = T::from_u8(2).expect("2 is representable");
    (x.clone() + y.clone()) / two.clone() + (x - y).abs() / two
}

/// Checks the midpoint identity for `max` in exact rational arithmetic and
/// returns the (exactly representable) maximum.
pub fn max_identity_check(x: f64, y: f64) -> Result<f64> {
    let (Some(rx), Some(ry)) = (BigRational::from_float(x), BigRational::from_float(y)) else {
        return Err(DprError::param("max identity needs finite inputs"));
    };
    let via = max_via_midpoint(rx.clone(), ry.clone());
    let direct = if rx >= ry { rx } else { ry };
    assert_eq!(via, direct, "midpoint identity failed for ({x}, {y})");
    assert!(via.denom() != &BigInt::from(0));
    Ok(via.to_f64().expect("maximum of two finite f64 values is an f64"))
}
