use crate::{DprError, Result, Scalar};

/// Lower clamp on `p_y` before it is raised to the power `q` in the
/// generalized cross-entropy.
pub const GCE_PROB_FLOOR: f64 = 1e-12;

/// Training loss selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    /// `(1 - p_y^q) / q`, `q` in `(0, 1]`.
    Generalized { q: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::CrossEntropy => Ok(()),
            LossKind::Generalized { q } => check_q(q),
        }
    }

    /// Loss value and gradient w.r.t. the logits, written into `grad`.
    pub fn loss_and_grad_into<S: Scalar>(&self, logits: &[S], y: usize, grad: &mut [S]) -> Result<S> {
        match *self {
            LossKind::CrossEntropy => ce_loss_and_grad_into(logits, y, grad),
            LossKind::Generalized { q } => gce_loss_and_grad_into(logits, y, S::lit(q), grad),
        }
    }

    pub fn loss<S: Scalar>(&self, logits: &[S], y: usize) -> Result<S> {
        let mut grad = vec![S::zero(); logits.len()];
        self.loss_and_grad_into(logits, y, &mut grad)
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(DprError::param(format!("GCE q must lie in (0, 1], got {q}")))
    }
}

fn check_class(y: usize, classes: usize) -> Result<()> {
    if y < classes {
        Ok(())
    } else {
        Err(DprError::Index { index: y, classes })
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Writes `softmax(logits / tau)` into `out` using max subtraction.
fn softmax_into<S: Scalar>(logits: &[S], tau: S, out: &mut [S]) {
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut z = S::zero();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = ((*l - m) / tau).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Temperature-scaled softmax `exp(z_k / tau) / sum_j exp(z_j / tau)`.
pub fn softmax_with_temperature<S: Scalar>(logits: &[S], tau: S) -> Result<Vec<S>> {
    if !(tau > S::zero()) || !tau.is_finite() {
        return Err(DprError::param(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(DprError::shape("softmax of an empty logit vector"));
    }
    let mut out = vec![S::zero(); logits.len()];
    softmax_into(logits, tau, &mut out);
    Ok(out)
}

/// Cross-entropy `-z_y + log sum exp z`; the gradient `softmax(z) - e_y` goes into `grad`.
pub fn ce_loss_and_grad_into<S: Scalar>(logits: &[S], y: usize, grad: &mut [S]) -> Result<S> {
    check_class(y, logits.len())?;
    if grad.len() != logits.len() {
        return Err(DprError::shape("gradient buffer length differs from logits"));
    }
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut z = S::zero();
    for (g, l) in grad.iter_mut().zip(logits) {
        *g = (*l - m).exp();
        z += *g;
    }
    for g in grad.iter_mut() {
        *g /= z;
    }
    grad[y] -= S::one();
    let loss = m + z.ln() - logits[y];
    Ok(loss.max(S::zero()))
}

pub fn ce_loss_and_grad<S: Scalar>(logits: &[S], y: usize) -> Result<(S, Vec<S>)> {
    let mut grad = vec![S::zero(); logits.len()];
    let loss = ce_loss_and_grad_into(logits, y, &mut grad)?;
    Ok((loss, grad))
}

pub fn ce_loss<S: Scalar>(logits: &[S], y: usize) -> Result<S> {
    LossKind::CrossEntropy.loss(logits, y)
}

/// Generalized cross-entropy `(1 - p_y^q) / q` at unit temperature. The
/// gradient is the cross-entropy gradient scaled by `p_y^q`.
pub fn gce_loss_and_grad_into<S: Scalar>(logits: &[S], y: usize, q: S, grad: &mut [S]) -> Result<S> {
    check_q(q.to_f64_lossy())?;
    check_class(y, logits.len())?;
    if grad.len() != logits.len() {
        return Err(DprError::shape("gradient buffer length differs from logits"));
    }
    softmax_into(logits, S::one(), grad);
    let p_y = grad[y].max(S::lit(GCE_PROB_FLOOR)).min(S::one());
    let weight = p_y.powf(q);
    grad[y] -= S::one();
    for g in grad.iter_mut() {
        *g *= weight;
    }
    Ok(((S::one() - weight) / q).max(S::zero()))
}

pub fn gce_loss_and_grad<S: Scalar>(logits: &[S], y: usize, q: S) -> Result<(S, Vec<S>)> {
    let mut grad = vec![S::zero(); logits.len()];
    let loss = gce_loss_and_grad_into(logits, y, q, &mut grad)?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        for tau in [0.01, 1.0, 50.0] {
            let p = softmax_with_temperature(&[0.0f64; 4], tau).unwrap();
            assert!(p.iter().all(|v| (*v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn softmax_ln3_example() {
        let p = softmax_with_temperature(&[3f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_scalar_evaluation_with_temperature() {
        let p = softmax_with_temperature(&[2.0f64, 1.0, 0.0], 2.0).unwrap();
        let e = [1f64.exp(), 0.5f64.exp(), 1.0];
        let z: f64 = e.iter().sum();
        for (a, b) in p.iter().zip(e) {
            assert!((a - b / z).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        assert!(matches!(
            softmax_with_temperature(&[1.0f64], 0.0),
            Err(DprError::Parameter(_))
        ));
        assert!(softmax_with_temperature(&[1.0f64], -2.0).is_err());
    }

    #[test]
    fn ce_uniform_case() {
        let (loss, grad) = ce_loss_and_grad(&[0.0f64, 0.0], 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((grad[0] + 0.5).abs() < 1e-15);
        assert!((grad[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ce_saturated_case() {
        let (loss, grad) = ce_loss_and_grad(&[30.0f64, -30.0], 0).unwrap();
        assert!(loss < 1e-20);
        assert!(grad.iter().all(|g| g.abs() < 1e-20));
    }

    #[test]
    fn ce_rejects_out_of_range_class() {
        assert!(matches!(
            ce_loss_and_grad(&[0.0f64, 0.0], 2),
            Err(DprError::Index { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn gce_q1_is_one_minus_p() {
        // logits forcing p_y = 0.25
        let logits = [0.0f64, 3f64.ln()];
        let (loss, _) = gce_loss_and_grad(&logits, 0, 1.0).unwrap();
        assert!((loss - 0.75).abs() < 1e-15);
    }

    #[test]
    fn gce_saturated_case() {
        let (loss, grad) = gce_loss_and_grad(&[40.0f64, -40.0, -40.0], 0, 0.7).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(grad.iter().all(|g| g.abs() < 1e-30));
    }

    #[test]
    fn gce_rejects_bad_q() {
        for q in [0.0, -0.1, 1.5] {
            assert!(matches!(
                gce_loss_and_grad(&[0.0f64, 1.0], 0, q),
                Err(DprError::Parameter(_))
            ));
        }
    }

    #[test]
    fn gce_floor_keeps_gradient_finite() {
        let (loss, grad) = gce_loss_and_grad(&[-800.0f64, 800.0], 0, 0.3).unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0f64; 5]), 0);
    }
}
