use crate::{DprError, Result, Scalar};

use super::{ClassifierModel, GradientBuffer};

/// Multiply the learning rate by `factor` every `period` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub factor: f64,
    pub period: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: Option<StepDecay>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 1e-3,
            lr_decay: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(DprError::param("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DprError::param("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(DprError::param("weight decay must be nonnegative"));
        }
        if let Some(d) = self.lr_decay {
            if d.period == 0 || !(d.factor > 0.0) {
                return Err(DprError::param("lr decay needs a positive factor and period"));
            }
        }
        Ok(())
    }

    /// Learning rate in effect at `step` (0-based).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.learning_rate * d.factor.powi((step / d.period) as i32),
            None => self.learning_rate,
        }
    }
}

/// Hyperparameters plus the momentum buffers of one model.
#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    config: SgdConfig,
    velocity: GradientBuffer<S>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(config: SgdConfig, model: &ClassifierModel<S>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: GradientBuffer::zeros_like(model),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn velocity(&self) -> &GradientBuffer<S> {
        &self.velocity
    }
}

/// One momentum SGD update:
/// `v <- momentum * v + g + weight_decay * p`, then `p <- p - lr_t * v`.
pub fn sgd_step<S: Scalar>(
    model: &mut ClassifierModel<S>,
    grads: &GradientBuffer<S>,
    state: &mut OptimizerState<S>,
    step: usize,
) -> Result<()> {
    if !grads.is_congruent(model) || !state.velocity.is_congruent(model) {
        return Err(DprError::shape("gradient or velocity buffers do not match model"));
    }
    if !grads.is_finite() {
        return Err(DprError::Training {
            step,
            reason: "non-finite gradient".into(),
        });
    }
    let lr = S::lit(state.config.learning_rate_at(step));
    let momentum = S::lit(state.config.momentum);
    let decay = S::lit(state.config.weight_decay);
    for (l, (vw, vb)) in state.velocity.pairs_mut().enumerate() {
        let layer = &mut model.layers_mut()[l];
        let (gw, gb) = (grads.weights(l), grads.bias(l));
        for ((p, v), g) in layer.weights_mut().iter_mut().zip(vw.iter_mut()).zip(gw) {
            *v = momentum * *v + *g + decay * *p;
            *p -= lr * *v;
        }
        for ((p, v), g) in layer.bias_mut().iter_mut().zip(vb.iter_mut()).zip(gb) {
            *v = momentum * *v + *g + decay * *p;
            *p -= lr * *v;
        }
    }
    if !model.is_finite() {
        return Err(DprError::Training {
            step,
            reason: "parameters became non-finite".into(),
        });
    }
    Ok(())
}
