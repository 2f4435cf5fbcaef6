use rand::Rng;

use crate::{DprError, Result, Scalar};

/// Nonlinearity applied between layers. The last layer emits raw logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Relu => v.max(S::zero()),
        }
    }
}

/// Affine map `W x + b` with `W` stored row-major as `rows × cols` (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S> {
    rows: usize,
    cols: usize,
    weights: Vec<S>,
    bias: Vec<S>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(rows: usize, cols: usize, weights: Vec<S>, bias: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DprError::shape("layer dimensions must be positive"));
        }
        if weights.len() != rows * cols {
            return Err(DprError::shape(format!(
                "weight buffer has {} entries, expected {rows}x{cols}",
                weights.len()
            )));
        }
        if bias.len() != rows {
            return Err(DprError::shape(format!(
                "bias has {} entries, expected {rows}",
                bias.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![S::zero(); rows * cols], vec![S::zero(); rows])
    }

    /// Output width.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Input width.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [S] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [S] {
        &mut self.bias
    }

    /// `out = W x + b`, visiting only the nonzero entries of `x` listed in `nz`.
    fn affine_sparse(&self, x: &[S], nz: &[usize], out: &mut [S]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for &c in nz {
                acc += row[c] * x[c];
            }
            *o = acc;
        }
    }
}

/// Dense feed-forward classifier producing `num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<S> {
    layers: Vec<DenseLayer<S>>,
    activation: Activation,
}

impl<S: Scalar> ClassifierModel<S> {
    pub fn new(layers: Vec<DenseLayer<S>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(DprError::shape("model needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].rows != pair[1].cols {
                return Err(DprError::shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].rows,
                    i + 1,
                    pair[1].cols
                )));
            }
        }
        let model = Self { layers, activation };
        if !model.is_finite() {
            return Err(DprError::param("model parameters must be finite"));
        }
        Ok(model)
    }

    /// All-zero parameters for the layer widths `dims = [input, hidden.., classes]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(DprError::shape("need at least input and output widths"));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::zeros(w[1], w[0]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, Activation::Relu)
    }

    /// Multilayer perceptron with weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        let mut model = Self::zeros(&dims)?;
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = S::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<S>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(DprError::shape(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for a single feature vector.
    pub fn forward(&self, x: &[S]) -> Result<Vec<S>> {
        let mut ws = Workspace::for_model(self);
        Ok(self.forward_with(x, &mut ws)?.to_vec())
    }

    /// Logits for a batch, one row per input.
    pub fn forward_batch<F: AsRef<[S]>>(&self, batch: &[F]) -> Result<Vec<Vec<S>>> {
        let mut ws = Workspace::for_model(self);
        batch
            .iter()
            .map(|x| self.forward_with(x.as_ref(), &mut ws).map(<[S]>::to_vec))
            .collect()
    }

    /// Forward pass that keeps every layer's output in `ws` for a later
    /// [`backward_with`](Self::backward_with). Returns the logits.
    pub fn forward_with<'w>(&self, x: &[S], ws: &'w mut Workspace<S>) -> Result<&'w [S]> {
        self.check_input(x)?;
        ws.ensure(self);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.outputs.split_at_mut(l);
            let input: &[S] = if l == 0 { x } else { &before[l - 1] };
            let nz = &mut ws.nonzero[l];
            nz.clear();
            nz.extend(
                input
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != S::zero())
                    .map(|(i, _)| i),
            );
            let out = &mut after[0];
            layer.affine_sparse(input, nz, out);
            if l != last {
                for v in out.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
        Ok(&ws.outputs[last])
    }

    /// Accumulates `scale * d(loss)/d(params)` into `grads`, given the loss
    /// gradient w.r.t. the logits. `ws` must hold the forward pass of `x`.
    pub fn backward_with(
        &self,
        x: &[S],
        dlogits: &[S],
        scale: S,
        ws: &mut Workspace<S>,
        grads: &mut GradientBuffer<S>,
    ) -> Result<()> {
        self.check_input(x)?;
        if dlogits.len() != self.num_classes() {
            return Err(DprError::shape("logit gradient has the wrong length"));
        }
        if !grads.is_congruent(self) {
            return Err(DprError::shape("gradient buffer does not match model"));
        }
        let last = self.layers.len() - 1;
        let delta = &mut ws.deltas[last];
        for (d, g) in delta.iter_mut().zip(dlogits) {
            *d = *g * scale;
        }
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let input: &[S] = if l == 0 { x } else { &ws.outputs[l - 1] };
            let nz = &ws.nonzero[l];
            let (below, here) = ws.deltas.split_at_mut(l);
            let delta = &here[0];
            let g = &mut grads.layers[l];
            for (r, &d) in delta.iter().enumerate() {
                g.bias[r] += d;
                if d == S::zero() {
                    continue;
                }
                let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                for &c in nz {
                    row[c] += d * input[c];
                }
            }
            if l > 0 {
                // ReLU derivative is 1 exactly where the stored output is positive,
                // which is the nonzero set recorded during the forward pass.
                let prev = &mut below[l - 1];
                prev.iter_mut().for_each(|v| *v = S::zero());
                for (r, &d) in delta.iter().enumerate() {
                    if d == S::zero() {
                        continue;
                    }
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    for &c in nz {
                        prev[c] += row[c] * d;
                    }
                }
            }
        }
        Ok(())
    }

    /// Index of the largest logit, ties broken towards the lowest index.
    pub fn predict(&self, x: &[S]) -> Result<usize> {
        Ok(super::argmax(&self.forward(x)?))
    }
}

/// Reusable per-layer buffers for the training hot path.
#[derive(Debug, Clone, Default)]
pub struct Workspace<S> {
    outputs: Vec<Vec<S>>,
    deltas: Vec<Vec<S>>,
    nonzero: Vec<Vec<usize>>,
}

impl<S: Scalar> Workspace<S> {
    pub fn for_model(model: &ClassifierModel<S>) -> Self {
        let mut ws = Self {
            outputs: Vec::new(),
            deltas: Vec::new(),
            nonzero: Vec::new(),
        };
        ws.ensure(model);
        ws
    }

    fn ensure(&mut self, model: &ClassifierModel<S>) {
        let fits = self.outputs.len() == model.layers.len()
            && self
                .outputs
                .iter()
                .zip(&model.layers)
                .all(|(o, l)| o.len() == l.rows);
        if !fits {
            self.outputs = model.layers.iter().map(|l| vec![S::zero(); l.rows]).collect();
            self.deltas = self.outputs.clone();
            self.nonzero = model
                .layers
                .iter()
                .map(|l| Vec::with_capacity(l.cols))
                .collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerGrad<S> {
    weights: Vec<S>,
    bias: Vec<S>,
}

/// Partial derivatives with the same shapes as a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<S> {
    layers: Vec<LayerGrad<S>>,
}

impl<S: Scalar> GradientBuffer<S> {
    pub fn zeros_like(model: &ClassifierModel<S>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![S::zero(); l.weights.len()],
                    bias: vec![S::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = S::zero());
            l.bias.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    pub fn is_congruent(&self, model: &ClassifierModel<S>) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weights(&self, layer: usize) -> &[S] {
        &self.layers[layer].weights
    }

    pub fn bias(&self, layer: usize) -> &[S] {
        &self.layers[layer].bias
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [S] {
        &mut self.layers[layer].weights
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [S] {
        &mut self.layers[layer].bias
    }

    pub(crate) fn pairs_mut(&mut self) -> impl Iterator<Item = (&mut [S], &mut [S])> {
        self.layers
            .iter_mut()
            .map(|l| (l.weights.as_mut_slice(), l.bias.as_mut_slice()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_model_gives_zero_logits() {
        let model = ClassifierModel::<f64>::zeros(&[4, 3, 5]).unwrap();
        assert_eq!(model.forward(&[0.3, -1.0, 2.0, 9.0]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let layer = DenseLayer::new(3, 3, w, vec![0.0; 3]).unwrap();
        let model = ClassifierModel::new(vec![layer], Activation::Relu).unwrap();
        let x = [0.25, -3.5, 7.0];
        assert_eq!(model.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn rejects_wrong_input_width() {
        let model = ClassifierModel::<f64>::zeros(&[4, 2]).unwrap();
        assert!(matches!(model.forward(&[1.0; 3]), Err(DprError::Shape(_))));
    }

    #[test]
    fn rejects_non_composing_layers() {
        let a = DenseLayer::<f64>::zeros(3, 2).unwrap();
        let b = DenseLayer::<f64>::zeros(2, 4).unwrap();
        assert!(ClassifierModel::new(vec![a, b], Activation::Relu).is_err());
    }

    #[test]
    fn two_layer_forward_matches_hand_arithmetic() {
        // 3 inputs -> 2 hidden -> 2 logits, evaluated with explicit loops.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = ClassifierModel::<f64>::mlp(3, &[2], 2, &mut rng).unwrap();
        let x = [0.4, -0.7, 1.3];
        let l0 = &model.layers()[0];
        let l1 = &model.layers()[1];
        let mut hidden = [0.0; 2];
        for r in 0..2 {
            let mut s = l0.bias()[r];
            for c in 0..3 {
                s += l0.weights()[r * 3 + c] * x[c];
            }
            hidden[r] = if s > 0.0 { s } else { 0.0 };
        }
        let mut expected = [0.0; 2];
        for r in 0..2 {
            let mut s = l1.bias()[r];
            for c in 0..2 {
                s += l1.weights()[r * 2 + c] * hidden[c];
            }
            expected[r] = s;
        }
        let got = model.forward(&x).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ClassifierModel::<f64>::mlp(5, &[4], 3, &mut rng).unwrap();
        let x = [0.2, 0.0, 0.9, 0.5, 0.0];
        let y = 1;
        let mut ws = Workspace::for_model(&model);
        let mut grads = GradientBuffer::zeros_like(&model);
        let logits = model.forward_with(&x, &mut ws).unwrap().to_vec();
        let (_, dl) = crate::nn::ce_loss_and_grad(&logits, y).unwrap();
        model.backward_with(&x, &dl, 1.0, &mut ws, &mut grads).unwrap();

        let h = 1e-6;
        let loss_at = |m: &ClassifierModel<f64>| {
            crate::nn::ce_loss(&m.forward(&x).unwrap(), y).unwrap()
        };
        for l in 0..2 {
            for i in 0..model.layers()[l].weights().len() {
                let mut plus = model.clone();
                plus.layers_mut()[l].weights_mut()[i] += h;
                let mut minus = model.clone();
                minus.layers_mut()[l].weights_mut()[i] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                assert!((fd - grads.weights(l)[i]).abs() < 1e-7, "layer {l} w{i}");
            }
            for i in 0..model.layers()[l].bias().len() {
                let mut plus = model.clone();
                plus.layers_mut()[l].bias_mut()[i] += h;
                let mut minus = model.clone();
                minus.layers_mut()[l].bias_mut()[i] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                assert!((fd - grads.bias(l)[i]).abs() < 1e-7, "layer {l} b{i}");
            }
        }
    }

    #[test]
    fn f32_model_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ClassifierModel::<f32>::mlp(6, &[8], 4, &mut rng).unwrap();
        let logits = model.forward(&[0.5f32; 6]).unwrap();
        assert_eq!(logits.len(), 4);
        assert!(logits.iter().all(|v| v.is_finite()));
    }
}
