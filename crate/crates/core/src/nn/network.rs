use super::layer::LayerGrad;
use super::{Layer, LayerKind, Matrix, NnError, Result, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    Mse,
    CrossEntropy,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::Mse => "mse",
            Loss::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mse" => Some(Loss::Mse),
            "cross_entropy" => Some(Loss::CrossEntropy),
            _ => None,
        }
    }
}

/// Sequential network `M(X) = L_n(...L_1(X))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    loss: Loss,
}

/// Activations recorded by a forward pass; `values[0]` is the input and
/// `values[j + 1]` the output of layer `j`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub values: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.values.last().expect("trace holds at least the input")
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>, loss: Loss) -> Result<Self> {
        let net = Self { layers, loss };
        net.validate()?;
        Ok(net)
    }

    /// `Linear-ReLU-...-Linear` with Xavier-uniform initialization from
    /// `seed`; cross-entropy networks get a trailing softmax.
    pub fn mlp(input_dim: usize, hidden: &[usize], out_dim: usize, loss: Loss, seed: u64) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::linear(prev, h));
            layers.push(Layer::relu());
            prev = h;
        }
        layers.push(Layer::linear(prev, out_dim));
        if loss == Loss::CrossEntropy {
            layers.push(Layer::softmax());
        }
        let mut net = Self::new(layers, loss)?;
        net.init(seed);
        Ok(net)
    }

    /// Re-initializes every parameterized layer from `seed`, in layer order.
    pub fn init(&mut self, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        for l in &mut self.layers {
            l.init_xavier(&mut rng);
        }
    }

    fn validate(&self) -> Result<()> {
        let mut dim: Option<usize> = None;
        let mut saw_linear = false;
        for l in &self.layers {
            if l.is_parameterized() {
                if let Some(d) = dim {
                    if d != l.in_dim() {
                        return Err(NnError::DimMismatch { expected: d, actual: l.in_dim() });
                    }
                }
                if l.in_dim() == 0 || l.out_dim() == 0 {
                    return Err(NnError::InvalidNetwork("linear layer with zero dimension".into()));
                }
                dim = Some(l.out_dim());
                saw_linear = true;
            }
        }
        if !saw_linear {
            return Err(NnError::InvalidNetwork("no parameterized layer".into()));
        }
        let out = dim.unwrap_or(0);
        match self.loss {
            Loss::Mse if out != 1 => Err(NnError::InvalidNetwork(format!("mse needs output dim 1, got {out}"))),
            Loss::CrossEntropy => {
                if self.layers.last().map(Layer::kind) != Some(LayerKind::Softmax) {
                    return Err(NnError::InvalidNetwork("cross entropy needs a final softmax".into()));
                }
                if out < 2 {
                    return Err(NnError::InvalidNetwork("cross entropy needs at least 2 classes".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.layers.iter().find(|l| l.is_parameterized()).map_or(0, Layer::in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().rev().find(|l| l.is_parameterized()).map_or(0, Layer::out_dim)
    }

    /// Dimensions `[in, h1, ..., out]` of the parameterized layers.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().filter(|l| l.is_parameterized()).map(Layer::out_dim));
        dims
    }

    pub fn parameterized_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_parameterized()).count()
    }

    /// Number of trailing layers starting at the last parameterized one.
    pub fn last_param_suffix_len(&self) -> usize {
        let pos = self.layers.iter().rposition(Layer::is_parameterized).unwrap_or(0);
        self.layers.len() - pos
    }

    /// Freezes the first `k` parameterized layers and unfreezes the rest.
    pub fn freeze_prefix(&mut self, k: usize) -> Result<()> {
        let parameterized = self.parameterized_count();
        if k >= parameterized {
            return Err(NnError::OutOfRange { k, parameterized });
        }
        let mut seen = 0;
        for l in &mut self.layers {
            if l.is_parameterized() {
                l.set_frozen(seen < k);
                seen += 1;
            }
        }
        Ok(())
    }

    /// Freezes every layer before position `start` (in layer order, counting
    /// activations) and unfreezes the rest.
    pub fn freeze_before(&mut self, start: usize) {
        for (j, l) in self.layers.iter_mut().enumerate() {
            l.set_frozen(j < start);
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.layers.iter_mut().for_each(|l| l.set_frozen(false));
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for l in &self.layers {
            x = l.forward(&x)?;
        }
        Ok(x)
    }

    pub fn trace(&self, batch: &Matrix) -> Result<Trace> {
        self.check_input(batch)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(batch.clone());
        for l in &self.layers {
            let next = l.forward(values.last().expect("non-empty"))?;
            values.push(next);
        }
        Ok(Trace { values })
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(NnError::DimMismatch { expected: self.input_dim(), actual: batch.cols() });
        }
        Ok(())
    }

    /// Back-propagates `grad` w.r.t. the output of layer `end - 1` through
    /// layers `0..end`. Returns the input gradient (if requested) and one
    /// gradient per layer (empty for frozen or activation layers).
    pub fn backward_from(
        &self,
        trace: &Trace,
        end: usize,
        grad: Matrix,
        want_input: bool,
    ) -> (Option<Matrix>, Vec<LayerGrad>) {
        let mut grads = vec![LayerGrad::default(); self.layers.len()];
        let first_trainable = self.layers.iter().position(|l| l.is_parameterized() && !l.is_frozen());
        let stop = if want_input { 0 } else { first_trainable.unwrap_or(end) };
        let mut g = grad;
        for j in (stop..end).rev() {
            let l = &self.layers[j];
            let need_input = j > stop || want_input;
            let (dx, pg) = l.backward(
                &trace.values[j],
                &trace.values[j + 1],
                &g,
                l.is_parameterized() && !l.is_frozen(),
                need_input,
            );
            grads[j] = pg;
            match dx {
                Some(dx) => g = dx,
                None => return (None, grads),
            }
        }
        (if want_input { Some(g) } else { None }, grads)
    }

    /// Full backward pass with `grad` w.r.t. the network output.
    pub fn backward(&self, trace: &Trace, grad: Matrix, want_input: bool) -> (Option<Matrix>, Vec<LayerGrad>) {
        self.backward_from(trace, self.layers.len(), grad, want_input)
    }

    /// Applies `w -= lr * dw` to every unfrozen parameterized layer.
    pub fn apply_grads(&mut self, grads: &[LayerGrad], lr: f32) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.apply(g, lr);
        }
    }

    /// Loss of the network on `(batch, labels)` without updating it.
    pub fn evaluate(&self, batch: &Matrix, labels: &[f32]) -> Result<f32> {
        let trace = self.trace(batch)?;
        self.loss_value(&trace, labels)
    }

    fn loss_value(&self, trace: &Trace, labels: &[f32]) -> Result<f32> {
        let n = trace.output().rows();
        if labels.len() != n {
            return Err(NnError::DimMismatch { expected: n, actual: labels.len() });
        }
        if n == 0 {
            return Ok(0.0);
        }
        let loss = match self.loss {
            Loss::Mse => {
                let out = trace.output();
                let mut acc = 0.0f64;
                for (r, &t) in labels.iter().enumerate() {
                    let d = (out.get(r, 0) - t) as f64;
                    acc += d * d;
                }
                acc / n as f64
            }
            Loss::CrossEntropy => {
                // Log-sum-exp over the logits feeding the final softmax.
                let logits = &trace.values[trace.values.len() - 2];
                let classes = logits.cols();
                let mut acc = 0.0f64;
                for (r, &t) in labels.iter().enumerate() {
                    let c = class_index(t, classes)?;
                    let row = logits.row(r);
                    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                    let lse = row.iter().map(|&z| (z as f64 - max).exp()).sum::<f64>().ln() + max;
                    acc += lse - row[c] as f64;
                }
                acc / n as f64
            }
        };
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss);
        }
        Ok(loss as f32)
    }

    /// Gradient of the mean loss w.r.t. the network output, or w.r.t. the
    /// softmax input for cross-entropy (the fused form). Returns the gradient
    /// and the layer count it applies below.
    fn loss_grad(&self, trace: &Trace, labels: &[f32]) -> Result<(Matrix, usize)> {
        let out = trace.output();
        let n = out.rows() as f32;
        match self.loss {
            Loss::Mse => {
                let mut g = Matrix::zeros(out.rows(), 1);
                for (r, &t) in labels.iter().enumerate() {
                    g.set(r, 0, 2.0 * (out.get(r, 0) - t) / n);
                }
                Ok((g, self.layers.len()))
            }
            Loss::CrossEntropy => {
                let classes = out.cols();
                let mut g = out.clone();
                for (r, &t) in labels.iter().enumerate() {
                    let c = class_index(t, classes)?;
                    let row = g.row_mut(r);
                    row[c] -= 1.0;
                    row.iter_mut().for_each(|v| *v /= n);
                }
                Ok((g, self.layers.len() - 1))
            }
        }
    }

    /// One SGD step. Returns the loss before the update; on a non-finite loss
    /// the parameters are left untouched.
    pub fn train_step(&mut self, batch: &Matrix, labels: &[f32], lr: f32) -> Result<f32> {
        let trace = self.trace(batch)?;
        let loss = self.loss_value(&trace, labels)?;
        if batch.rows() == 0 {
            return Ok(loss);
        }
        let (g, end) = self.loss_grad(&trace, labels)?;
        let (_, grads) = self.backward_from(&trace, end, g, false);
        self.apply_grads(&grads, lr);
        Ok(loss)
    }

    /// Gradients of the mean loss for every layer (test and tooling aid).
    pub fn gradients(&self, batch: &Matrix, labels: &[f32]) -> Result<Vec<LayerGrad>> {
        let trace = self.trace(batch)?;
        self.loss_value(&trace, labels)?;
        let (g, end) = self.loss_grad(&trace, labels)?;
        Ok(self.backward_from(&trace, end, g, false).1)
    }
}

fn class_index(label: f32, classes: usize) -> Result<usize> {
    if label < 0.0 || label.fract() != 0.0 || label as usize >= classes {
        return Err(NnError::BadLabel { label, classes });
    }
    Ok(label as usize)
}
