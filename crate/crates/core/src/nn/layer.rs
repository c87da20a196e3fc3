use super::{Matrix, NnError, Result, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Linear,
    Relu,
    Sigmoid,
    Softmax,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Linear => 0,
            LayerKind::Relu => 1,
            LayerKind::Sigmoid => 2,
            LayerKind::Softmax => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Linear,
            1 => LayerKind::Relu,
            2 => LayerKind::Sigmoid,
            3 => LayerKind::Softmax,
            _ => return None,
        })
    }
}

/// One layer of a sequential network. Activation layers carry no parameters
/// and report zero dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    kind: LayerKind,
    out_dim: usize,
    in_dim: usize,
    /// `out_dim x in_dim`, row-major.
    weights: Vec<f32>,
    bias: Vec<f32>,
    frozen: bool,
}

/// Parameter gradients for one layer; empty for activations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind: LayerKind::Linear,
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            frozen: false,
        }
    }

    pub fn linear_with(in_dim: usize, out_dim: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(NnError::DimMismatch { expected: in_dim * out_dim, actual: weights.len() });
        }
        if bias.len() != out_dim {
            return Err(NnError::DimMismatch { expected: out_dim, actual: bias.len() });
        }
        Ok(Self { kind: LayerKind::Linear, out_dim, in_dim, weights, bias, frozen: false })
    }

    pub fn activation(kind: LayerKind) -> Self {
        assert!(kind != LayerKind::Linear, "linear layers need dimensions");
        Self { kind, out_dim: 0, in_dim: 0, weights: Vec::new(), bias: Vec::new(), frozen: false }
    }

    pub fn relu() -> Self {
        Self::activation(LayerKind::Relu)
    }

    pub fn sigmoid() -> Self {
        Self::activation(LayerKind::Sigmoid)
    }

    pub fn softmax() -> Self {
        Self::activation(LayerKind::Softmax)
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    pub fn is_parameterized(&self) -> bool {
        self.kind == LayerKind::Linear
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Xavier-uniform weights, zero bias. Weights are drawn row-major.
    pub fn init_xavier(&mut self, rng: &mut SplitMix64) {
        if !self.is_parameterized() {
            return;
        }
        let limit = (6.0f64 / (self.in_dim + self.out_dim) as f64).sqrt() as f32;
        for w in &mut self.weights {
            let u = rng.next_f32();
            *w = (2.0 * u - 1.0) * limit;
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub(crate) fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match self.kind {
            LayerKind::Linear => {
                if x.cols() != self.in_dim {
                    return Err(NnError::DimMismatch { expected: self.in_dim, actual: x.cols() });
                }
                let mut out = Matrix::zeros(x.rows(), self.out_dim);
                for r in 0..x.rows() {
                    let xr = x.row(r);
                    let yr = out.row_mut(r);
                    for (o, y) in yr.iter_mut().enumerate() {
                        let wr = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                        let mut acc = 0.0f32;
                        for (w, xv) in wr.iter().zip(xr) {
                            acc += w * xv;
                        }
                        *y = acc + self.bias[o];
                    }
                }
                Ok(out)
            }
            LayerKind::Relu => {
                let mut out = x.clone();
                out.data_mut().iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0
                    }
                });
                Ok(out)
            }
            LayerKind::Sigmoid => {
                let mut out = x.clone();
                out.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
                Ok(out)
            }
            LayerKind::Softmax => {
                let mut out = x.clone();
                for r in 0..out.rows() {
                    softmax_in_place(out.row_mut(r));
                }
                Ok(out)
            }
        }
    }

    /// Back-propagates `grad` (w.r.t. this layer's output). `input` and
    /// `output` are the values seen during forward. Parameter gradients are
    /// only computed when `want_params` is set; the input gradient only when
    /// `want_input` is set.
    pub(crate) fn backward(
        &self,
        input: &Matrix,
        output: &Matrix,
        grad: &Matrix,
        want_params: bool,
        want_input: bool,
    ) -> (Option<Matrix>, LayerGrad) {
        match self.kind {
            LayerKind::Linear => {
                let mut pg = LayerGrad::default();
                if want_params {
                    let mut dw = vec![0.0f32; self.weights.len()];
                    let mut db = vec![0.0f32; self.out_dim];
                    for r in 0..grad.rows() {
                        let gr = grad.row(r);
                        let xr = input.row(r);
                        for (o, &g) in gr.iter().enumerate() {
                            let dwr = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
                            for (d, xv) in dwr.iter_mut().zip(xr) {
                                *d += g * xv;
                            }
                            db[o] += g;
                        }
                    }
                    pg = LayerGrad { weights: dw, bias: db };
                }
                let dx = want_input.then(|| {
                    let mut dx = Matrix::zeros(grad.rows(), self.in_dim);
                    for r in 0..grad.rows() {
                        let gr = grad.row(r);
                        let dxr = dx.row_mut(r);
                        for (o, &g) in gr.iter().enumerate() {
                            let wr = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                            for (d, w) in dxr.iter_mut().zip(wr) {
                                *d += g * w;
                            }
                        }
                    }
                    dx
                });
                (dx, pg)
            }
            LayerKind::Relu => {
                let dx = want_input.then(|| {
                    let mut dx = grad.clone();
                    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                });
                (dx, LayerGrad::default())
            }
            LayerKind::Sigmoid => {
                let dx = want_input.then(|| {
                    let mut dx = grad.clone();
                    for (d, y) in dx.data_mut().iter_mut().zip(output.data()) {
                        *d *= y * (1.0 - y);
                    }
                    dx
                });
                (dx, LayerGrad::default())
            }
            LayerKind::Softmax => {
                let dx = want_input.then(|| {
                    let mut dx = Matrix::zeros(grad.rows(), grad.cols());
                    for r in 0..grad.rows() {
                        let y = output.row(r);
                        let g = grad.row(r);
                        let mut dot = 0.0f32;
                        for (gv, yv) in g.iter().zip(y) {
                            dot += gv * yv;
                        }
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = y[c] * (g[c] - dot);
                        }
                    }
                    dx
                });
                (dx, LayerGrad::default())
            }
        }
    }

    pub(crate) fn apply(&mut self, grad: &LayerGrad, lr: f32) {
        if self.frozen || !self.is_parameterized() {
            return;
        }
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
