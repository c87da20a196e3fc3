//! Dual-module plan cost model: an encoder that folds the plan tree and
//! attends to the system condition, and an analyzer with self-attention
//! and an MLP head predicting log cost.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{SystemCondition, COND_DIM, COND_TOKENS};
use super::plan::{PlanTree, NODE_DIM};
use super::tape::{Mat, Tape, Var};
use super::QoError;
use crate::nn::{LayerGrad, Loss, Matrix, Network};

pub const EMBED: usize = 32;
pub const HEADS: usize = 2;
const HEAD_DIM: usize = EMBED / HEADS;
/// Targets are `(ln cost - LOG_COST_SHIFT) / LOG_COST_SCALE`.
const LOG_COST_SHIFT: f64 = 10.0;
const LOG_COST_SCALE: f64 = 4.0;

/// Encoder parameter slots.
mod slot {
    pub const NODE_W: usize = 0;
    pub const NODE_B: usize = 1;
    pub const COMB_W: usize = 2;
    pub const COMB_B: usize = 3;
    pub const COND_W: usize = 4;
    pub const COND_B: usize = 5;
    /// Learned embedding per condition slot; makes token order meaningful.
    pub const COND_POS: usize = 6;
    pub const CROSS_Q: usize = 7;
    pub const CROSS_K: usize = 8;
    pub const CROSS_V: usize = 9;
    /// Per head: query, key, value.
    pub const SELF_QKV: usize = 10;
    pub const SELF_O: usize = SELF_QKV + 3 * super::HEADS;
    pub const COUNT: usize = SELF_O + 1;
}

fn shapes() -> Vec<(usize, usize)> {
    let mut s = vec![
        (NODE_DIM, EMBED),
        (1, EMBED),
        (3 * EMBED, EMBED),
        (1, EMBED),
        (COND_DIM, EMBED),
        (1, EMBED),
        (COND_TOKENS, EMBED),
        (EMBED, EMBED),
        (EMBED, EMBED),
        (EMBED, EMBED),
    ];
    s.extend(std::iter::repeat_n((EMBED, HEAD_DIM), 3 * HEADS));
    s.push((EMBED, EMBED));
    debug_assert_eq!(s.len(), slot::COUNT);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    /// Encoder and attention parameters, indexed by `slot`.
    pub params: Vec<Mat>,
    /// Analyzer MLP `32 -> 16 -> 1` on the pooled embedding.
    pub head: Network,
}

/// Intermediate values of one scoring pass.
struct Pass {
    tape: Tape,
    pooled: Var,
}

impl DualModel {
    /// Every parameter zero; all plans score the same.
    pub fn zeroed() -> Self {
        let mut m = Self::new(0);
        m.params.iter_mut().for_each(|p| p.data.iter_mut().for_each(|x| *x = 0.0));
        for l in m.head.layers_mut() {
            l.weights_mut().iter_mut().for_each(|x| *x = 0.0);
            l.bias_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        m
    }

    /// Scaled-normal initialization with std `1 / sqrt(fan_in)`; biases and
    /// slot embeddings start small.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes()
            .into_iter()
            .map(|(r, c)| {
                let std = if r == 1 {
                    0.0
                } else if r == COND_TOKENS {
                    0.1
                } else {
                    1.0 / (r as f64).sqrt()
                };
                let n = Normal::new(0.0, std.max(1e-12)).expect("positive std");
                Mat::from_vec(r, c, (0..r * c).map(|_| if std == 0.0 { 0.0 } else { n.sample(&mut rng) }).collect())
            })
            .collect();
        let head = Network::mlp(EMBED, &[16], 1, Loss::Mse, seed ^ 0x9e37_79b9).expect("valid head");
        Self { params, head }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|x| x.is_finite()))
            && self.head.layers().iter().all(|l| l.weights().iter().chain(l.bias()).all(|x| x.is_finite()))
    }

    fn encode(&self, plan: &PlanTree, cond: &SystemCondition) -> Pass {
        let mut t = Tape::new();
        let p: Vec<Var> = self.params.iter().enumerate().map(|(i, m)| t.param(i, m)).collect();
        let feats = plan.features();
        let x = t.constant(Mat::from_vec(feats.len(), NODE_DIM, feats.concat()));
        let e = t.affine(x, p[slot::NODE_W], p[slot::NODE_B]);
        // Fold the tree bottom-up; nodes are in postorder.
        let zero = t.constant(Mat::zeros(1, EMBED));
        let mut h: Vec<Var> = Vec::with_capacity(plan.nodes.len());
        for (i, n) in plan.nodes.iter().enumerate() {
            let (l, r) = n.children.map_or((zero, zero), |(l, r)| (h[l], h[r]));
            let ei = t.row(e, i);
            let cat = t.concat_cols(&[l, r, ei]);
            let z = t.affine(cat, p[slot::COMB_W], p[slot::COMB_B]);
            h.push(t.tanh(z));
        }
        let hs = t.concat_rows(&h);
        let c = t.constant(Mat::from_vec(COND_TOKENS, COND_DIM, cond.tokens().concat()));
        let ce = t.affine(c, p[slot::COND_W], p[slot::COND_B]);
        let ce = t.add(ce, p[slot::COND_POS]);
        let att = attention(&mut t, hs, ce, p[slot::CROSS_Q], p[slot::CROSS_K], p[slot::CROSS_V]);
        let h2 = t.add(hs, att);
        let heads: Vec<Var> = (0..HEADS)
            .map(|k| {
                let base = slot::SELF_QKV + 3 * k;
                attention(&mut t, h2, h2, p[base], p[base + 1], p[base + 2])
            })
            .collect();
        let cat = t.concat_cols(&heads);
        let o = t.matmul(cat, p[slot::SELF_O]);
        let h3 = t.add(h2, o);
        let pooled = t.mean_rows(h3);
        Pass { tape: t, pooled }
    }

    fn head_input(pass: &Pass) -> Matrix {
        let v = &pass.tape.value(pass.pooled).data;
        Matrix::from_vec(1, EMBED, v.iter().map(|x| *x as f32).collect()).expect("pooled row")
    }

    /// Normalized model output.
    fn raw(&self, plan: &PlanTree, cond: &SystemCondition) -> f64 {
        let pass = self.encode(plan, cond);
        self.head.forward(&Self::head_input(&pass)).expect("head dims").get(0, 0) as f64
    }

    /// Predicted natural-log cost. Pure: same inputs, same bits.
    pub fn score(&self, plan: &PlanTree, cond: &SystemCondition) -> f64 {
        LOG_COST_SHIFT + LOG_COST_SCALE * self.raw(plan, cond)
    }

    /// Index of the lowest predicted cost; ties go to the first candidate.
    pub fn choose(&self, plans: &[PlanTree], cond: &SystemCondition) -> Result<usize, QoError> {
        if plans.is_empty() {
            return Err(QoError::Unsupported("no candidate plans".into()));
        }
        let mut best = (0, f64::INFINITY);
        for (i, p) in plans.iter().enumerate() {
            let s = self.score(p, cond);
            if s < best.1 || (i == 0 && s.is_nan()) {
                best = (i, s);
            }
        }
        Ok(best.0)
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            enc: self.params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect(),
            head: self
                .head
                .layers()
                .iter()
                .map(|l| LayerGrad { weights: vec![0.0; l.weights().len()], bias: vec![0.0; l.bias().len()] })
                .collect(),
        }
    }

    /// Squared error of one sample, adding `weight` times its gradient into `g`.
    /// The encoder is differentiated only when `encoder` is set.
    fn accumulate(&self, s: &Sample, weight: f64, encoder: bool, g: &mut Grads) -> f64 {
        let pass = self.encode(&s.plan, &s.cond);
        let input = Self::head_input(&pass);
        let trace = self.head.trace(&input).expect("head dims");
        let out = trace.output().get(0, 0) as f64;
        let err = out - normalize(s.log_cost);
        let d = Matrix::from_vec(1, 1, vec![(2.0 * err * weight) as f32]).expect("scalar");
        let (dx, lg) = self.head.backward(&trace, d, encoder);
        for (acc, l) in g.head.iter_mut().zip(&lg) {
            acc.weights.iter_mut().zip(&l.weights).for_each(|(a, b)| *a += b);
            acc.bias.iter_mut().zip(&l.bias).for_each(|(a, b)| *a += b);
        }
        if let Some(dx) = dx {
            let seed = Mat::from_vec(1, EMBED, dx.data().iter().map(|x| *x as f64).collect());
            pass.tape.backward(pass.pooled, seed, &mut g.enc);
        }
        err * err
    }

    /// Mean squared error in normalized log-cost units.
    pub fn mse(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples.iter().map(|s| (self.raw(&s.plan, &s.cond) - normalize(s.log_cost)).powi(2)).sum::<f64>()
            / samples.len() as f64
    }

    /// One Adam step on every parameter over `batch`; returns the batch MSE.
    pub fn adam_step(&mut self, batch: &[Sample], opt: &mut Adam) -> f64 {
        let mut g = self.zero_grads();
        let w = 1.0 / batch.len().max(1) as f64;
        let loss = batch.iter().map(|s| self.accumulate(s, w, true, &mut g)).sum::<f64>() * w;
        opt.t += 1;
        let mut k = 0;
        for (p, gp) in self.params.iter_mut().zip(&g.enc) {
            for (x, d) in p.data.iter_mut().zip(&gp.data) {
                *x -= opt.update(k, *d);
                k += 1;
            }
        }
        for (l, gl) in self.head.layers_mut().iter_mut().zip(&g.head) {
            if !l.is_parameterized() {
                continue;
            }
            for (x, d) in l.weights_mut().iter_mut().zip(&gl.weights) {
                *x -= opt.update(k, *d as f64) as f32;
                k += 1;
            }
            for (x, d) in l.bias_mut().iter_mut().zip(&gl.bias) {
                *x -= opt.update(k, *d as f64) as f32;
                k += 1;
            }
        }
        loss
    }

    /// One SGD step on the analyzer MLP only; the encoder is untouched.
    pub fn head_sgd_step(&mut self, batch: &[Sample], lr: f32) -> f64 {
        let mut g = self.zero_grads();
        let w = 1.0 / batch.len().max(1) as f64;
        let loss = batch.iter().map(|s| self.accumulate(s, w, false, &mut g)).sum::<f64>() * w;
        self.head.apply_grads(&g.head, lr);
        loss
    }

    /// Gradient of the mean squared error over `batch` for every encoder
    /// parameter, exposed for gradient checks.
    pub fn encoder_gradient(&self, batch: &[Sample]) -> Vec<Mat> {
        let mut g = self.zero_grads();
        let w = 1.0 / batch.len().max(1) as f64;
        for s in batch {
            self.accumulate(s, w, true, &mut g);
        }
        g.enc
    }
}

fn normalize(log_cost: f64) -> f64 {
    (log_cost - LOG_COST_SHIFT) / LOG_COST_SCALE
}

/// Scaled dot-product attention of `queries` over `memory`.
fn attention(t: &mut Tape, queries: Var, memory: Var, wq: Var, wk: Var, wv: Var) -> Var {
    let q = t.matmul(queries, wq);
    let k = t.matmul(memory, wk);
    let v = t.matmul(memory, wv);
    let dim = t.value(q).cols as f64;
    let s = t.matmul_t(q, k);
    let s = t.scale(s, 1.0 / dim.sqrt());
    let a = t.softmax_rows(s);
    t.matmul(a, v)
}

struct Grads {
    enc: Vec<Mat>,
    head: Vec<LayerGrad>,
}

/// One labeled training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub plan: PlanTree,
    pub cond: SystemCondition,
    /// Natural log of the measured cost.
    pub log_cost: f64,
}

/// Adam state over a flat parameter index.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, t: 0, m: Vec::new(), v: Vec::new() }
    }

    fn update(&mut self, k: usize, g: f64) -> f64 {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        if k >= self.m.len() {
            self.m.resize(k + 1, 0.0);
            self.v.resize(k + 1, 0.0);
        }
        self.m[k] = B1 * self.m[k] + (1.0 - B1) * g;
        self.v[k] = B2 * self.v[k] + (1.0 - B2) * g * g;
        let mh = self.m[k] / (1.0 - B1.powi(self.t));
        let vh = self.v[k] / (1.0 - B2.powi(self.t));
        self.lr * mh / (vh.sqrt() + 1e-8)
    }
}
