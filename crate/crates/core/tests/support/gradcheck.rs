//! Finite-difference gradient oracle. The forward pass is re-implemented in
//! f64 from the raw layer parameters so it shares no code with the kernel.

use neurdb_core::nn::{Layer, LayerKind, Loss, Matrix, Network};

fn forward64(layers: &[(LayerKind, usize, usize, Vec<f64>, Vec<f64>)], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut cur: Vec<Vec<f64>> = x.to_vec();
    for (kind, out, inp, w, b) in layers {
        cur = cur
            .iter()
            .map(|row| match kind {
                LayerKind::Linear => {
                    (0..*out).map(|o| (0..*inp).map(|i| w[o * inp + i] * row[i]).sum::<f64>() + b[o]).collect()
                }
                LayerKind::Relu => row.iter().map(|v| v.max(0.0)).collect(),
                LayerKind::Sigmoid => row.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                LayerKind::Softmax => {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                }
            })
            .collect();
    }
    cur
}

fn loss64(loss: Loss, out: &[Vec<f64>], labels: &[f32]) -> f64 {
    let n = out.len() as f64;
    match loss {
        Loss::Mse => out.iter().zip(labels).map(|(o, &t)| (o[0] - t as f64).powi(2)).sum::<f64>() / n,
        Loss::CrossEntropy => out.iter().zip(labels).map(|(o, &t)| -o[t as usize].ln()).sum::<f64>() / n,
    }
}

type Params = Vec<(LayerKind, usize, usize, Vec<f64>, Vec<f64>)>;

fn params64(net: &Network) -> Params {
    net.layers()
        .iter()
        .map(|l: &Layer| {
            (
                l.kind(),
                l.out_dim(),
                l.in_dim(),
                l.weights().iter().map(|&v| v as f64).collect(),
                l.bias().iter().map(|&v| v as f64).collect(),
            )
        })
        .collect()
}

fn rows64(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|r| x.row(r).iter().map(|&v| v as f64).collect()).collect()
}

/// Worst per-layer relative error `|a - n| / (|a| + |n|)` (vector norms)
/// between analytic and central-difference gradients over all parameters.
pub fn max_param_rel_error(net: &Network, x: &Matrix, labels: &[f32]) -> f64 {
    let analytic = net.gradients(x, labels).unwrap();
    let base = params64(net);
    let xs = rows64(x);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for (j, layer) in base.iter().enumerate() {
        if layer.0 != LayerKind::Linear {
            continue;
        }
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for k in 0..layer.3.len() + layer.4.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            if k < layer.3.len() {
                plus[j].3[k] += eps;
                minus[j].3[k] -= eps;
                ana.push(analytic[j].weights[k] as f64);
            } else {
                let b = k - layer.3.len();
                plus[j].4[b] += eps;
                minus[j].4[b] -= eps;
                ana.push(analytic[j].bias[b] as f64);
            }
            let lp = loss64(net.loss(), &forward64(&plus, &xs), labels);
            let lm = loss64(net.loss(), &forward64(&minus, &xs), labels);
            num.push((lp - lm) / (2.0 * eps));
        }
        worst = worst.max(rel(&ana, &num));
    }
    worst
}

/// Relative error of the gradient w.r.t. the network input.
pub fn input_rel_error(net: &Network, x: &Matrix, labels: &[f32]) -> f64 {
    let trace = net.trace(x).unwrap();
    let out = trace.output().clone();
    let n = out.rows() as f32;
    // Only MSE here: d/dy of mean squared error.
    assert_eq!(net.loss(), Loss::Mse);
    let mut g = Matrix::zeros(out.rows(), 1);
    for r in 0..out.rows() {
        g.set(r, 0, 2.0 * (out.get(r, 0) - labels[r]) / n);
    }
    let (dx, _) = net.backward(&trace, g, true);
    let dx = dx.unwrap();
    let base = params64(net);
    let xs = rows64(x);
    let eps = 1e-6;
    let mut num = Vec::new();
    for r in 0..xs.len() {
        for c in 0..xs[r].len() {
            let mut p = xs.clone();
            let mut m = xs.clone();
            p[r][c] += eps;
            m[r][c] -= eps;
            let lp = loss64(Loss::Mse, &forward64(&base, &p), labels);
            let lm = loss64(Loss::Mse, &forward64(&base, &m), labels);
            num.push((lp - lm) / (2.0 * eps));
        }
    }
    let ana: Vec<f64> = dx.data().iter().map(|&v| v as f64).collect();
    rel(&ana, &num)
}

fn rel(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

/// Small random networks covering every layer kind.
pub fn gradcheck_cases(seed: u64) -> Vec<(Network, Matrix, Vec<f32>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = Matrix::zeros(5, 4);
    for v in x.data_mut() {
        *v = rng.gen_range(-1.5..1.5);
    }
    let reg: Vec<f32> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let cls: Vec<f32> = (0..5).map(|_| rng.gen_range(0..3) as f32).collect();
    let build = |layers: Vec<Layer>, loss: Loss, s: u64| {
        let mut n = Network::new(layers, loss).unwrap();
        n.init(s);
        // Non-zero biases so every path is exercised.
        for l in n.layers_mut() {
            for (i, b) in l.bias_mut().iter_mut().enumerate() {
                *b = 0.1 * (i as f32 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        n
    };
    vec![
        (build(vec![Layer::linear(4, 6), Layer::relu(), Layer::linear(6, 1)], Loss::Mse, seed), x.clone(), reg.clone()),
        (
            build(vec![Layer::linear(4, 3), Layer::sigmoid(), Layer::linear(3, 1)], Loss::Mse, seed + 1),
            x.clone(),
            reg.clone(),
        ),
        (build(vec![Layer::linear(4, 3), Layer::softmax(), Layer::linear(3, 1)], Loss::Mse, seed + 2), x.clone(), reg),
        (
            build(
                vec![Layer::linear(4, 5), Layer::relu(), Layer::linear(5, 3), Layer::softmax()],
                Loss::CrossEntropy,
                seed + 3,
            ),
            x,
            cls,
        ),
    ]
}
