//! Gaussian-process surrogate and expected improvement shared by the
//! policy and workload searches.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Gaussian-process regression with an RBF kernel on normalized targets.
#[derive(Debug, Clone)]
pub struct Gp {
    xs: Vec<Vec<f64>>,
    /// Lower Cholesky factor of `K + noise I`.
    chol: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    length_scale: f64,
}

impl Gp {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], length_scale: f64, noise: f64) -> Self {
        assert!(!xs.is_empty() && xs.len() == ys.len(), "one target per point");
        let n = xs.len();
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
        let k = |a: &[f64], b: &[f64]| rbf(a, b, length_scale);
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = k(&xs[i], &xs[j]) + if i == j { noise } else { 0.0 };
                for p in 0..j {
                    s -= l[i][p] * l[j][p];
                }
                l[i][j] = if i == j { s.max(1e-12).sqrt() } else { s / l[j][j] };
            }
        }
        let yn: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_std).collect();
        let alpha = chol_solve(&l, &yn);
        Self { xs: xs.to_vec(), chol: l, alpha, y_mean, y_std, length_scale }
    }

    /// Posterior mean and standard deviation in normalized units.
    pub fn predict_normalized(&self, x: &[f64]) -> (f64, f64) {
        let ks: Vec<f64> = self.xs.iter().map(|xi| rbf(xi, x, self.length_scale)).collect();
        let mean = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = forward_sub(&self.chol, &ks);
        let var = (1.0 - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (mean, var.sqrt())
    }

    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, s) = self.predict_normalized(x);
        (m * self.y_std + self.y_mean, s * self.y_std)
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }
}

fn rbf(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * length_scale * length_scale)).exp()
}

fn forward_sub(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|j| l[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let y = forward_sub(l, b);
    let n = y.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| l[j][i] * x[j]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, std: f64, best: f64, xi: f64) -> f64 {
    let gain = mean - best - xi;
    if std <= 1e-12 {
        return gain.max(0.0);
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let z = gain / std;
    gain * n.cdf(z) + std * n.pdf(z)
}
