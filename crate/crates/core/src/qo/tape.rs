//! Reverse-mode differentiation over small dense `f64` matrices, just wide
//! enough for the plan encoder.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, o: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    /// `a * b`, or `a * b^T` when `bt`.
    fn matmul(a: &Mat, b: &Mat, bt: bool) -> Mat {
        let (k, n) = if bt { (b.cols, b.rows) } else { (b.rows, b.cols) };
        assert_eq!(a.cols, k, "inner dimensions");
        let mut out = Mat::zeros(a.rows, n);
        for i in 0..a.rows {
            for p in 0..k {
                let x = a.data[i * a.cols + p];
                if x == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let y = if bt { b.data[j * b.cols + p] } else { b.data[p * b.cols + j] };
                    out.data[i * n + j] += x * y;
                }
            }
        }
        out
    }

    fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        param: Option<usize>,
    },
    MatMul(Var, Var),
    /// `a * b^T`.
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Adds a `1 x n` row to every row.
    AddRow(Var, Var),
    Tanh(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Row(Var, usize),
    MeanRows(Var),
}

/// One forward pass. Parameters enter through [`Tape::param`] and collect
/// gradients under their index.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf { param: None })
    }

    pub fn param(&mut self, index: usize, m: &Mat) -> Var {
        self.push(m.clone(), Op::Leaf { param: Some(index) })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = Mat::matmul(self.value(a), self.value(b), false);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = Mat::matmul(self.value(a), self.value(b), true);
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, self.value(a).cols), "bias row shape");
        let r = r.data.clone();
        let mut v = self.value(a).clone();
        for chunk in v.data.chunks_mut(r.len()) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// `a * w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, a: Var, w: Var, b: Var) -> Var {
        let m = self.matmul(a, w);
        self.add_row(m, b)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.tanh());
        self.push(v, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let cols = v.cols;
        for row in v.data.chunks_mut(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows, rows, "concat_cols row count");
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols, "concat_rows column count");
            data.extend_from_slice(&m.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let m = self.value(a);
        let v = Mat::from_vec(1, m.cols, m.row(r).to_vec());
        self.push(v, Op::Row(a, r))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = Mat::zeros(1, m.cols);
        for r in 0..m.rows {
            for (o, x) in v.data.iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        let n = m.rows.max(1) as f64;
        v.data.iter_mut().for_each(|x| *x /= n);
        self.push(v, Op::MeanRows(a))
    }

    /// Back-propagates `seed` from `out` and adds parameter gradients into
    /// `grads[index]`, which must already have each parameter's shape.
    pub fn backward(&self, out: Var, seed: Mat, grads: &mut [Mat]) {
        let mut g: Vec<Option<Mat>> = vec![None; self.values.len()];
        g[out.0] = Some(seed);
        let acc = |g: &mut Vec<Option<Mat>>, v: Var, d: Mat| match &mut g[v.0] {
            Some(x) => x.add_assign(&d),
            slot => *slot = Some(d),
        };
        for i in (0..=out.0).rev() {
            let Some(d) = g[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf { param: Some(p) } => grads[*p].add_assign(&d),
                Op::Leaf { param: None } => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(&mut g, *a, Mat::matmul(&d, vb, true));
                    acc(&mut g, *b, Mat::matmul(&va.transpose(), &d, false));
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(&mut g, *a, Mat::matmul(&d, vb, false));
                    acc(&mut g, *b, Mat::matmul(&d.transpose(), va, false));
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, d.clone());
                    acc(&mut g, *a, d);
                }
                Op::AddRow(a, row) => {
                    let mut db = Mat::zeros(1, d.cols);
                    for r in 0..d.rows {
                        for (o, x) in db.data.iter_mut().zip(d.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut g, *row, db);
                    acc(&mut g, *a, d);
                }
                Op::Tanh(a) => {
                    let y = &self.values[i];
                    let mut dx = d;
                    dx.data.iter_mut().zip(&y.data).for_each(|(x, y)| *x *= 1.0 - y * y);
                    acc(&mut g, *a, dx);
                }
                Op::Scale(a, s) => {
                    let mut dx = d;
                    dx.data.iter_mut().for_each(|x| *x *= s);
                    acc(&mut g, *a, dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.values[i];
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, dr) = (y.row(r), d.row(r));
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols {
                            dx.data[r * y.cols + c] = yr[c] * (dr[c] - dot);
                        }
                    }
                    acc(&mut g, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let mut dp = Mat::zeros(d.rows, cols);
                        for r in 0..d.rows {
                            dp.data[r * cols..(r + 1) * cols].copy_from_slice(&d.row(r)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut g, *p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        let dp = Mat::from_vec(rows, d.cols, d.data[r0 * d.cols..(r0 + rows) * d.cols].to_vec());
                        r0 += rows;
                        acc(&mut g, *p, dp);
                    }
                }
                Op::Row(a, r) => {
                    let src = self.value(*a);
                    let mut dx = Mat::zeros(src.rows, src.cols);
                    dx.data[r * src.cols..(r + 1) * src.cols].copy_from_slice(&d.data);
                    acc(&mut g, *a, dx);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let n = src.rows.max(1) as f64;
                    let mut dx = Mat::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        for c in 0..src.cols {
                            dx.data[r * src.cols + c] = d.data[c] / n;
                        }
                    }
                    acc(&mut g, *a, dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    /// Scalar function of three parameters exercising every op.
    fn f(params: &[Mat], tape: &mut Tape) -> Var {
        let a = tape.param(0, &params[0]);
        let w = tape.param(1, &params[1]);
        let b = tape.param(2, &params[2]);
        let h = tape.affine(a, w, b);
        let h = tape.tanh(h);
        let s = tape.matmul_t(h, h);
        let s = tape.scale(s, 0.5);
        let p = tape.softmax_rows(s);
        let o = tape.matmul(p, h);
        let o = tape.add(o, h);
        let r0 = tape.row(o, 0);
        let r2 = tape.row(o, 2);
        let c = tape.concat_cols(&[r0, r2]);
        let rr = tape.concat_rows(&[c, c]);
        let mean = tape.mean_rows(rr);
        let t = tape.tanh(mean);
        let ones = tape.constant(Mat::from_vec(8, 1, (0..8).map(|i| 0.3 + i as f64 * 0.1).collect()));
        tape.matmul(t, ones)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let params = vec![m(3, 5, 1), m(5, 4, 2), m(1, 4, 3)];
        let mut tape = Tape::new();
        let out = f(&params, &mut tape);
        let mut grads: Vec<Mat> = params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        tape.backward(out, Mat::from_vec(1, 1, vec![1.0]), &mut grads);
        let eval = |ps: &[Mat]| {
            let mut t = Tape::new();
            let o = f(ps, &mut t);
            t.value(o).data[0]
        };
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.data.len() {
                let mut plus = params.clone();
                plus[pi].data[k] += h;
                let mut minus = params.clone();
                minus[pi].data[k] -= h;
                let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let ana = grads[pi].data[k];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
                assert!(rel < 1e-5 || (num - ana).abs() < 1e-9, "param {pi}[{k}]: {ana} vs {num}");
            }
        }
    }
}
