//! Dense row-major `f64` matrices and a reverse-mode tape over them.
//!
//! The tape records one node per operation. Parameters enter as borrowed
//! leaves, so building a graph never copies a weight table. `backward`
//! walks the nodes in reverse and returns a gradient for every node that the
//! seed reaches.

use std::borrow::Cow;
use std::rc::Rc;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix::from_vec(1, data.len(), data)
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix::from_vec(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Matrix {
        Matrix::from_vec(
            len,
            self.cols,
            self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        )
    }

    pub fn vstack(parts: &[&Matrix]) -> Matrix {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for part in parts {
            assert_eq!(part.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&part.data);
            rows += part.rows;
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable softmax of one slice.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Smallest probability the cross-entropy op takes the log of.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// The variable created as the `index`-th entry of a tape.
    pub(crate) fn from_index(index: usize) -> Var {
        Var(index)
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Lerp { from: Var, to: Var, weight: Var },
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows { table: Var, ids: Vec<usize>, scale: f64 },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    BucketGather { x: Var, buckets: Rc<[usize]> },
    BucketScatter { x: Var, buckets: Rc<[usize]> },
    CrossEntropy { logits: Var, gold: usize, probs: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Matrix, op: Op) -> Var {
        self.push(Cow::Owned(value), op)
    }

    /// Borrowed leaf, typically a parameter.
    pub fn param(&mut self, value: &'p Matrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    /// Owned leaf. Gradients reaching it are computed but never propagated
    /// further, which makes it a stop-gradient constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_owned(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push_owned(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push_owned(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push_owned(value, Op::Add(a, b))
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width mismatch");
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            for (v, bv) in value.row_mut(i).iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        self.push_owned(value, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::from_vec(x.rows(), x.cols(), data);
        self.push_owned(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        self.push_owned(value, Op::Scale(a, factor))
    }

    /// `from + weight ⊙ (to − from)`
    pub fn lerp(&mut self, from: Var, to: Var, weight: Var) -> Var {
        let (f, t, w) = (self.value(from), self.value(to), self.value(weight));
        assert!(f.shape() == t.shape() && t.shape() == w.shape(), "lerp shape mismatch");
        let data = f
            .data()
            .iter()
            .zip(t.data())
            .zip(w.data())
            .map(|((&f, &t), &w)| f + w * (t - f))
            .collect();
        let value = Matrix::from_vec(f.rows(), f.cols(), data);
        self.push_owned(value, Op::Lerp { from, to, weight })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push_owned(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push_owned(value, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.push_owned(value, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            value.row_mut(i).copy_from_slice(&softmax(x.row(i)));
        }
        self.push_owned(value, Op::SoftmaxRows(a))
    }

    /// Per-row normalization followed by an elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let (g, b) = (self.value(gain), self.value(bias));
        assert!(g.shape() == (1, cols) && b.shape() == (1, cols), "layer norm shape mismatch");
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let row = input.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..cols {
                let xhat = (row[j] - mean) * inv;
                normalized.set(i, j, xhat);
                value.set(i, j, xhat * g.data()[j] + b.data()[j]);
            }
        }
        self.push_owned(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    /// Row `t` of the output is `scale · table[ids[t]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], scale: f64) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            for (o, &v) in value.row_mut(r).iter_mut().zip(t.row(id)) {
                *o = v * scale;
            }
        }
        self.push_owned(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
                scale,
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let input = self.value(x);
        assert!(start + len <= input.cols(), "column slice out of range");
        let mut value = Matrix::zeros(input.rows(), len);
        for i in 0..input.rows() {
            value
                .row_mut(i)
                .copy_from_slice(&input.row(i)[start..start + len]);
        }
        self.push_owned(value, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_rows(start, len);
        self.push_owned(value, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                value.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        self.push_owned(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats);
        self.push_owned(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push_owned(value, Op::Transpose(x))
    }

    /// `out[i][j] = x[i][buckets[i * cols + j]]` for an output with `cols`
    /// columns.
    pub fn bucket_gather(&mut self, x: Var, buckets: Rc<[usize]>, cols: usize) -> Var {
        let input = self.value(x);
        let rows = input.rows();
        assert_eq!(buckets.len(), rows * cols, "bucket table size mismatch");
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                value.set(i, j, input.get(i, buckets[i * cols + j]));
            }
        }
        self.push_owned(value, Op::BucketGather { x, buckets })
    }

    /// `out[i][b] = Σ_j x[i][j]` over the `j` with `buckets[i * cols + j] == b`.
    pub fn bucket_scatter(&mut self, x: Var, buckets: Rc<[usize]>, n_buckets: usize) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        assert_eq!(buckets.len(), rows * cols, "bucket table size mismatch");
        let mut value = Matrix::zeros(rows, n_buckets);
        for i in 0..rows {
            for j in 0..cols {
                let b = buckets[i * cols + j];
                value.set(i, b, value.get(i, b) + input.get(i, j));
            }
        }
        self.push_owned(value, Op::BucketScatter { x, buckets })
    }

    /// Negative log-likelihood of `gold` under `softmax(logits)` for a
    /// `1 × k` logit row. Returns a `1 × 1` node.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), 1, "cross entropy expects one logit row");
        let probs = softmax(l.data());
        let loss = -probs[gold].max(PROB_CLAMP).ln();
        self.push_owned(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            },
        )
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar");
        self.backward_with_seed(output, Matrix::from_vec(1, 1, vec![1.0]))
    }

    /// Reverse pass starting from an explicit output gradient.
    pub fn backward_with_seed(&self, output: Var, seed: Matrix) -> Gradients {
        assert_eq!(self.value(output).shape(), seed.shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let out = &*node.value;
        let val = |v: Var| &*self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(val(*b)));
                accumulate(grads, *b, val(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                accumulate(grads, *a, g.matmul(val(*b)));
                accumulate(grads, *b, g.t_matmul(val(*a)));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g.clone());
                let mut col_sums = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (s, v) in col_sums.data_mut().iter_mut().zip(g.row(i)) {
                        *s += v;
                    }
                }
                accumulate(grads, *bias, col_sums);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, elementwise(g, val(*b), |d, y| d * y));
                accumulate(grads, *b, elementwise(g, val(*a), |d, x| d * x));
            }
            Op::Scale(a, factor) => accumulate(grads, *a, g.map(|d| d * factor)),
            Op::Lerp { from, to, weight } => {
                let w = val(*weight);
                accumulate(grads, *from, elementwise(g, w, |d, w| d * (1.0 - w)));
                accumulate(grads, *to, elementwise(g, w, |d, w| d * w));
                let (f, t) = (val(*from), val(*to));
                let data = g
                    .data()
                    .iter()
                    .zip(f.data())
                    .zip(t.data())
                    .map(|((d, f), t)| d * (t - f))
                    .collect();
                accumulate(grads, *weight, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Tanh(a) => accumulate(grads, *a, elementwise(g, out, |d, y| d * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(grads, *a, elementwise(g, out, |d, y| d * y * (1.0 - y))),
            Op::Gelu(a) => accumulate(grads, *a, elementwise(g, val(*a), |d, x| d * gelu_grad(x))),
            Op::SoftmaxRows(a) => {
                let mut dx = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, dy) = (out.row(i), g.row(i));
                    let inner = dot(y, dy);
                    for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                        *d = y[j] * (dy[j] - inner);
                    }
                }
                accumulate(grads, *a, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gvals = val(*gain);
                let (rows, cols) = normalized.shape();
                let mut dgain = Matrix::zeros(1, cols);
                let mut dbias = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(rows, cols);
                let n = cols as f64;
                for i in 0..rows {
                    let (xhat, dy) = (normalized.row(i), g.row(i));
                    let dxhat: Vec<f64> = dy.iter().zip(gvals.data()).map(|(d, w)| d * w).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dot(&dxhat, xhat);
                    for j in 0..cols {
                        dgain.data_mut()[j] += dy[j] * xhat[j];
                        dbias.data_mut()[j] += dy[j];
                        dx.set(
                            i,
                            j,
                            inv_std[i] / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx),
                        );
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, dgain);
                accumulate(grads, *bias, dbias);
            }
            Op::GatherRows { table, ids, scale } => {
                let t = val(*table);
                let entry = grads[table.0].get_or_insert_with(|| Matrix::zeros(t.rows(), t.cols()));
                for (r, &id) in ids.iter().enumerate() {
                    for (dst, d) in entry.row_mut(id).iter_mut().zip(g.row(r)) {
                        *dst += scale * d;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let input = val(*x);
                let entry = grads[x.0].get_or_insert_with(|| Matrix::zeros(input.rows(), input.cols()));
                for i in 0..g.rows() {
                    for (dst, d) in entry.row_mut(i)[*start..*start + g.cols()].iter_mut().zip(g.row(i)) {
                        *dst += d;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let input = val(*x);
                let entry = grads[x.0].get_or_insert_with(|| Matrix::zeros(input.rows(), input.cols()));
                let offset = start * input.cols();
                for (dst, d) in entry.data_mut()[offset..offset + g.len()].iter_mut().zip(g.data()) {
                    *dst += d;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).cols();
                    let mut piece = Matrix::zeros(g.rows(), width);
                    for i in 0..g.rows() {
                        piece.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + width]);
                    }
                    accumulate(grads, p, piece);
                    offset += width;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let height = val(p).rows();
                    accumulate(grads, p, g.slice_rows(offset, height));
                    offset += height;
                }
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::BucketGather { x, buckets } => {
                let input = val(*x);
                let entry = grads[x.0].get_or_insert_with(|| Matrix::zeros(input.rows(), input.cols()));
                let cols = g.cols();
                for i in 0..g.rows() {
                    for j in 0..cols {
                        let b = buckets[i * cols + j];
                        entry.set(i, b, entry.get(i, b) + g.get(i, j));
                    }
                }
            }
            Op::BucketScatter { x, buckets } => {
                let input = val(*x);
                let (rows, cols) = input.shape();
                let mut dx = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    for j in 0..cols {
                        dx.set(i, j, g.get(i, buckets[i * cols + j]));
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            } => {
                let d = g.get(0, 0);
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| d * (p - if k == *gold { 1.0 } else { 0.0 }))
                    .collect();
                accumulate(grads, *logits, Matrix::from_vec(1, probs.len(), data));
            }
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, contribution: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&contribution),
        slot => *slot = Some(contribution),
    }
}

/// Gradients from one reverse pass, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
