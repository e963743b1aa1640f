//! Matrix-level reverse-mode differentiation tape.
//!
//! The denoiser, the training losses, and the affinity guidance all need
//! exact gradients with respect to both parameters and inputs, so the
//! network is expressed as a tape of matrix operations recorded during
//! the forward pass and replayed in reverse. Ops are an enum rather than
//! closures: the backward sweep is one match statement that can be read
//! top to bottom.
//!
//! All values are double precision. Node ids are indices into the tape;
//! an op may only reference earlier nodes, so a single reverse iteration
//! propagates every gradient.

use std::ops::{Index, IndexMut};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Index of a node on the tape.
pub type NodeId = usize;

/// Smoothing inside RowNorm so coincident points stay differentiable.
const ROW_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// a[r x c] + row[1 x c] broadcast over rows.
    AddRowBroadcast(NodeId, NodeId),
    /// a[r x c] * col[r x 1] broadcast over columns.
    MulColBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    /// Row r of the input adds into row idx[r] of a wider output.
    ScatterAddRows(NodeId, Vec<usize>),
    /// Per-row Euclidean norm: [r x c] -> [r x 1].
    RowNorm(NodeId),
    Recip(NodeId),
    Silu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    Ln(NodeId),
    /// Divide each row by its sum.
    NormalizeRows(NodeId),
    SumAll(NodeId),
}

struct Node {
    value: Mat,
    op: Op,
}

/// The recording tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for every node after a backward sweep.
pub struct Grads {
    grads: Vec<Mat>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> &Mat {
        &self.grads[id]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ma, mb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(ma.cols, mb.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(ma.rows, mb.cols);
        matmul_into(ma, mb, &mut out, false, false);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (ma, mr) = (&self.nodes[a].value, &self.nodes[row].value);
        assert_eq!(mr.rows, 1);
        assert_eq!(ma.cols, mr.cols);
        let mut out = ma.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out[(r, c)] += mr[(0, c)];
            }
        }
        self.push(out, Op::AddRowBroadcast(a, row))
    }

    pub fn mul_col_broadcast(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (ma, mc) = (&self.nodes[a].value, &self.nodes[col].value);
        assert_eq!(mc.cols, 1);
        assert_eq!(ma.rows, mc.rows);
        let mut out = ma.clone();
        for r in 0..out.rows {
            let f = mc[(r, 0)];
            for c in 0..out.cols {
                out[(r, c)] *= f;
            }
        }
        self.push(out, Op::MulColBroadcast(a, col))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = map(&self.nodes[a].value, |x| k * x);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = map(&self.nodes[a].value, |x| x + k);
        self.push(out, Op::AddScalar(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = &self.nodes[p].value;
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                for c in 0..m.cols {
                    out[(r, offset + c)] = m[(r, c)];
                }
            }
            offset += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let m = &self.nodes[a].value;
        let mut out = Mat::zeros(idx.len(), m.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.data[r * m.cols..(r + 1) * m.cols].copy_from_slice(m.row(i));
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn scatter_add_rows(&mut self, a: NodeId, idx: &[usize], out_rows: usize) -> NodeId {
        let m = &self.nodes[a].value;
        assert_eq!(m.rows, idx.len());
        let mut out = Mat::zeros(out_rows, m.cols);
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..m.cols {
                out[(i, c)] += m[(r, c)];
            }
        }
        self.push(out, Op::ScatterAddRows(a, idx.to_vec()))
    }

    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let m = &self.nodes[a].value;
        let mut out = Mat::zeros(m.rows, 1);
        for r in 0..m.rows {
            let s: f64 = m.row(r).iter().map(|x| x * x).sum();
            out[(r, 0)] = (s + ROW_NORM_EPS).sqrt();
        }
        self.push(out, Op::RowNorm(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let out = map(&self.nodes[a].value, |x| 1.0 / x);
        self.push(out, Op::Recip(a))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let out = map(&self.nodes[a].value, |x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid_op(&mut self, a: NodeId) -> NodeId {
        let out = map(&self.nodes[a].value, |x| sigmoid(x));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let m = &self.nodes[a].value;
        let mut out = Mat::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let row = m.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..m.cols {
                let e = (row[c] - max).exp();
                out[(r, c)] = e;
                sum += e;
            }
            for c in 0..m.cols {
                out[(r, c)] /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let out = map(&self.nodes[a].value, |x| x.ln());
        self.push(out, Op::Ln(a))
    }

    pub fn normalize_rows(&mut self, a: NodeId) -> NodeId {
        let m = &self.nodes[a].value;
        let mut out = Mat::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let s: f64 = m.row(r).iter().sum();
            for c in 0..m.cols {
                out[(r, c)] = m[(r, c)] / s;
            }
        }
        self.push(out, Op::NormalizeRows(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    /// Two-layer perceptron with SiLU hidden activation:
    /// silu(x W1 + b1) W2 + b2.
    pub fn mlp2(
        &mut self,
        x: NodeId,
        w1: NodeId,
        b1: NodeId,
        w2: NodeId,
        b2: NodeId,
    ) -> NodeId {
        let z1 = self.matmul(x, w1);
        let z1 = self.add_row_broadcast(z1, b1);
        let a1 = self.silu(z1);
        let z2 = self.matmul(a1, w2);
        self.add_row_broadcast(z2, b2)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, from: NodeId) -> Grads {
        let out = &self.nodes[from].value;
        assert_eq!(
            (out.rows, out.cols),
            (1, 1),
            "backward starts from a scalar node"
        );
        let mut grads: Vec<Mat> = self
            .nodes
            .iter()
            .map(|n| Mat::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[from].data[0] = 1.0;

        for id in (0..=from).rev() {
            if grads[id].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            // take the output gradient to appease the borrow checker
            let g = std::mem::replace(&mut grads[id], Mat::zeros(0, 0));
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ma, mb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    matmul_acc(&g, mb, &mut grads[*a], false, true);
                    matmul_acc(ma, &g, &mut grads[*b], true, false);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*a], &g, 1.0);
                    acc(&mut grads[*b], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[*a], &g, 1.0);
                    acc(&mut grads[*b], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (ma, mb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    for i in 0..g.data.len() {
                        grads[*a].data[i] += g.data[i] * mb.data[i];
                    }
                    for i in 0..g.data.len() {
                        grads[*b].data[i] += g.data[i] * ma.data[i];
                    }
                }
                Op::AddRowBroadcast(a, row) => {
                    acc(&mut grads[*a], &g, 1.0);
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..cols {
                            grads[*row].data[c] += g[(r, c)];
                        }
                    }
                }
                Op::MulColBroadcast(a, col) => {
                    let (ma, mc) = (&self.nodes[*a].value, &self.nodes[*col].value);
                    for r in 0..g.rows {
                        let f = mc[(r, 0)];
                        let mut dot = 0.0;
                        for c in 0..g.cols {
                            grads[*a].data[r * g.cols + c] += g[(r, c)] * f;
                            dot += g[(r, c)] * ma[(r, c)];
                        }
                        grads[*col].data[r] += dot;
                    }
                }
                Op::Scale(a, k) => acc(&mut grads[*a], &g, *k),
                Op::AddScalar(a) => acc(&mut grads[*a], &g, 1.0),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.nodes[p].value.cols;
                        for r in 0..g.rows {
                            for c in 0..cols {
                                grads[p].data[r * cols + c] += g[(r, offset + c)];
                            }
                        }
                        offset += cols;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let cols = g.cols;
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            grads[*a].data[i * cols + c] += g[(r, c)];
                        }
                    }
                }
                Op::ScatterAddRows(a, idx) => {
                    let cols = g.cols;
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            grads[*a].data[r * cols + c] += g[(i, c)];
                        }
                    }
                }
                Op::RowNorm(a) => {
                    let ma = &self.nodes[*a].value;
                    let out = &self.nodes[id].value;
                    for r in 0..ma.rows {
                        let go = g[(r, 0)];
                        let n = out[(r, 0)];
                        for c in 0..ma.cols {
                            grads[*a].data[r * ma.cols + c] += go * ma[(r, c)] / n;
                        }
                    }
                }
                Op::Recip(a) => {
                    let ma = &self.nodes[*a].value;
                    for i in 0..g.data.len() {
                        let x = ma.data[i];
                        grads[*a].data[i] += -g.data[i] / (x * x);
                    }
                }
                Op::Silu(a) => {
                    let ma = &self.nodes[*a].value;
                    for i in 0..g.data.len() {
                        let x = ma.data[i];
                        let s = sigmoid(x);
                        grads[*a].data[i] += g.data[i] * (s * (1.0 + x * (1.0 - s)));
                    }
                }
                Op::Sigmoid(a) => {
                    let out = &self.nodes[id].value;
                    for i in 0..g.data.len() {
                        let y = out.data[i];
                        grads[*a].data[i] += g.data[i] * y * (1.0 - y);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[id].value;
                    for r in 0..y.rows {
                        let mut dot = 0.0;
                        for c in 0..y.cols {
                            dot += g[(r, c)] * y[(r, c)];
                        }
                        for c in 0..y.cols {
                            grads[*a].data[r * y.cols + c] += y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                }
                Op::Ln(a) => {
                    let ma = &self.nodes[*a].value;
                    for i in 0..g.data.len() {
                        grads[*a].data[i] += g.data[i] / ma.data[i];
                    }
                }
                Op::NormalizeRows(a) => {
                    let ma = &self.nodes[*a].value;
                    let y = &self.nodes[id].value;
                    for r in 0..ma.rows {
                        let s: f64 = ma.row(r).iter().sum();
                        let mut dot = 0.0;
                        for c in 0..ma.cols {
                            dot += g[(r, c)] * y[(r, c)];
                        }
                        for c in 0..ma.cols {
                            grads[*a].data[r * ma.cols + c] += (g[(r, c)] - dot) / s;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let go = g.data[0];
                    for v in &mut grads[*a].data {
                        *v += go;
                    }
                }
            }
            grads[id] = g;
        }
        Grads { grads }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    Mat {
        rows: m.rows,
        cols: m.cols,
        data: m.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "shape mismatch");
    Mat {
        rows: a.rows,
        cols: a.cols,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect(),
    }
}

fn acc(dst: &mut Mat, src: &Mat, k: f64) {
    for (d, &s) in dst.data.iter_mut().zip(&src.data) {
        *d += k * s;
    }
}

/// out = a(^T?) * b(^T?), overwriting out.
fn matmul_into(a: &Mat, b: &Mat, out: &mut Mat, ta: bool, tb: bool) {
    out.data.iter_mut().for_each(|v| *v = 0.0);
    matmul_acc(a, b, out, ta, tb);
}

/// out += a(^T?) * b(^T?).
fn matmul_acc(a: &Mat, b: &Mat, out: &mut Mat, ta: bool, tb: bool) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(k, if tb { b.cols } else { b.rows });
    debug_assert_eq!((out.rows, out.cols), (m, n));
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                for p in 0..k {
                    let av = a[(i, p)];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * n..(p + 1) * n];
                    let orow = &mut out.data[i * n..(i + 1) * n];
                    for q in 0..n {
                        orow[q] += av * brow[q];
                    }
                }
            }
        }
        (false, true) => {
            // out[i,j] += sum_p a[i,p] b[j,p]
            for i in 0..m {
                let arow = &a.data[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b.data[j * k..(j + 1) * k];
                    let mut s = 0.0;
                    for p in 0..k {
                        s += arow[p] * brow[p];
                    }
                    out.data[i * n + j] += s;
                }
            }
        }
        (true, false) => {
            // out[i,j] += sum_p a[p,i] b[p,j]
            for p in 0..k {
                let arow = &a.data[p * m..(p + 1) * m];
                let brow = &b.data[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = arow[i];
                    if av == 0.0 {
                        continue;
                    }
                    let orow = &mut out.data[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[(p, i)] * b[(j, p)];
                    }
                    out.data[i * n + j] += s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    /// Central-difference check of d(scalar output)/d(leaf entries).
    fn check_grad(build: impl Fn(&mut Tape, NodeId) -> NodeId, init: Mat, tol: f64) {
        let mut tape = Tape::new();
        let x = tape.leaf(init.clone());
        let out = build(&mut tape, x);
        let grads = tape.backward(out);
        let analytic = grads.get(x).clone();

        let h = 1e-6;
        for i in 0..init.data.len() {
            let mut plus = init.clone();
            plus.data[i] += h;
            let mut minus = init.clone();
            minus.data[i] -= h;
            let f = |m: Mat| {
                let mut t = Tape::new();
                let x = t.leaf(m);
                let out = build(&mut t, x);
                t.value(out).data[0]
            };
            let fd = (f(plus) - f(minus)) / (2.0 * h);
            let ad = analytic.data[i];
            let denom = fd.abs().max(ad.abs()).max(1e-6);
            assert!(
                (fd - ad).abs() / denom < tol,
                "entry {i}: fd {fd} vs ad {ad}"
            );
        }
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = stream_rng(seed, 0);
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        )
    }

    #[test]
    fn matmul_grads() {
        let w = rand_mat(3, 2, 5);
        check_grad(
            move |t, x| {
                let wn = t.leaf(w.clone());
                let y = t.matmul(x, wn);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            rand_mat(4, 3, 1),
            1e-6,
        );
    }

    #[test]
    fn matmul_grad_wrt_weight() {
        let x = rand_mat(4, 3, 2);
        check_grad(
            move |t, w| {
                let xn = t.leaf(x.clone());
                let y = t.matmul(xn, w);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            rand_mat(3, 2, 6),
            1e-6,
        );
    }

    #[test]
    fn elementwise_and_broadcast_grads() {
        let b = rand_mat(1, 3, 9);
        check_grad(
            move |t, x| {
                let bn = t.leaf(b.clone());
                let y = t.add_row_broadcast(x, bn);
                let z = t.silu(y);
                let s = t.sigmoid_op(z);
                t.sum_all(s)
            },
            rand_mat(5, 3, 3),
            1e-5,
        );
        let col = rand_mat(5, 1, 10);
        check_grad(
            move |t, x| {
                let cn = t.leaf(col.clone());
                let y = t.mul_col_broadcast(x, cn);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            rand_mat(5, 3, 4),
            1e-6,
        );
    }

    #[test]
    fn gather_scatter_grads() {
        let idx = vec![2usize, 0, 2, 1];
        check_grad(
            {
                let idx = idx.clone();
                move |t, x| {
                    let g = t.gather_rows(x, &idx);
                    let sq = t.mul(g, g);
                    let sc = t.scatter_add_rows(sq, &idx, 3);
                    t.sum_all(sc)
                }
            },
            rand_mat(3, 2, 7),
            1e-6,
        );
    }

    #[test]
    fn norm_softmax_normalize_grads() {
        check_grad(
            |t, x| {
                let n = t.row_norm(x);
                let p = t.add_scalar(n, 1.0);
                let r = t.recip(p);
                t.sum_all(r)
            },
            rand_mat(4, 3, 8),
            1e-5,
        );
        check_grad(
            |t, x| {
                let sm = t.softmax_rows(x);
                let ln = t.ln(sm);
                let y = t.mul(sm, ln);
                t.sum_all(y)
            },
            rand_mat(3, 4, 11),
            1e-5,
        );
        // normalize_rows on strictly positive input
        let mut m = rand_mat(3, 4, 12);
        for v in &mut m.data {
            *v = v.abs() + 0.2;
        }
        check_grad(
            |t, x| {
                let n = t.normalize_rows(x);
                let sq = t.mul(n, n);
                t.sum_all(sq)
            },
            m,
            1e-5,
        );
    }

    #[test]
    fn concat_and_scale_grads() {
        let other = rand_mat(4, 2, 13);
        check_grad(
            move |t, x| {
                let o = t.leaf(other.clone());
                let cat = t.concat_cols(&[x, o]);
                let y = t.scale(cat, 1.75);
                let z = t.add_scalar(y, 0.3);
                let sq = t.mul(z, z);
                t.sum_all(sq)
            },
            rand_mat(4, 3, 14),
            1e-6,
        );
    }

    #[test]
    fn fan_out_accumulates() {
        // y = sum(x*x + x): dy/dx = 2x + 1
        let init = rand_mat(2, 2, 15);
        let mut t = Tape::new();
        let x = t.leaf(init.clone());
        let sq = t.mul(x, x);
        let s = t.add(sq, x);
        let out = t.sum_all(s);
        let g = t.backward(out);
        for (gv, xv) in g.get(x).data.iter().zip(&init.data) {
            assert!((gv - (2.0 * xv + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp2_matches_fd() {
        let w1 = rand_mat(3, 4, 20);
        let b1 = rand_mat(1, 4, 21);
        let w2 = rand_mat(4, 2, 22);
        let b2 = rand_mat(1, 2, 23);
        check_grad(
            move |t, x| {
                let w1 = t.leaf(w1.clone());
                let b1 = t.leaf(b1.clone());
                let w2 = t.leaf(w2.clone());
                let b2 = t.leaf(b2.clone());
                let y = t.mlp2(x, w1, b1, w2, b2);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            rand_mat(5, 3, 24),
            1e-5,
        );
    }

    #[test]
    fn backward_linearity() {
        // doubling the loss doubles all gradients
        let init = rand_mat(3, 3, 30);
        let run = |k: f64| {
            let mut t = Tape::new();
            let x = t.leaf(init.clone());
            let sq = t.mul(x, x);
            let s = t.sum_all(sq);
            let out = t.scale(s, k);
            let g = t.backward(out);
            g.get(x).clone()
        };
        let g1 = run(1.0);
        let g2 = run(2.0);
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
