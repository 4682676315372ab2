//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse, applying each node's
//! analytic adjoint and accumulating gradients into its parents. Nodes built
//! only from constants never receive gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{split_axis, strides, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape(Var),
    Permute { x: Var, src: Vec<usize> },
    Mse(Var, Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    kink_hash: Option<u64>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// `c = a * b + beta * c` for row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches; `c` is
    // a distinct mutable slice so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enables a running hash of which side of zero every ReLU input falls
    /// on. Two evaluations with equal hashes took the same linear piece.
    pub fn track_kinks(&mut self) {
        self.kink_hash = Some(0xcbf2_9ce4_8422_2325);
    }

    pub fn kink_hash(&self) -> Option<u64> {
        self.kink_hash
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect
    /// to a leaf, if it received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err("add", &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err("mul", &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|x| x * s).collect(),
        };
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    fn row_check(&self, op: &'static str, x: Var, row: Var) -> Result<usize> {
        let (tx, tr) = (self.value(x), self.value(row));
        let n = *tx.shape.last().unwrap_or(&0);
        if tr.rank() != 1 || tr.shape[0] != n || n == 0 {
            return Err(shape_err(op, &tx.shape, &tr.shape));
        }
        Ok(n)
    }

    /// `x[..., j] + b[j]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.row_check("add_row", x, b)?;
        let (tx, tb) = (self.value(x), self.value(b));
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(n) {
            for (v, bb) in row.iter_mut().zip(&tb.data) {
                *v += bb;
            }
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddRow(x, b), ng))
    }

    /// `x[..., j] * g[j]`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let n = self.row_check("mul_row", x, g)?;
        let (tx, tg) = (self.value(x), self.value(g));
        let mut data = tx.data.clone();
        for row in data.chunks_exact_mut(n) {
            for (v, gg) in row.iter_mut().zip(&tg.data) {
                *v *= gg;
            }
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data,
        };
        let ng = self.needs(x) || self.needs(g);
        Ok(self.push(t, Op::MulRow(x, g), ng))
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(shape_err("matmul", &ta.shape, &tb.shape));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &ta.data, (k, 1), &tb.data, (n, 1), &mut c, 0.0);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: c }, Op::MatMul(a, b), ng))
    }

    /// Affine map `x W + b` with `x: [m, k]`, `W: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape[1] != tw.shape[0] {
            return Err(shape_err("linear", &tx.shape, &tw.shape));
        }
        let (m, k, n) = (tx.shape[0], tx.shape[1], tw.shape[1]);
        if tb.shape != [n] {
            return Err(shape_err("linear", &tw.shape, &tb.shape));
        }
        let mut c = Vec::with_capacity(m * n);
        for _ in 0..m {
            c.extend_from_slice(&tb.data);
        }
        gemm(m, k, n, &tx.data, (k, 1), &tw.data, (n, 1), &mut c, 1.0);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: c }, Op::Linear(x, w, b), ng))
    }

    /// `[bt, m, k] x [bt, k, n]`, or `[bt, m, k] x [bt, n, k]^T` when
    /// `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ok = ta.rank() == 3
            && tb.rank() == 3
            && ta.shape[0] == tb.shape[0]
            && ta.shape[2] == if transpose_b { tb.shape[2] } else { tb.shape[1] };
        if !ok {
            return Err(shape_err("batch_matmul", &ta.shape, &tb.shape));
        }
        let (bt, m, k) = (ta.shape[0], ta.shape[1], ta.shape[2]);
        let n = if transpose_b { tb.shape[1] } else { tb.shape[2] };
        let mut c = vec![0.0; bt * m * n];
        let b_strides = if transpose_b { (1, k) } else { (n, 1) };
        for i in 0..bt {
            gemm(
                m,
                k,
                n,
                &ta.data[i * m * k..(i + 1) * m * k],
                (k, 1),
                &tb.data[i * k * n..(i + 1) * k * n],
                b_strides,
                &mut c[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor {
                shape: vec![bt, m, n],
                data: c,
            },
            Op::BatchMatMul { a, b, transpose_b },
            ng,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = &self.nodes[x.0].value;
        if let Some(h) = &mut self.kink_hash {
            for (i, v) in tx.data.iter().enumerate() {
                if *v > 0.0 {
                    *h = (*h ^ i as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
            *h = h.wrapping_mul(0x0100_0000_01b3);
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data: tx.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        let ng = self.needs(x);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(shape_err("softmax", &tx.shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&tx.shape, axis);
        let mut out = tx.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(out[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (out[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data: out,
        };
        let ng = self.needs(x);
        Ok(self.push(t, Op::Softmax { x, axis }, ng))
    }

    /// Normalizes to zero mean and unit (biased) variance along `axis`,
    /// without affine parameters.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(shape_err("layer_norm", &tx.shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&tx.shape, axis);
        let mut out = tx.data.clone();
        let mut inv_std = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mean = (0..len).map(|j| out[base + j * inner]).sum::<f64>() / len as f64;
                let var = (0..len)
                    .map(|j| (out[base + j * inner] - mean).powi(2))
                    .sum::<f64>()
                    / len as f64;
                let s = 1.0 / (var + eps).sqrt();
                for j in 0..len {
                    out[base + j * inner] = (out[base + j * inner] - mean) * s;
                }
                inv_std.push(s);
            }
        }
        let t = Tensor {
            shape: tx.shape.clone(),
            data: out,
        };
        let ng = self.needs(x);
        Ok(self.push(t, Op::LayerNorm { x, axis, inv_std }, ng))
    }

    /// Inverted dropout. In [`Mode::Eval`] (or with `p == 0`) this returns
    /// `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let tx = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = Tensor {
            shape: tx.shape.clone(),
            data: tx.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        let ng = self.needs(x);
        Ok(self.push(t, Op::Dropout { x, mask }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if shape.iter().product::<usize>() != tx.len() {
            return Err(shape_err("reshape", &tx.shape, shape));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: tx.data.clone(),
        };
        let ng = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let r = tx.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", &tx.shape, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| tx.shape[p]).collect();
        let in_strides = strides(&tx.shape);
        let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut src = Vec::with_capacity(tx.len());
        let mut idx = vec![0usize; r];
        for _ in 0..tx.len() {
            src.push(idx.iter().zip(&mapped).map(|(i, s)| i * s).sum());
            for d in (0..r).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let data = src.iter().map(|&s| tx.data[s]).collect();
        let ng = self.needs(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            Op::Permute { x, src },
            ng,
        ))
    }

    /// Mean squared error `1/N sum (target - pred)^2` over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape != tt.shape || tp.is_empty() {
            return Err(shape_err("mse_loss", &tp.shape, &tt.shape));
        }
        let n = tp.len() as f64;
        let v = tp.data.iter().zip(&tt.data).map(|(a, y)| (y - a).powi(2)).sum::<f64>() / n;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Tensor {
                shape: vec![1],
                data: vec![v],
            },
            Op::Mse(pred, target),
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data.iter().sum();
        let ng = self.needs(x);
        self.push(
            Tensor {
                shape: vec![1],
                data: vec![v],
            },
            Op::Sum(x),
            ng,
        )
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&contrib) {
                    *a += b;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    /// Back-propagates from a single-element `target`. Gradients of earlier
    /// calls are cleared first. Intermediate gradients are released once
    /// consumed; leaves keep theirs.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(shape_err("backward", &self.value(target).shape, &[1]));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.needs(target) {
            return Ok(());
        }
        self.nodes[target.0].grad = Some(vec![1.0]);
        for i in (0..=target.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            for (v, g) in self.adjoints(i, dy) {
                self.accumulate(v, g);
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to its parents given its output
    /// gradient `dy`.
    fn adjoints(&self, i: usize, dy: Vec<f64>) -> Vec<(Var, Vec<f64>)> {
        let mut acc = Vec::with_capacity(3);
        let out = &self.nodes[i].value;
        let op = &self.nodes[i].op;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc.push((*a, dy.clone()));
                acc.push((*b, dy));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    acc.push((*a, dy.iter().zip(&tb.data).map(|(d, y)| d * y).collect()));
                }
                if self.needs(*b) {
                    acc.push((*b, dy.iter().zip(&ta.data).map(|(d, x)| d * x).collect()));
                }
            }
            Op::Scale(a, s) => acc.push((*a, dy.iter().map(|d| d * s).collect())),
            Op::AddRow(x, b) => {
                let n = self.value(*b).len();
                if self.needs(*b) {
                    let mut db = vec![0.0; n];
                    for row in dy.chunks_exact(n) {
                        for (acc, d) in db.iter_mut().zip(row) {
                            *acc += d;
                        }
                    }
                    acc.push((*b, db));
                }
                acc.push((*x, dy));
            }
            Op::MulRow(x, g) => {
                let (tx, tg) = (self.value(*x), self.value(*g));
                let n = tg.len();
                if self.needs(*g) {
                    let mut dg = vec![0.0; n];
                    for (row, xr) in dy.chunks_exact(n).zip(tx.data.chunks_exact(n)) {
                        for j in 0..n {
                            dg[j] += row[j] * xr[j];
                        }
                    }
                    acc.push((*g, dg));
                }
                if self.needs(*x) {
                    let mut dx = dy;
                    for row in dx.chunks_exact_mut(n) {
                        for (d, gg) in row.iter_mut().zip(&tg.data) {
                            *d *= gg;
                        }
                    }
                    acc.push((*x, dx));
                }
            }
            Op::MatMul(a, b) | Op::Linear(a, b, _) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &dy, (n, 1), &tb.data, (1, n), &mut da, 0.0);
                    acc.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, &ta.data, (1, k), &dy, (n, 1), &mut db, 0.0);
                    acc.push((*b, db));
                }
                if let Op::Linear(_, _, bias) = op {
                    if self.needs(*bias) {
                        let mut dbias = vec![0.0; n];
                        for row in dy.chunks_exact(n) {
                            for (acc, d) in dbias.iter_mut().zip(row) {
                                *acc += d;
                            }
                        }
                        acc.push((*bias, dbias));
                    }
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bt, m, k) = (ta.shape[0], ta.shape[1], ta.shape[2]);
                let n = out.shape[2];
                if self.needs(*a) {
                    let mut da = vec![0.0; bt * m * k];
                    // dA = dC B^T, with B stored [k, n] or [n, k].
                    let bs = if *transpose_b { (k, 1) } else { (1, n) };
                    for i in 0..bt {
                        gemm(
                            m,
                            n,
                            k,
                            &dy[i * m * n..(i + 1) * m * n],
                            (n, 1),
                            &tb.data[i * k * n..(i + 1) * k * n],
                            bs,
                            &mut da[i * m * k..(i + 1) * m * k],
                            0.0,
                        );
                    }
                    acc.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; bt * k * n];
                    for i in 0..bt {
                        let a_i = &ta.data[i * m * k..(i + 1) * m * k];
                        let dy_i = &dy[i * m * n..(i + 1) * m * n];
                        let db_i = &mut db[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // dB[n, k] = dC^T A
                            gemm(n, m, k, dy_i, (1, n), a_i, (k, 1), db_i, 0.0);
                        } else {
                            // dB[k, n] = A^T dC
                            gemm(k, m, n, a_i, (1, k), dy_i, (n, 1), db_i, 0.0);
                        }
                    }
                    acc.push((*b, db));
                }
            }
            Op::Relu(x) => {
                let dx = dy
                    .iter()
                    .zip(&out.data)
                    .map(|(d, y)| if *y > 0.0 { *d } else { 0.0 })
                    .collect();
                acc.push((*x, dx));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(&out.shape, *axis);
                let y = &out.data;
                let mut dx = dy;
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| dx[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            dx[p] = y[p] * (dx[p] - dot);
                        }
                    }
                }
                acc.push((*x, dx));
            }
            Op::LayerNorm { x, axis, inv_std } => {
                let (outer, len, inner) = split_axis(&out.shape, *axis);
                let y = &out.data;
                let nf = len as f64;
                let mut dx = dy;
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let s = inv_std[o * inner + i];
                        let (mut sd, mut sdy) = (0.0, 0.0);
                        for j in 0..len {
                            let p = base + j * inner;
                            sd += dx[p];
                            sdy += dx[p] * y[p];
                        }
                        for j in 0..len {
                            let p = base + j * inner;
                            dx[p] = s / nf * (nf * dx[p] - sd - y[p] * sdy);
                        }
                    }
                }
                acc.push((*x, dx));
            }
            Op::Dropout { x, mask } => {
                acc.push((*x, dy.iter().zip(mask).map(|(d, m)| d * m).collect()));
            }
            Op::Reshape(x) => acc.push((*x, dy)),
            Op::Permute { x, src } => {
                let mut dx = vec![0.0; dy.len()];
                for (d, &s) in dy.iter().zip(src) {
                    dx[s] = *d;
                }
                acc.push((*x, dx));
            }
            Op::Mse(p, t) => {
                let (tp, tt) = (self.value(*p), self.value(*t));
                let scale = 2.0 * dy[0] / tp.len() as f64;
                let diff: Vec<f64> = tp.data.iter().zip(&tt.data).map(|(a, y)| (a - y) * scale).collect();
                if self.needs(*t) {
                    acc.push((*t, diff.iter().map(|d| -d).collect()));
                }
                acc.push((*p, diff));
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc.push((*x, vec![dy[0]; n]));
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_backward() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data, vec![0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[4, 6], |i| (i as f64 * 0.37).sin() * 5.0));
        for axis in 0..2 {
            let y = g.softmax(x, axis).unwrap();
            let t = g.value(y);
            let (outer, len, inner) = split_axis(&t.shape, axis);
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..len).map(|j| t.data[o * len * inner + j * inner + i]).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn layer_norm_moments() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 32], |i| (i as f64 * 1.3).cos() * 4.0 + 2.0));
        let y = g.layer_norm(x, 1, 1e-12).unwrap();
        for row in g.value(y).data.chunks(32) {
            let mean = row.iter().sum::<f64>() / 32.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_statistics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[100_000], 1.0));
        let y = g.dropout(x, 0.1, 42, Mode::Train).unwrap();
        let t = g.value(y);
        let zeros = t.data.iter().filter(|&&v| v == 0.0).count() as f64 / t.len() as f64;
        assert!((zeros - 0.1).abs() < 0.02, "{zeros}");
        assert!(t.data.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
        let e = g.dropout(x, 0.1, 42, Mode::Eval).unwrap();
        assert_eq!(e, x);
        assert!(g.dropout(x, 1.0, 0, Mode::Train).is_err());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, c).is_err());
        assert!(g.mse_loss(a, c).is_err());
        assert!(g.reshape(a, &[4]).is_err());
        assert!(g.permute(a, &[0, 0]).is_err());
    }

    #[test]
    fn permute_moves_axes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        let t = g.value(y);
        assert_eq!(t.shape, vec![4, 2, 3]);
        // y[c][a][b] = x[a][b][c] = a*12 + b*4 + c
        assert_eq!(t.data[(3 * 2 + 1) * 3 + 2], (12 + 2 * 4 + 3) as f64);
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let y = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let a = g.constant(Tensor::zeros(&[2]));
        let l = g.mse_loss(a, y).unwrap();
        assert_eq!(g.value(l).data[0], 0.5);
        let l0 = g.mse_loss(y, y).unwrap();
        assert_eq!(g.value(l0).data[0], 0.0);
    }
}
