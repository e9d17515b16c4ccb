//! Tape-based reverse-mode differentiation.
//!
//! Every operation computes its value eagerly and appends a node to the
//! tape. [`Graph::backward`] walks the tape once in reverse and returns the
//! gradient of a scalar with respect to every parameter leaf, in the order
//! the parameters were registered.

use super::{NnError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    /// `W x` with `W: m x n`, `x: n`.
    MatVec(Var, Var),
    /// `M^T a` with `M: k x n`, `a: k`.
    MatTVec(Var, Var),
    /// `A W^T` with `A: k x n`, `W: m x n`.
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Adds a vector to every row of a matrix.
    AddRowBroadcast(Var, Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Index(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Dot(Var, Var),
    Sum(Var),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
    consumed: bool,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `softmax(x / t)` with max subtraction.
pub fn softmax(x: &[f64], t: f64) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| ((v - m) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `log softmax(x / t)`.
pub fn log_softmax(x: &[f64], t: f64) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| ((v - m) / t).exp()).sum::<f64>().ln();
    x.iter().map(|v| (v - m) / t - lse).collect()
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let n = w.cols();
    assert_eq!(n, x.len(), "matvec: {:?} x {}", w.shape(), x.len());
    w.data()
        .chunks_exact(n)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input. No gradient is reported for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable leaf. Gradients come back in registration order.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let v = self.push(t.clone(), Op::Param);
        self.params.push(v);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let out = matvec(self.value(w), self.value(x).data());
        self.push(Tensor::vector(out), Op::MatVec(w, x))
    }

    pub fn mat_t_vec(&mut self, m: Var, a: Var) -> Var {
        let mt = self.value(m);
        let av = self.value(a).data();
        assert_eq!(mt.rows(), av.len());
        let mut out = vec![0.0; mt.cols()];
        for (r, &ar) in av.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(mt.row(r)) {
                *o += ar * x;
            }
        }
        self.push(Tensor::vector(out), Op::MatTVec(m, a))
    }

    pub fn matmul_t(&mut self, a: Var, w: Var) -> Var {
        let at = self.value(a);
        let wt = self.value(w);
        assert_eq!(at.cols(), wt.cols());
        let (k, m) = (at.rows(), wt.rows());
        let mut out = Vec::with_capacity(k * m);
        for i in 0..k {
            out.extend(matvec(wt, at.row(i)));
        }
        let t = Tensor::matrix(k, m, out).expect("shape");
        self.push(t, Op::MatMulT(a, w))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("shape");
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("shape");
        self.push(t, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Var {
        let mt = self.value(m);
        let vv = self.value(v).data();
        assert_eq!(mt.cols(), vv.len());
        let data = mt
            .data()
            .chunks_exact(vv.len())
            .flat_map(|row| row.iter().zip(vv).map(|(a, b)| a + b))
            .collect();
        let t = Tensor::new(mt.shape().to_vec(), data).expect("shape");
        self.push(t, Op::AddRowBroadcast(m, v))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.value(*p).data().iter().copied())
            .collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty());
        let cols = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let v = self.value(*r).data();
            assert_eq!(v.len(), cols);
            data.extend_from_slice(v);
        }
        let t = Tensor::matrix(rows.len(), cols, data).expect("shape");
        self.push(t, Op::StackRows(rows.to_vec()))
    }

    pub fn row(&mut self, m: Var, r: usize) -> Var {
        let v = self.value(m).row(r).to_vec();
        self.push(Tensor::vector(v), Op::Row(m, r))
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let v = self.value(a).data()[i];
        self.push(Tensor::scalar(v), Op::Index(a, i))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a).data(), self.value(b).data());
        assert_eq!(x.len(), y.len());
        let v = x.iter().zip(y).map(|(p, q)| p * q).sum();
        self.push(Tensor::scalar(v), Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(v), Op::Sum(a))
    }

    pub fn softmax(&mut self, a: Var, t: f64) -> Var {
        let y = softmax(self.value(a).data(), t);
        self.push(Tensor::vector(y), Op::Softmax(a, t))
    }

    pub fn log_softmax(&mut self, a: Var, t: f64) -> Var {
        let y = log_softmax(self.value(a).data(), t);
        self.push(Tensor::vector(y), Op::LogSoftmax(a, t))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf,
    /// in registration order. Unreached parameters get zero gradients. A
    /// graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<Tensor>, NnError> {
        if self.consumed {
            return Err(NnError::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::ShapeMismatch(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let out = &nodes[i].value;
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Param => {
                    grads[i] = Some(g);
                }
                Op::MatVec(w, x) => {
                    let wt = &nodes[w.0].value;
                    let xv = nodes[x.0].value.data().to_vec();
                    let n = wt.cols();
                    {
                        let gw = slot(&mut grads, nodes, *w);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                for (a, &b) in gw[r * n..(r + 1) * n].iter_mut().zip(&xv) {
                                    *a += gr * b;
                                }
                            }
                        }
                    }
                    let gx = slot(&mut grads, nodes, *x);
                    for (r, &gr) in g.iter().enumerate() {
                        for (a, &b) in gx.iter_mut().zip(wt.row(r)) {
                            *a += gr * b;
                        }
                    }
                }
                Op::MatTVec(m, a) => {
                    let mt = &nodes[m.0].value;
                    let av = nodes[a.0].value.data().to_vec();
                    let n = mt.cols();
                    {
                        let gm = slot(&mut grads, nodes, *m);
                        for (r, &ar) in av.iter().enumerate() {
                            for (x, &gc) in gm[r * n..(r + 1) * n].iter_mut().zip(&g) {
                                *x += ar * gc;
                            }
                        }
                    }
                    let ga = slot(&mut grads, nodes, *a);
                    for (r, x) in ga.iter_mut().enumerate() {
                        *x += mt.row(r).iter().zip(&g).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
                Op::MatMulT(a, w) => {
                    // out[i][j] = sum_c A[i][c] W[j][c]
                    let at = &nodes[a.0].value;
                    let wt = &nodes[w.0].value;
                    let (k, m, n) = (at.rows(), wt.rows(), at.cols());
                    {
                        let ga = slot(&mut grads, nodes, *a);
                        for i in 0..k {
                            for j in 0..m {
                                let gij = g[i * m + j];
                                for c in 0..n {
                                    ga[i * n + c] += gij * wt.data()[j * n + c];
                                }
                            }
                        }
                    }
                    let gw = slot(&mut grads, nodes, *w);
                    for i in 0..k {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            for c in 0..n {
                                gw[j * n + c] += gij * at.data()[i * n + c];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let s = slot(&mut grads, nodes, v);
                        s.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Sub(a, b) => {
                    let s = slot(&mut grads, nodes, *a);
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    let s = slot(&mut grads, nodes, *b);
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Mul(a, b) => {
                    let av = nodes[a.0].value.data().to_vec();
                    let bv = nodes[b.0].value.data().to_vec();
                    let s = slot(&mut grads, nodes, *a);
                    for ((x, y), q) in s.iter_mut().zip(&g).zip(&bv) {
                        *x += y * q;
                    }
                    let s = slot(&mut grads, nodes, *b);
                    for ((x, y), p) in s.iter_mut().zip(&g).zip(&av) {
                        *x += y * p;
                    }
                }
                Op::Scale(a, c) => {
                    let s = slot(&mut grads, nodes, *a);
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += y * c);
                }
                Op::AddRowBroadcast(m, v) => {
                    let cols = nodes[v.0].value.len();
                    let s = slot(&mut grads, nodes, *m);
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    let s = slot(&mut grads, nodes, *v);
                    for row in g.chunks_exact(cols) {
                        s.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Concat(parts) | Op::StackRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        let s = slot(&mut grads, nodes, *p);
                        s.iter_mut().zip(&g[off..off + len]).for_each(|(x, y)| *x += y);
                        off += len;
                    }
                }
                Op::Row(m, r) => {
                    let cols = nodes[m.0].value.cols();
                    let s = slot(&mut grads, nodes, *m);
                    s[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, y)| *x += y);
                }
                Op::Index(a, i) => {
                    slot(&mut grads, nodes, *a)[*i] += g[0];
                }
                Op::Sigmoid(a) => {
                    let s = slot(&mut grads, nodes, *a);
                    for ((x, y), o) in s.iter_mut().zip(&g).zip(out.data()) {
                        *x += y * o * (1.0 - o);
                    }
                }
                Op::Tanh(a) => {
                    let s = slot(&mut grads, nodes, *a);
                    for ((x, y), o) in s.iter_mut().zip(&g).zip(out.data()) {
                        *x += y * (1.0 - o * o);
                    }
                }
                Op::Relu(a) => {
                    let s = slot(&mut grads, nodes, *a);
                    for ((x, y), o) in s.iter_mut().zip(&g).zip(out.data()) {
                        if *o > 0.0 {
                            *x += y;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let av = nodes[a.0].value.data().to_vec();
                    let bv = nodes[b.0].value.data().to_vec();
                    let s = slot(&mut grads, nodes, *a);
                    s.iter_mut().zip(&bv).for_each(|(x, q)| *x += g[0] * q);
                    let s = slot(&mut grads, nodes, *b);
                    s.iter_mut().zip(&av).for_each(|(x, p)| *x += g[0] * p);
                }
                Op::Sum(a) => {
                    let s = slot(&mut grads, nodes, *a);
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Softmax(a, t) => {
                    let y = out.data();
                    let gy: f64 = g.iter().zip(y).map(|(p, q)| p * q).sum();
                    let s = slot(&mut grads, nodes, *a);
                    for ((x, gi), yi) in s.iter_mut().zip(&g).zip(y) {
                        *x += yi * (gi - gy) / t;
                    }
                }
                Op::LogSoftmax(a, t) => {
                    let total: f64 = g.iter().sum();
                    let s = slot(&mut grads, nodes, *a);
                    for ((x, gi), yi) in s.iter_mut().zip(&g).zip(out.data()) {
                        *x += (gi - yi.exp() * total) / t;
                    }
                }
            }
        }

        Ok(self
            .params
            .iter()
            .map(|p| {
                let shape = self.nodes[p.0].value.shape().to_vec();
                match grads.get_mut(p.0).and_then(Option::take) {
                    Some(g) => Tensor::new(shape, g).expect("gradient shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let theta = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let mut g = Graph::new();
        let t = g.param(&theta);
        let sq = g.mul(t, t);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[0].data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn constant_loss_zero_gradient() {
        let mut g = Graph::new();
        let p = g.param(&Tensor::vector(vec![1.0, 2.0]));
        let c = g.input(Tensor::scalar(3.0));
        let loss = g.scale(c, 2.0);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.len(), 1);
        assert!(grads[0].data().iter().all(|&v| v == 0.0));
        let _ = p;
    }

    #[test]
    fn second_backward_fails() {
        let mut g = Graph::new();
        let p = g.param(&Tensor::scalar(2.0));
        let loss = g.mul(p, p);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(NnError::GraphConsumed)));
    }

    #[test]
    fn softmax_matches_exp_log_softmax() {
        let x = [0.3, -1.2, 2.5, 0.0];
        for t in [0.5, 1.0, 15.0] {
            let p = softmax(&x, t);
            let lp = log_softmax(&x, t);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&lp) {
                assert!((a.ln() - b).abs() < 1e-12);
            }
        }
    }
}
