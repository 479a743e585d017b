//! Reverse-mode automatic differentiation over dense `f64` vectors and
//! row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! through [`Tape::param`], which copies the current value out of a
//! [`ParamStore`] once per tape; [`Tape::backward`] then produces a
//! [`ParamGrads`] aligned with that store. Parameters that never entered the
//! tape receive an exact zero gradient.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::{ParamGrads, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    TMatVec(Var, Var),
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSigmoid(Var),
    Square(Var),
    Pick(Var, usize),
    Sum(Var),
    SumN(Vec<Var>),
    Dot(Var, Var),
    Norm2(Var),
    Norm1(Var),
}

#[derive(Clone, Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// A single recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant column vector.
    pub fn vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(n, 1, value, Op::Leaf)
    }

    /// Constant row-major matrix.
    pub fn matrix(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "matrix shape does not match data");
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(1, 1, vec![value], Op::Leaf)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.rows, p.cols, p.data.clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        debug_assert_eq!(n.value.len(), 1);
        n.value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Number of elements of a vector node.
    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// `m · v` for an `r × c` matrix and a length-`c` vector.
    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let (r, c) = self.shape(m);
        assert_eq!(c, self.dim(v), "matvec: dimension mismatch");
        let mv = &self.nodes[m.0].value;
        let vv = &self.nodes[v.0].value;
        let out: Vec<f64> = mv.chunks_exact(c).map(|row| math::dot(row, vv)).collect();
        debug_assert_eq!(out.len(), r);
        self.push(r, 1, out, Op::MatVec(m, v))
    }

    /// `mᵀ · v` for an `r × c` matrix and a length-`r` vector.
    pub fn tmatvec(&mut self, m: Var, v: Var) -> Var {
        let (r, c) = self.shape(m);
        assert_eq!(r, self.dim(v), "tmatvec: dimension mismatch");
        let mut out = vec![0.0; c];
        {
            let mv = &self.nodes[m.0].value;
            let vv = &self.nodes[v.0].value;
            for (row, &w) in mv.chunks_exact(c).zip(vv) {
                math::axpy(&mut out, w, row);
            }
        }
        self.push(c, 1, out, Op::TMatVec(m, v))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack: no rows");
        let c = self.dim(rows[0]);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            assert_eq!(self.dim(r), c, "stack: ragged rows");
            out.extend_from_slice(&self.nodes[r.0].value);
        }
        self.push(rows.len(), c, out, Op::Stack(rows.to_vec()))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let n = out.len();
        self.push(n, 1, out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[v.0].value[start..start + len].to_vec();
        self.push(len, 1, out, Op::Slice(v, start))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let (r, c) = self.shape(m);
        assert!(i < r, "row: index out of range");
        let out = self.nodes[m.0].value[i * c..(i + 1) * c].to_vec();
        self.push(c, 1, out, Op::Row(m, i))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.dim(a), self.dim(b), "elementwise: dimension mismatch");
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(r, c, out, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x + k, Op::AddConst(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, libm::tanh, Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = math::softmax(&self.nodes[a.0].value);
        let n = out.len();
        self.push(n, 1, out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = math::log_softmax(&self.nodes[a.0].value);
        let n = out.len();
        self.push(n, 1, out, Op::LogSoftmax(a))
    }

    /// Elementwise `log σ(x)`, computed stably.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, math::log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Scalar element `i` of a vector.
    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let x = self.nodes[a.0].value[i];
        self.push(1, 1, vec![x], Op::Pick(a, i))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum_n: nothing to sum");
        let (r, c) = self.shape(parts[0]);
        let mut out = vec![0.0; r * c];
        for &p in parts {
            assert_eq!(self.dim(p), r * c, "sum_n: shape mismatch");
            for (o, &x) in out.iter_mut().zip(&self.nodes[p.0].value) {
                *o += x;
            }
        }
        self.push(r, c, out, Op::SumN(parts.to_vec()))
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean_n(&mut self, parts: &[Var]) -> Var {
        let s = self.sum_n(parts);
        self.scale(s, 1.0 / parts.len() as f64)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dim(a), self.dim(b), "dot: dimension mismatch");
        let d = math::dot(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(1, 1, vec![d], Op::Dot(a, b))
    }

    /// Euclidean norm. The subgradient at the origin is taken as zero.
    pub fn norm2(&mut self, a: Var) -> Var {
        let n = libm::sqrt(self.nodes[a.0].value.iter().map(|x| x * x).sum());
        self.push(1, 1, vec![n], Op::Norm2(a))
    }

    pub fn norm1(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.iter().map(|x| libm::fabs(*x)).sum();
        self.push(1, 1, vec![n], Op::Norm1(a))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let wx = self.matvec(w, x);
        self.add(wx, b)
    }

    /// Back-propagates from the scalar `loss` and returns gradients for every
    /// parameter of `store`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> ParamGrads {
        let grads = self.node_grads(loss);
        let mut out = ParamGrads::zeros_like(store);
        for (&id, &v) in &self.params {
            if let Some(g) = &grads[v.0] {
                out.get_mut(id).copy_from_slice(g);
            }
        }
        out
    }

    /// Gradient of the scalar `loss` with respect to an arbitrary node.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Vec<f64> {
        let grads = self.node_grads(loss);
        grads[wrt.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.dim(wrt)])
    }

    fn node_grads(&self, loss: Var) -> Vec<Option<Vec<f64>>> {
        assert_eq!(self.dim(loss), 1, "backward: loss must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        match &node.op {
            Op::Leaf => {}
            Op::MatVec(m, v) => {
                let (_, c) = self.shape(*m);
                let mv = val(*m);
                let vv = val(*v);
                let gm = acc(grads, *m, mv.len());
                for (row, &gi) in gm.chunks_exact_mut(c).zip(g) {
                    if gi != 0.0 {
                        math::axpy(row, gi, vv);
                    }
                }
                let gv = acc(grads, *v, c);
                for (row, &gi) in mv.chunks_exact(c).zip(g) {
                    if gi != 0.0 {
                        math::axpy(gv, gi, row);
                    }
                }
            }
            Op::TMatVec(m, v) => {
                let (r, c) = self.shape(*m);
                let mv = val(*m);
                let vv = val(*v);
                let gm = acc(grads, *m, mv.len());
                for (row, &w) in gm.chunks_exact_mut(c).zip(vv) {
                    if w != 0.0 {
                        math::axpy(row, w, g);
                    }
                }
                let gv = acc(grads, *v, r);
                for (o, row) in gv.iter_mut().zip(mv.chunks_exact(c)) {
                    *o += math::dot(row, g);
                }
            }
            Op::Stack(rows) => {
                let c = node.cols;
                for (k, &r) in rows.iter().enumerate() {
                    let gr = acc(grads, r, c);
                    math::axpy(gr, 1.0, &g[k * c..(k + 1) * c]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.dim(p);
                    let gp = acc(grads, p, n);
                    math::axpy(gp, 1.0, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Slice(v, start) => {
                let n = self.dim(*v);
                let gv = acc(grads, *v, n);
                math::axpy(&mut gv[*start..*start + g.len()], 1.0, g);
            }
            Op::Row(m, r) => {
                let n = self.dim(*m);
                let c = g.len();
                let gm = acc(grads, *m, n);
                math::axpy(&mut gm[r * c..(r + 1) * c], 1.0, g);
            }
            Op::Add(a, b) => {
                math::axpy(acc(grads, *a, g.len()), 1.0, g);
                math::axpy(acc(grads, *b, g.len()), 1.0, g);
            }
            Op::Sub(a, b) => {
                math::axpy(acc(grads, *a, g.len()), 1.0, g);
                math::axpy(acc(grads, *b, g.len()), -1.0, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                    *o += gi * y;
                }
                let gb = acc(grads, *b, g.len());
                for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                    *o += gi * x;
                }
            }
            Op::Scale(a, k) => math::axpy(acc(grads, *a, g.len()), *k, g),
            Op::AddConst(a) => math::axpy(acc(grads, *a, g.len()), 1.0, g),
            Op::Sigmoid(a) => {
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *o += gi * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *o += gi * (1.0 - y * y);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy = math::dot(g, y);
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += yi * (gi - gy);
                }
            }
            Op::LogSoftmax(a) => {
                let gs: f64 = g.iter().sum();
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &ly) in ga.iter_mut().zip(g).zip(&node.value) {
                    *o += gi - libm::exp(ly) * gs;
                }
            }
            Op::LogSigmoid(a) => {
                let x = val(*a);
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                    *o += gi * math::sigmoid(-xi);
                }
            }
            Op::Square(a) => {
                let x = val(*a);
                let ga = acc(grads, *a, g.len());
                for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                    *o += 2.0 * gi * xi;
                }
            }
            Op::Pick(a, k) => {
                let n = self.dim(*a);
                acc(grads, *a, n)[*k] += g[0];
            }
            Op::Sum(a) => {
                let n = self.dim(*a);
                for o in acc(grads, *a, n).iter_mut() {
                    *o += g[0];
                }
            }
            Op::SumN(parts) => {
                for &p in parts {
                    math::axpy(acc(grads, p, g.len()), 1.0, g);
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                math::axpy(acc(grads, *a, av.len()), g[0], bv);
                math::axpy(acc(grads, *b, bv.len()), g[0], av);
            }
            Op::Norm2(a) => {
                let norm = node.value[0];
                if norm > 0.0 {
                    let x = val(*a);
                    math::axpy(acc(grads, *a, x.len()), g[0] / norm, x);
                }
            }
            Op::Norm1(a) => {
                let x = val(*a);
                let ga = acc(grads, *a, x.len());
                for (o, &xi) in ga.iter_mut().zip(x) {
                    if xi > 0.0 {
                        *o += g[0];
                    } else if xi < 0.0 {
                        *o -= g[0];
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}
