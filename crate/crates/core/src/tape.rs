//! Dynamic reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so walking the node list backwards from the loss visits
//! every operation after all of its consumers, exactly once.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{sigmoid_scalar, softmax_into, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: u32,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Concat(Var, Var),
    Row(Var, usize),
    Dot(Var, Var),
    Stack(Vec<Var>),
    WeightedSum(Var, Vec<Var>),
    MaskedSoftmax(Var),
    Sum(Var),
    AddN(Vec<Var>),
    SoftmaxXent(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatVec(..) => "matvec",
            Op::MatTVec(..) => "matvec_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::Concat(..) => "concat",
            Op::Row(..) => "row",
            Op::Dot(..) => "dot",
            Op::Stack(..) => "stack",
            Op::WeightedSum(..) => "weighted_sum",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::Sum(..) => "sum",
            Op::AddN(..) => "add_n",
            Op::SoftmaxXent(..) => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    // Softmax probabilities kept for the backward pass of the fused ops.
    aux: Vec<f64>,
}

#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    first_non_finite: Option<&'static str>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node {
        debug_assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx as usize]
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, aux: Vec<f64>) -> Var {
        if self.first_non_finite.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.first_non_finite = Some(op.name());
        }
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            aux,
        });
        Var {
            tape: self.id,
            idx: (self.nodes.len() - 1) as u32,
        }
    }

    /// Error naming the first operation whose output was NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            None => Ok(()),
            Some(op) => Err(Error::NonFinite { op: op.to_string() }),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "not a scalar");
        n.value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        let shape = if n.cols == 1 {
            vec![n.rows]
        } else {
            vec![n.rows, n.cols]
        };
        Tensor::new(shape, n.value.clone()).expect("consistent node shape")
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.node(v).value.len()
    }

    /// A constant vector.
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(values, n, 1, Op::Input, Vec::new())
    }

    /// A constant matrix (rows x cols).
    pub fn input_matrix(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        assert_eq!(rows * cols, values.len());
        self.push(values, rows, cols, Op::Input, Vec::new())
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    /// Leaf bound to a stored parameter; gradients flow back into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = &store.get(id).value;
        let (rows, cols) = match p.shape() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            s => panic!("parameters are 1-d or 2-d, got {s:?}"),
        };
        self.push(p.data().to_vec(), rows, cols, Op::Param(id), Vec::new())
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (wn, xn) = (self.node(w), self.node(x));
        assert_eq!(
            wn.cols,
            xn.value.len(),
            "matvec: {}x{} by {}",
            wn.rows,
            wn.cols,
            xn.value.len()
        );
        let (r, c) = (wn.rows, wn.cols);
        let out = wn.value.chunks_exact(c).map(|row| dot(row, &xn.value)).collect();
        self.push(out, r, 1, Op::MatVec(w, x), Vec::new())
    }

    /// `W^T x`.
    pub fn matvec_t(&mut self, w: Var, x: Var) -> Var {
        let (wn, xn) = (self.node(w), self.node(x));
        assert_eq!(
            wn.rows,
            xn.value.len(),
            "matvec_t: {}x{} by {}",
            wn.rows,
            wn.cols,
            xn.value.len()
        );
        let c = wn.cols;
        let mut out = vec![0.0; c];
        for (row, &xi) in wn.value.chunks_exact(c).zip(&xn.value) {
            axpy(xi, row, &mut out);
        }
        self.push(out, c, 1, Op::MatTVec(w, x), Vec::new())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (an, bn) = (self.node(a), self.node(b));
        assert_eq!(an.value.len(), bn.value.len(), "{}: length mismatch", op.name());
        let out = an.value.iter().zip(&bn.value).map(|(&x, &y)| f(x, y)).collect();
        let (rows, cols) = (an.rows, an.cols);
        self.push(out, rows, cols, op, Vec::new())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(a);
        let out = n.value.iter().map(|&x| f(x)).collect();
        let (rows, cols) = (n.rows, n.cols);
        self.push(out, rows, cols, op, Vec::new())
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |x| x * k)
    }

    /// `a + k` elementwise.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Offset(a), |x| x + k)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.node(a).value.clone();
        out.extend_from_slice(&self.node(b).value);
        let n = out.len();
        self.push(out, n, 1, Op::Concat(a, b), Vec::new())
    }

    /// Row `index` of matrix `w` as a vector (embedding lookup).
    pub fn row(&mut self, w: Var, index: usize) -> Var {
        let n = self.node(w);
        assert!(index < n.rows, "row {index} out of {}", n.rows);
        let c = n.cols;
        let out = n.value[index * c..(index + 1) * c].to_vec();
        self.push(out, c, 1, Op::Row(w, index), Vec::new())
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (an, bn) = (self.node(a), self.node(b));
        assert_eq!(an.value.len(), bn.value.len(), "dot: length mismatch");
        let v = dot(&an.value, &bn.value);
        self.push(vec![v], 1, 1, Op::Dot(a, b), Vec::new())
    }

    /// Gather scalars into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let out: Vec<f64> = scalars.iter().map(|&s| self.scalar(s)).collect();
        let n = out.len();
        self.push(out, n, 1, Op::Stack(scalars.to_vec()), Vec::new())
    }

    /// `sum_i w[i] * vs[i]`.
    pub fn weighted_sum(&mut self, w: Var, vs: &[Var]) -> Var {
        let weights = self.node(w).value.clone();
        assert_eq!(
            weights.len(),
            vs.len(),
            "weighted_sum: {} weights for {} vectors",
            weights.len(),
            vs.len()
        );
        let d = self.node(vs[0]).value.len();
        let mut out = vec![0.0; d];
        for (&wi, &v) in weights.iter().zip(vs) {
            let vv = &self.node(v).value;
            assert_eq!(vv.len(), d, "weighted_sum: ragged vectors");
            axpy(wi, vv, &mut out);
        }
        self.push(out, d, 1, Op::WeightedSum(w, vs.to_vec()), Vec::new())
    }

    /// Softmax over the entries where `keep` is true; other entries are 0.
    /// The mask is stored in `aux` as 1.0 / 0.0.
    pub fn masked_softmax(&mut self, s: Var, keep: &[bool]) -> Var {
        let sv = &self.node(s).value;
        assert_eq!(sv.len(), keep.len());
        assert!(keep.iter().any(|&k| k), "masked_softmax: every entry masked");
        let kept: Vec<f64> = sv.iter().zip(keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect();
        let mut probs = vec![0.0; kept.len()];
        softmax_into(&kept, &mut probs);
        let mut out = vec![0.0; sv.len()];
        let mut it = probs.into_iter();
        for (o, &k) in out.iter_mut().zip(keep) {
            if k {
                *o = it.next().unwrap();
            }
        }
        let mask = keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        let n = out.len();
        self.push(out, n, 1, Op::MaskedSoftmax(s), mask)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.node(a).value.iter().sum();
        self.push(vec![v], 1, 1, Op::Sum(a), Vec::new())
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let first = self.node(xs[0]);
        let (rows, cols) = (first.rows, first.cols);
        let mut out = first.value.clone();
        for &x in &xs[1..] {
            let xv = &self.node(x).value;
            assert_eq!(xv.len(), out.len(), "add_n: length mismatch");
            axpy(1.0, xv, &mut out);
        }
        self.push(out, rows, cols, Op::AddN(xs.to_vec()), Vec::new())
    }

    /// `-log softmax(logits)[target]`, fused for stability.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Var {
        let lv = &self.node(logits).value;
        assert!(target < lv.len(), "target {target} out of {}", lv.len());
        let mut probs = vec![0.0; lv.len()];
        softmax_into(lv, &mut probs);
        let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - lv[target];
        self.push(vec![loss], 1, 1, Op::SoftmaxXent(logits, target), probs)
    }

    /// Accumulate d`loss`/d`param` into every parameter's gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.tape != self.id || loss.idx as usize >= self.nodes.len() {
            return Err(Error::InvalidArgument("loss is not on this tape".into()));
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::InvalidArgument("loss must be a scalar".into()));
        }
        self.check_finite()?;

        let end = loss.idx as usize + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..end).map(|_| None).collect();
        grads[end - 1] = Some(vec![1.0]);

        for i in (0..end).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    op: format!("backward of {}", node.op.name()),
                });
            }
            self.propagate(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                let pg = store.get_mut(*id).grad.data_mut();
                axpy(1.0, g, pg);
            }
            Op::MatVec(w, x) => {
                let (wn, xn) = (self.node(*w), self.node(*x));
                let c = wn.cols;
                let dw = slot(grads, *w, wn.value.len());
                for (row, &gi) in dw.chunks_exact_mut(c).zip(g) {
                    axpy(gi, &xn.value, row);
                }
                let dx = slot(grads, *x, c);
                for (row, &gi) in wn.value.chunks_exact(c).zip(g) {
                    axpy(gi, row, dx);
                }
            }
            Op::MatTVec(w, x) => {
                let (wn, xn) = (self.node(*w), self.node(*x));
                let c = wn.cols;
                let dw = slot(grads, *w, wn.value.len());
                for (row, &xi) in dw.chunks_exact_mut(c).zip(&xn.value) {
                    axpy(xi, g, row);
                }
                let dx = slot(grads, *x, wn.rows);
                for (d, row) in dx.iter_mut().zip(wn.value.chunks_exact(c)) {
                    *d += dot(row, g);
                }
            }
            Op::Add(a, b) => {
                axpy(1.0, g, slot(grads, *a, g.len()));
                axpy(1.0, g, slot(grads, *b, g.len()));
            }
            Op::Sub(a, b) => {
                axpy(1.0, g, slot(grads, *a, g.len()));
                axpy(-1.0, g, slot(grads, *b, g.len()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.node(*a).value, &self.node(*b).value);
                let da = slot(grads, *a, g.len());
                for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bv) {
                    *d += gi * y;
                }
                let db = slot(grads, *b, g.len());
                for ((d, &gi), &x) in db.iter_mut().zip(g).zip(av) {
                    *d += gi * x;
                }
            }
            Op::Scale(a, k) => axpy(*k, g, slot(grads, *a, g.len())),
            Op::Offset(a) => axpy(1.0, g, slot(grads, *a, g.len())),
            Op::Sigmoid(a) => {
                let da = slot(grads, *a, g.len());
                for ((d, &gi), &y) in da.iter_mut().zip(g).zip(&node.value) {
                    *d += gi * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let da = slot(grads, *a, g.len());
                for ((d, &gi), &y) in da.iter_mut().zip(g).zip(&node.value) {
                    *d += gi * (1.0 - y * y);
                }
            }
            Op::Exp(a) => {
                let da = slot(grads, *a, g.len());
                for ((d, &gi), &y) in da.iter_mut().zip(g).zip(&node.value) {
                    *d += gi * y;
                }
            }
            Op::Square(a) => {
                let av = &self.node(*a).value;
                let da = slot(grads, *a, g.len());
                for ((d, &gi), &x) in da.iter_mut().zip(g).zip(av) {
                    *d += 2.0 * gi * x;
                }
            }
            Op::Concat(a, b) => {
                let na = self.node(*a).value.len();
                axpy(1.0, &g[..na], slot(grads, *a, na));
                let nb = g.len() - na;
                axpy(1.0, &g[na..], slot(grads, *b, nb));
            }
            Op::Row(w, index) => {
                let wn = self.node(*w);
                let c = wn.cols;
                let dw = slot(grads, *w, wn.value.len());
                axpy(1.0, g, &mut dw[index * c..(index + 1) * c]);
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&self.node(*a).value, &self.node(*b).value);
                axpy(g[0], bv, slot(grads, *a, av.len()));
                axpy(g[0], av, slot(grads, *b, bv.len()));
            }
            Op::Stack(xs) => {
                for (&x, &gi) in xs.iter().zip(g) {
                    slot(grads, x, 1)[0] += gi;
                }
            }
            Op::WeightedSum(w, vs) => {
                let weights = &self.node(*w).value;
                let dw: Vec<f64> = vs.iter().map(|&v| dot(&self.node(v).value, g)).collect();
                axpy(1.0, &dw, slot(grads, *w, weights.len()));
                for (&v, &wi) in vs.iter().zip(weights) {
                    axpy(wi, g, slot(grads, v, g.len()));
                }
            }
            Op::MaskedSoftmax(s) => {
                let y = &node.value;
                let inner = dot(y, g);
                let ds = slot(grads, *s, g.len());
                for (((d, &gi), &yi), &keep) in ds.iter_mut().zip(g).zip(y).zip(&node.aux) {
                    if keep != 0.0 {
                        *d += yi * (gi - inner);
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.node(*a).value.len();
                for d in slot(grads, *a, n).iter_mut() {
                    *d += g[0];
                }
            }
            Op::AddN(xs) => {
                for &x in xs {
                    axpy(1.0, g, slot(grads, x, g.len()));
                }
            }
            Op::SoftmaxXent(logits, target) => {
                let probs = &node.aux;
                let dl = slot(grads, *logits, probs.len());
                axpy(g[0], probs, dl);
                dl[*target] -= g[0];
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.idx as usize].get_or_insert_with(|| vec![0.0; len])
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(k: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += k * xi;
    }
}
