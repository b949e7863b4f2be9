//! A small reverse-mode tape over dense matrices.
//!
//! Every operation appends a node holding its value and the inputs needed for
//! the backward pass. Nodes only reference earlier nodes, so walking the tape
//! from the end visits them in reverse topological order, once each.
//!
//! ```
//! use motifrec::tape::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(0, array![[3.0]]);
//! let y = tape.sum_squares(x);
//! let grads = tape.param_grads(y, 1);
//! assert_eq!(grads[0][[0, 0]], 6.0);
//! ```

use std::sync::Arc;

use ndarray::{Array2, Axis};

use crate::matching::{self, Candidates};
use crate::sparse::SparseMatrix;
use crate::ssl::{self, ShuffleMap};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    SpMM(Arc<SparseMatrix>, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Shuffle(Arc<ShuffleMap>, Var),
    GatherRows(Arc<Vec<usize>>, Var),
    RowDot(Var, Var),
    MeanRows(Var),
    SumAll(Var),
    SumSquares(Var),
    LogSigmoid(Var),
    Relu(Var),
    RowNorm(Var),
    SoftmaxRows(Var),
    Column(Var, usize),
    ConcatCols(Vec<Var>),
    RowScale(Var, Var),
    CrossAttention(Var, Var, Arc<Candidates>),
    MultiViewCosine(Var, Var, Var),
    InfoNce(Var, Var, f64),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Operation counters, used to check what a forward pass actually did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TapeStats {
    pub sparse_products: usize,
    pub attention_transitions: usize,
    pub nodes: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    stats: TapeStats,
}

/// Gradients of one scalar with respect to every node (absent when the node
/// does not influence it).
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    /// Nodes that received a gradient during the backward sweep.
    pub visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

fn add_into(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> TapeStats {
        TapeStats {
            nodes: self.nodes.len(),
            ..self.stats
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for trainable tensor `index`.
    pub fn param(&mut self, index: usize, value: Array2<f64>) -> Var {
        self.push(value, Op::Param(index))
    }

    pub fn spmm(&mut self, a: &Arc<SparseMatrix>, x: Var) -> Var {
        let value = a.mul_dense(self.value(x)).expect("spmm shape");
        self.stats.sparse_products += 1;
        self.push(value, Op::SpMM(Arc::clone(a), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    /// Sum of several equally-shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn shuffle(&mut self, map: &Arc<ShuffleMap>, a: Var) -> Var {
        let value = map.apply(self.value(a));
        self.push(value, Op::Shuffle(Arc::clone(map), a))
    }

    pub fn gather_rows(&mut self, idx: &Arc<Vec<usize>>, a: Var) -> Var {
        let value = self.value(a).select(Axis(0), idx);
        self.push(value, Op::GatherRows(Arc::clone(idx), a))
    }

    /// Row-wise dot products, `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let value = (self.value(a) * self.value(b))
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        self.push(value, Op::RowDot(a, b))
    }

    /// Column means, `1 × d`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = scalar(self.value(a).iter().map(|x| x * x).sum());
        self.push(value, Op::SumSquares(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(ssl::log_sigmoid);
        self.push(value, Op::LogSigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Euclidean norm of every row, `n × 1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        self.push(value, Op::RowNorm(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row /= z;
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn column(&mut self, a: Var, col: usize) -> Var {
        let value = self.value(a).column(col).to_owned().insert_axis(Axis(1));
        self.push(value, Op::Column(a, col))
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Var {
        let views: Vec<_> = vars.iter().map(|&v| self.value(v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat rows");
        self.push(value, Op::ConcatCols(vars.to_vec()))
    }

    /// `out[i] = s[i] · x[i]` with `s` an `n × 1` column.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Var {
        let value = self.value(x) * self.value(s);
        self.push(value, Op::RowScale(x, s))
    }

    pub fn cross_attention(&mut self, g1: Var, g2: Var, cands: Arc<Candidates>) -> Var {
        let value = matching::cross_attention_with(self.value(g1), self.value(g2), &cands);
        self.stats.attention_transitions += 1;
        self.push(value, Op::CrossAttention(g1, g2, cands))
    }

    pub fn multi_view_cosine(&mut self, v1: Var, v2: Var, views: Var) -> Var {
        let value =
            matching::multi_view_cosine_rows(self.value(v1), self.value(v2), self.value(views));
        self.push(value, Op::MultiViewCosine(v1, v2, views))
    }

    pub fn infonce(&mut self, a: Var, b: Var, tau: f64) -> Var {
        let value =
            scalar(ssl::infonce_batch(self.value(a), self.value(b), tau).expect("infonce shape"));
        self.push(value, Op::InfoNce(a, b, tau))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones(self.value(loss).dim()));
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            visited += 1;
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::SpMM(a, x) => add_into(
                    &mut grads[x.0],
                    a.transpose().mul_dense(&g).expect("spmm grad"),
                ),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&val(*b).t());
                    let gb = val(*a).t().dot(&g);
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], g.clone());
                    add_into(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[a.0], g.clone());
                    add_into(&mut grads[b.0], -g);
                }
                Op::Scale(a, c) => add_into(&mut grads[a.0], g * *c),
                Op::Transpose(a) => add_into(&mut grads[a.0], g.t().to_owned()),
                Op::Shuffle(map, a) => add_into(&mut grads[a.0], map.apply_adjoint(&g)),
                Op::GatherRows(idx, a) => {
                    let mut out = Array2::zeros(val(*a).dim());
                    for (k, &r) in idx.iter().enumerate() {
                        out.row_mut(r).scaled_add(1.0, &g.row(k));
                    }
                    add_into(&mut grads[a.0], out);
                }
                Op::RowDot(a, b) => {
                    let ga = val(*b) * &g;
                    let gb = val(*a) * &g;
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Op::MeanRows(a) => {
                    let n = val(*a).nrows() as f64;
                    let out = Array2::from_shape_fn(val(*a).dim(), |(_, c)| g[[0, c]] / n);
                    add_into(&mut grads[a.0], out);
                }
                Op::SumAll(a) => {
                    add_into(&mut grads[a.0], Array2::from_elem(val(*a).dim(), g[[0, 0]]))
                }
                Op::SumSquares(a) => add_into(&mut grads[a.0], val(*a) * (2.0 * g[[0, 0]])),
                Op::LogSigmoid(a) => {
                    let out = ndarray::Zip::from(val(*a))
                        .and(&g)
                        .map_collect(|&x, &gg| gg * ssl::sigmoid(-x));
                    add_into(&mut grads[a.0], out);
                }
                Op::Relu(a) => {
                    let out = ndarray::Zip::from(val(*a)).and(&g).map_collect(|&x, &gg| {
                        if x > 0.0 {
                            gg
                        } else {
                            0.0
                        }
                    });
                    add_into(&mut grads[a.0], out);
                }
                Op::RowNorm(a) => {
                    let x = val(*a);
                    let mut out = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let norm = node.value[[i, 0]];
                        if norm > 0.0 {
                            out.row_mut(i).scaled_add(g[[i, 0]] / norm, &x.row(i));
                        }
                    }
                    add_into(&mut grads[a.0], out);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let out = y * &(&g - &dot);
                    add_into(&mut grads[a.0], out);
                }
                Op::Column(a, col) => {
                    let mut out = Array2::zeros(val(*a).dim());
                    out.column_mut(*col).assign(&g.column(0));
                    add_into(&mut grads[a.0], out);
                }
                Op::ConcatCols(vars) => {
                    let mut start = 0;
                    for v in vars {
                        let w = val(*v).ncols();
                        add_into(
                            &mut grads[v.0],
                            g.slice(ndarray::s![.., start..start + w]).to_owned(),
                        );
                        start += w;
                    }
                }
                Op::RowScale(x, s) => {
                    let gx = &g * val(*s);
                    let gs = (&g * val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    add_into(&mut grads[x.0], gx);
                    add_into(&mut grads[s.0], gs);
                }
                Op::CrossAttention(g1, g2, cands) => {
                    let (d1, d2) = matching::cross_attention_backward(
                        val(*g1),
                        val(*g2),
                        &node.value,
                        cands,
                        &g,
                    );
                    add_into(&mut grads[g1.0], d1);
                    add_into(&mut grads[g2.0], d2);
                }
                Op::MultiViewCosine(v1, v2, w) => {
                    let (d1, d2, dw) =
                        matching::multi_view_cosine_backward(val(*v1), val(*v2), val(*w), &g);
                    add_into(&mut grads[v1.0], d1);
                    add_into(&mut grads[v2.0], d2);
                    add_into(&mut grads[w.0], dw);
                }
                Op::InfoNce(a, b, tau) => {
                    let (da, db) = ssl::infonce_backward(val(*a), val(*b), *tau, g[[0, 0]]);
                    add_into(&mut grads[a.0], da);
                    add_into(&mut grads[b.0], db);
                }
            }
        }
        Gradients { grads, visited }
    }

    /// Gradient for each of `n_params` trainable tensors; tensors that do not
    /// influence `loss` get exact zeros.
    pub fn param_grads(&self, loss: Var, n_params: usize) -> Vec<Array2<f64>> {
        let grads = self.backward(loss);
        let mut out: Vec<Option<Array2<f64>>> = vec![None; n_params];
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Param(p) = node.op {
                let g = grads.grads[i]
                    .clone()
                    .unwrap_or_else(|| Array2::zeros(node.value.dim()));
                match &mut out[p] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(p, g)| {
                g.unwrap_or_else(|| {
                    // never placed on the tape: shape comes from the caller
                    panic!("parameter {p} has no leaf on the tape")
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut out = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            out.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn check(build: impl Fn(&mut Tape, Var) -> Var, x: Array2<f64>) {
        let mut tape = Tape::new();
        let v = tape.param(0, x.clone());
        let loss = build(&mut tape, v);
        let analytic = tape.param_grads(loss, 1).remove(0);
        let numeric = numeric_grad(
            |x| {
                let mut t = Tape::new();
                let v = t.param(0, x.clone());
                let l = build(&mut t, v);
                t.scalar(l)
            },
            &x,
        );
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!(
                (a - n).abs() <= 1e-6 * (1.0 + n.abs()),
                "analytic {a} vs numeric {n}"
            );
        }
    }

    fn sample() -> Array2<f64> {
        array![
            [0.3, -1.2, 0.5],
            [0.9, 0.1, -0.4],
            [-0.7, 0.6, 0.2],
            [0.4, 0.4, 1.1]
        ]
    }

    #[test]
    fn square_primitive() {
        let mut tape = Tape::new();
        let x = tape.param(0, array![[3.0]]);
        let y = tape.sum_squares(x);
        assert_eq!(tape.param_grads(y, 1)[0], array![[6.0]]);
    }

    #[test]
    fn disconnected_param_gets_zero() {
        let mut tape = Tape::new();
        let x = tape.param(0, array![[1.0, 2.0]]);
        let y = tape.param(1, array![[5.0]]);
        let l = tape.sum_squares(x);
        let _ = y;
        let g = tape.param_grads(l, 2);
        assert_eq!(g[1], array![[0.0]]);
    }

    #[test]
    fn backward_visits_each_reachable_node_once() {
        let mut tape = Tape::new();
        let x = tape.param(0, sample());
        let a = tape.row_dot(x, x);
        let b = tape.log_sigmoid(a);
        let l = tape.sum_all(b);
        let unrelated = tape.constant(array![[1.0]]);
        let _ = unrelated;
        assert_eq!(tape.backward(l).visited, 4);
    }

    #[test]
    fn elementwise_and_reduction_grads() {
        check(
            |t, x| {
                let n = t.row_norm(x);
                let s = t.log_sigmoid(n);
                t.sum_all(s)
            },
            sample(),
        );
        check(
            |t, x| {
                let m = t.mean_rows(x);
                let mt = t.transpose(m);
                let p = t.matmul(x, mt);
                let r = t.relu(p);
                t.sum_squares(r)
            },
            sample(),
        );
    }

    #[test]
    fn softmax_concat_rowscale_grads() {
        check(
            |t, x| {
                let c0 = t.column(x, 0);
                let c2 = t.column(x, 2);
                let sc = t.concat_cols(&[c0, c2]);
                let sm = t.softmax_rows(sc);
                let w = t.column(sm, 1);
                let y = t.row_scale(x, w);
                t.sum_squares(y)
            },
            sample(),
        );
    }

    #[test]
    fn shuffle_gather_spmm_grads() {
        let map = Arc::new(ShuffleMap::from_row_permutation(&[2, 0, 3, 1], 3));
        let idx = Arc::new(vec![3, 3, 0]);
        let a = Arc::new(SparseMatrix::from_dense(&array![
            [0.0, 0.5, 0.5, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.2, 0.3, 0.0, 0.5]
        ]));
        check(
            move |t, x| {
                let s = t.shuffle(&map, x);
                let p = t.spmm(&a, s);
                let g = t.gather_rows(&idx, p);
                let d = t.row_dot(g, g);
                t.sum_all(d)
            },
            sample(),
        );
    }

    #[test]
    fn attention_cosine_infonce_grads() {
        let cands = Arc::new(Candidates::Shared(vec![0, 1, 2, 3]));
        check(
            move |t, x| {
                let y = t.scale(x, -0.5);
                let z = t.add(x, y);
                let tr = t.cross_attention(x, z, Arc::clone(&cands));
                let w = t.constant(array![[1.0, 0.5, 2.0], [0.3, 1.0, 1.0]]);
                let m = t.multi_view_cosine(x, tr, w);
                let q = t.sum_squares(m);
                let nce = t.infonce(x, tr, 0.7);
                t.add(q, nce)
            },
            sample(),
        );
    }
}
