//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, so operands always precede their consumers and the
//! backward sweep is a single reverse walk over the node list. A fresh tape
//! is built for every forward pass.
//!
//! ```
//! use skd_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(1, 2, vec![3.0, 4.0]).unwrap());
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0, 8.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Softmax {
        input: usize,
        tau: f64,
    },
    LogSoftmax {
        input: usize,
        tau: f64,
    },
    RowNorm(usize),
    NormalizeRows {
        input: usize,
        denom: Vec<f64>,
        clamped: Vec<bool>,
    },
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf on the tape.
#[derive(Debug, Clone)]
pub struct Gradient {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradient {
    /// Gradient for `var`; exactly zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> Result<f64> {
        self.value(var).item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    /// Broadcast-adds a 1×n row to every row of an m×n input.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        let rg = self.rg(a.0) || self.rg(bias.0);
        Ok(self.push(value, Op::AddRow(a.0, bias.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Sub(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Mul(a.0, b.0), rg))
    }

    /// Multiplies each row of an m×n input by the matching entry of an m×1 column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(Error::Dimension {
                op: "mul_col",
                left: av.shape(),
                right: cv.shape(),
            });
        }
        let mut out = av.data().to_vec();
        let cols = av.cols().max(1);
        for (row, &c) in out.chunks_exact_mut(cols).zip(cv.data()) {
            for v in row.iter_mut() {
                *v *= c;
            }
        }
        let value = Tensor::from_raw(av.rows(), av.cols(), out);
        let rg = self.rg(a.0) || self.rg(col.0);
        Ok(self.push(value, Op::MulCol(a.0, col.0), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a.0);
        self.push(value, Op::Scale(a.0, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.rg(a.0);
        self.push(value, Op::Relu(a.0), rg)
    }

    /// Row-wise `exp(f_i/τ) / Σ_j exp(f_j/τ)`.
    pub fn softmax_tempered(&mut self, a: Var, tau: f64) -> Result<Var> {
        let value = self.value(a).softmax_rows(tau)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::Softmax { input: a.0, tau }, rg))
    }

    /// Row-wise log of [`Tape::softmax_tempered`], computed via log-sum-exp.
    pub fn log_softmax_tempered(&mut self, a: Var, tau: f64) -> Result<Var> {
        let value = self.value(a).log_softmax_rows(tau)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::LogSoftmax { input: a.0, tau }, rg))
    }

    /// Per-row Euclidean norm (m×1). The gradient at a zero row is taken as zero.
    pub fn row_l2_norm(&mut self, a: Var) -> Var {
        let value = self.value(a).row_norms();
        let rg = self.rg(a.0);
        self.push(value, Op::RowNorm(a.0), rg)
    }

    /// `f / max(‖f‖, eps)` per row, differentiated through numerator and norm.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Parameter(format!(
                "normalization eps must be positive, got {eps}"
            )));
        }
        let input = self.value(a);
        let norms = input.row_norms();
        let value = input.normalize_rows(eps);
        let clamped = norms.data().iter().map(|&l| l < eps).collect();
        let denom = norms.data().iter().map(|&l| l.max(eps)).collect();
        let rg = self.rg(a.0);
        Ok(self.push(
            value,
            Op::NormalizeRows {
                input: a.0,
                denom,
                clamped,
            },
            rg,
        ))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(a.0);
        self.push(value, Op::Square(a.0), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a.0);
        self.push(value, Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a.0);
        self.push(value, Op::Mean(a.0), rg)
    }

    /// Row sums as an m×1 column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.iter_rows().take(t.rows()).map(|r| r.iter().sum()).collect();
        let value = Tensor::from_raw(t.rows(), 1, data);
        let rg = self.rg(a.0);
        self.push(value, Op::SumRows(a.0), rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradient> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.matmul_nt(bv));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, av.matmul_tn(&g));
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        let cols = g.cols();
                        let mut sums = vec![0.0; cols];
                        for row in g.iter_rows().take(g.rows()) {
                            for (s, v) in sums.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads, *bias, Tensor::from_raw(1, cols, sums));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.mul(bv)?);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.mul(av)?);
                    }
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (&self.nodes[*a].value, &self.nodes[*c].value);
                    let cols = av.cols().max(1);
                    if self.rg(*c) {
                        let data = g
                            .data()
                            .chunks_exact(cols)
                            .zip(av.data().chunks_exact(cols))
                            .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                            .collect();
                        accumulate(&mut grads, *c, Tensor::from_raw(cv.rows(), 1, data));
                    }
                    if self.rg(*a) {
                        let mut data = g.data().to_vec();
                        for (row, &s) in data.chunks_exact_mut(cols).zip(cv.data()) {
                            for v in row.iter_mut() {
                                *v *= s;
                            }
                        }
                        accumulate(&mut grads, *a, Tensor::from_raw(av.rows(), av.cols(), data));
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(x.rows(), x.cols(), data));
                }
                Op::Softmax { input, tau } => {
                    // dx = y ⊙ (g − ⟨g, y⟩) / τ
                    let y = &node.value;
                    let cols = y.cols().max(1);
                    let mut data = vec![0.0; y.len()];
                    for ((out, yr), gr) in data
                        .chunks_exact_mut(cols)
                        .zip(y.data().chunks_exact(cols))
                        .zip(g.data().chunks_exact(cols))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot) / tau;
                        }
                    }
                    accumulate(&mut grads, *input, Tensor::from_raw(y.rows(), y.cols(), data));
                }
                Op::LogSoftmax { input, tau } => {
                    // dx = (g − softmax · Σ g) / τ
                    let y = &node.value;
                    let cols = y.cols().max(1);
                    let mut data = vec![0.0; y.len()];
                    for ((out, yr), gr) in data
                        .chunks_exact_mut(cols)
                        .zip(y.data().chunks_exact(cols))
                        .zip(g.data().chunks_exact(cols))
                    {
                        let gsum: f64 = gr.iter().sum();
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv.exp() * gsum) / tau;
                        }
                    }
                    accumulate(&mut grads, *input, Tensor::from_raw(y.rows(), y.cols(), data));
                }
                Op::RowNorm(a) => {
                    let x = &self.nodes[*a].value;
                    let cols = x.cols().max(1);
                    let mut data = vec![0.0; x.len()];
                    for (((out, xr), &l), &gv) in data
                        .chunks_exact_mut(cols)
                        .zip(x.data().chunks_exact(cols))
                        .zip(node.value.data())
                        .zip(g.data())
                    {
                        if l > 0.0 {
                            for (o, &xv) in out.iter_mut().zip(xr) {
                                *o = gv * xv / l;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(x.rows(), x.cols(), data));
                }
                Op::NormalizeRows { input, denom, clamped } => {
                    // Unclamped rows: dx = (g − y ⟨y, g⟩) / ‖x‖. Clamped rows: dx = g / eps.
                    let y = &node.value;
                    let cols = y.cols().max(1);
                    let mut data = vec![0.0; y.len()];
                    for ((((out, yr), gr), &d), &c) in data
                        .chunks_exact_mut(cols)
                        .zip(y.data().chunks_exact(cols))
                        .zip(g.data().chunks_exact(cols))
                        .zip(denom)
                        .zip(clamped)
                    {
                        if c {
                            for (o, &gv) in out.iter_mut().zip(gr) {
                                *o = gv / d;
                            }
                        } else {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                                *o = (gv - yv * dot) / d;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, Tensor::from_raw(y.rows(), y.cols(), data));
                }
                Op::Square(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(&mut grads, *a, g.zip_with(x, "square", |gv, xv| 2.0 * xv * gv)?);
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let x = &self.nodes[*a].value;
                    let mut gv = g.data()[0];
                    if matches!(node.op, Op::Mean(_)) {
                        gv /= x.len() as f64;
                    }
                    accumulate(&mut grads, *a, Tensor::filled(x.rows(), x.cols(), gv));
                }
                Op::SumRows(a) => {
                    let x = &self.nodes[*a].value;
                    let cols = x.cols();
                    let data = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv, cols)).collect();
                    accumulate(&mut grads, *a, Tensor::from_raw(x.rows(), cols, data));
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, g) in grads.into_iter().enumerate() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaf_grads[i] = g;
            }
        }
        Ok(Gradient {
            grads: leaf_grads,
            shapes,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use skd_gradcheck::{central_difference, directional_difference, relative_error, TestRng};

    fn random_tensor(rng: &mut TestRng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(rows, cols, rng.vec(rows * cols, -5.0, 5.0)).unwrap()
    }

    /// Compares tape gradients of `build` w.r.t. one input against central differences.
    fn check_unary(input: &Tensor, build: impl Fn(&mut Tape, Var) -> Var, tol: f64) {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = build(&mut tape, x);
        let g = tape.backward(out).unwrap().wrt(x);
        let (r, c) = input.shape();
        let fd = central_difference(
            |p| {
                let mut t = Tape::new();
                let v = t.constant(Tensor::new(r, c, p.to_vec()).unwrap());
                let o = build(&mut t, v);
                t.scalar(o).unwrap()
            },
            input.data(),
            1e-6,
        );
        let err = relative_error(g.data(), &fd);
        assert!(err <= tol, "relative error {err}");
    }

    /// A random linear functional keeps every output coordinate in play.
    fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Var {
        let (r, c) = tape.value(v).shape();
        let mut rng = TestRng::new(seed);
        let w = tape.constant(random_tensor(&mut rng, r, c));
        let prod = tape.mul(v, w).unwrap();
        tape.sum(prod)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().wrt(x), Tensor::filled(2, 3, 1.0));
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 2, 3.0));
        let unused = tape.leaf(Tensor::filled(3, 1, 1.0));
        let c = tape.constant(Tensor::scalar(4.0));
        let s = tape.sum(x);
        let loss = tape.add(s, c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(3, 1));

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 2, 3.0));
        let c = tape.constant(Tensor::scalar(4.0));
        let loss = tape.scale(c, 2.0);
        assert_eq!(tape.backward(loss).unwrap().wrt(x), Tensor::zeros(2, 2));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = TestRng::new(11);
        let a0 = random_tensor(&mut rng, 3, 4);
        let b0 = random_tensor(&mut rng, 4, 2);
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let p = tape.matmul(a, b).unwrap();
        let loss = weighted_sum(&mut tape, p, 99);
        let grads = tape.backward(loss).unwrap();

        let eval = |av: &[f64], bv: &[f64]| {
            let mut t = Tape::new();
            let a = t.constant(Tensor::new(3, 4, av.to_vec()).unwrap());
            let b = t.constant(Tensor::new(4, 2, bv.to_vec()).unwrap());
            let p = t.matmul(a, b).unwrap();
            let l = weighted_sum(&mut t, p, 99);
            t.scalar(l).unwrap()
        };
        let fd_a = central_difference(|p| eval(p, b0.data()), a0.data(), 1e-6);
        let fd_b = central_difference(|p| eval(a0.data(), p), b0.data(), 1e-6);
        assert!(relative_error(grads.wrt(a).data(), &fd_a) <= 1e-6);
        assert!(relative_error(grads.wrt(b).data(), &fd_b) <= 1e-6);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let mut rng = TestRng::new(12);
        let mut x = random_tensor(&mut rng, 4, 5);
        for v in x.data_mut() {
            if v.abs() < 1e-3 {
                *v = 0.5;
            }
        }
        check_unary(
            &x,
            |t, v| {
                let r = t.relu(v);
                weighted_sum(t, r, 7)
            },
            1e-6,
        );
    }

    #[test]
    fn relu_all_negative_kills_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 3, -1.5));
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &Tensor::zeros(2, 3));
        let s = tape.sum(r);
        assert_eq!(tape.backward(s).unwrap().wrt(x), Tensor::zeros(2, 3));
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let mut rng = TestRng::new(13);
        let x = random_tensor(&mut rng, 3, 4);
        let col = random_tensor(&mut rng, 3, 1);
        let row = random_tensor(&mut rng, 1, 4);
        check_unary(
            &x,
            |t, v| {
                let c = t.constant(col.clone());
                let b = t.constant(row.clone());
                let a = t.mul_col(v, c).unwrap();
                let a = t.add_row(a, b).unwrap();
                let sq = t.square(a);
                let s = t.sum_rows(sq);
                let w = weighted_sum(t, s, 3);
                let m = t.mean(v);
                let d = t.sub(w, m).unwrap();
                t.scale(d, 0.3)
            },
            1e-6,
        );
        // broadcast operands as differentiable inputs
        check_unary(
            &col,
            |t, c| {
                let xv = t.constant(x.clone());
                let a = t.mul_col(xv, c).unwrap();
                weighted_sum(t, a, 5)
            },
            1e-6,
        );
        check_unary(
            &row,
            |t, b| {
                let xv = t.constant(x.clone());
                let a = t.add_row(xv, b).unwrap();
                let sq = t.square(a);
                t.sum(sq)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_and_log_softmax_gradients() {
        let mut rng = TestRng::new(14);
        let x = random_tensor(&mut rng, 4, 6);
        for tau in [0.5, 1.0, 4.0] {
            check_unary(
                &x,
                |t, v| {
                    let p = t.softmax_tempered(v, tau).unwrap();
                    weighted_sum(t, p, 21)
                },
                1e-6,
            );
            check_unary(
                &x,
                |t, v| {
                    let p = t.log_softmax_tempered(v, tau).unwrap();
                    weighted_sum(t, p, 22)
                },
                1e-6,
            );
        }
    }

    #[test]
    fn norm_and_normalize_gradients() {
        let mut rng = TestRng::new(15);
        let x = random_tensor(&mut rng, 4, 5);
        check_unary(
            &x,
            |t, v| {
                let n = t.row_l2_norm(v);
                weighted_sum(t, n, 31)
            },
            1e-6,
        );
        check_unary(
            &x,
            |t, v| {
                let n = t.normalize_rows(v, 1e-12).unwrap();
                weighted_sum(t, n, 32)
            },
            1e-6,
        );
    }

    #[test]
    fn normalize_gradient_is_radially_orthogonal() {
        let mut rng = TestRng::new(16);
        for trial in 0..20 {
            let x = random_tensor(&mut rng, 3, 7);
            let mut tape = Tape::new();
            let v = tape.leaf(x.clone());
            let n = tape.normalize_rows(v, 1e-12).unwrap();
            let p = tape.log_softmax_tempered(n, 0.7).unwrap();
            let loss = weighted_sum(&mut tape, p, 100 + trial);
            let g = tape.backward(loss).unwrap().wrt(v);
            for r in 0..3 {
                let dot: f64 = g.row(r).iter().zip(x.row(r)).map(|(a, b)| a * b).sum();
                let scale = skd_gradcheck::l2(g.row(r)) * skd_gradcheck::l2(x.row(r));
                assert!(dot.abs() <= 1e-8 * scale.max(1e-300), "row {r}: {dot} vs {scale}");
            }
            // finite differences along the radial direction agree: derivative ≈ 0
            let eval = |p: &[f64]| {
                let mut t = Tape::new();
                let v = t.constant(Tensor::new(3, 7, p.to_vec()).unwrap());
                let n = t.normalize_rows(v, 1e-12).unwrap();
                let p = t.log_softmax_tempered(n, 0.7).unwrap();
                let l = weighted_sum(&mut t, p, 100 + trial);
                t.scalar(l).unwrap()
            };
            let radial = directional_difference(eval, x.data(), x.data(), 1e-6);
            assert!(radial.abs() < 1e-7, "radial derivative {radial}");
        }
    }

    #[test]
    fn zero_row_norm_is_guarded() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(1, 3));
        let n = tape.row_l2_norm(x);
        let s = tape.sum(n);
        assert_eq!(tape.backward(s).unwrap().wrt(x), Tensor::zeros(1, 3));

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(1, 3));
        let n = tape.normalize_rows(x, 1e-12).unwrap();
        assert_eq!(tape.value(n), &Tensor::zeros(1, 3));
        let s = tape.sum(n);
        let g = tape.backward(s).unwrap().wrt(x);
        assert!(g.all_finite());
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let run = || {
            let mut rng = TestRng::new(17);
            let mut tape = Tape::new();
            let a = tape.leaf(random_tensor(&mut rng, 5, 4));
            let b = tape.leaf(random_tensor(&mut rng, 4, 3));
            let p = tape.matmul(a, b).unwrap();
            let n = tape.normalize_rows(p, 1e-12).unwrap();
            let l = tape.log_softmax_tempered(n, 2.0).unwrap();
            let s = tape.sum(l);
            let g = tape.backward(s).unwrap();
            (g.wrt(a), g.wrt(b))
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert!(a1.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(b1.data().iter().zip(b2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn tape_order_is_topological() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(1, 2, 1.0));
        let b = tape.square(a);
        let c = tape.sum(b);
        assert!(a.index() < b.index() && b.index() < c.index());
        assert_eq!(tape.len(), 3);
    }
}
