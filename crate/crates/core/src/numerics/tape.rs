//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every primitive in creation order. [`Tape::backward`]
//! walks the record in exact reverse order and accumulates gradients
//! additively, so a value consumed twice receives both contributions.
//! Constants never receive gradients.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    ReplaceEntry(Var, usize, Var),
    Sum(Var),
    SqrtFloor(Var, f64),
    ConcatCols(Var, Var),
    NormalizeRows(Var, Vec<f64>),
    Clamp(Var, f64, f64),
    AngularMargin(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Sine of the true-class angle is floored here when differentiating the
/// angular margin, where `d cos(θ+m)/d cos θ` diverges as `θ → 0`.
const MIN_SINE: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    visited: Vec<Var>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` is a constant or unreachable.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Nodes in the order the backward pass processed them.
    pub fn visited(&self) -> &[Var] {
        &self.visited
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(bias));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(bm.data()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Softmax over all entries of `a` (intended for row or column vectors).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let value = Matrix::new(m.rows(), m.cols(), super::matrix::softmax(m.data())?)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let value = Matrix::new(m.rows(), m.cols(), super::matrix::log_softmax(m.data())?)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::LogSoftmax(a), rg))
    }

    /// Selects entry `idx` (row-major) as a `1 × 1` value.
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let m = self.value(a);
        if idx >= m.len() {
            return Err(Error::Index {
                index: idx,
                len: m.len(),
            });
        }
        let value = Matrix::scalar(m.data()[idx]);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Pick(a, idx), rg))
    }

    /// Copy of `a` with entry `idx` replaced by the `1 × 1` value `v`.
    pub fn replace_entry(&mut self, a: Var, idx: usize, v: Var) -> Result<Var> {
        let m = self.value(a);
        if idx >= m.len() {
            return Err(Error::Index {
                index: idx,
                len: m.len(),
            });
        }
        let vm = self.value(v);
        if vm.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "replace_entry",
                left: (1, 1),
                right: vm.shape(),
            });
        }
        let mut value = m.clone();
        value.data_mut()[idx] = vm.data()[0];
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(value, Op::ReplaceEntry(a, idx, v), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// `sqrt(max(x, floor))` elementwise; zero gradient where the floor is active.
    pub fn sqrt_floor(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| x.max(floor).sqrt());
        let rg = self.rg(a);
        self.push(value, Op::SqrtFloor(a, floor), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let cols = am.cols() + bm.cols();
        let mut data = Vec::with_capacity(am.rows() * cols);
        for r in 0..am.rows() {
            data.extend_from_slice(am.row(r));
            data.extend_from_slice(bm.row(r));
        }
        let value = Matrix::new(am.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    /// Scales every row to unit L2 norm. Zero rows are rejected.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut norms = Vec::with_capacity(m.rows());
        let mut value = m.clone();
        for r in 0..m.rows() {
            let n = super::matrix::norm(m.row(r));
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateVector(format!("row {r} has norm {n}")));
            }
            for x in value.row_mut(r) {
                *x /= n;
            }
            norms.push(n);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::NormalizeRows(a, norms), rg))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    /// Maps a cosine `c = cos θ` to `cos(θ + m)`, falling back to the linear
    /// penalty `c − m·sin m` once `θ + m` would exceed `π`.
    pub fn angular_margin(&mut self, a: Var, margin: f64) -> Var {
        let value = self.value(a).map(|c| angular_margin_value(c, margin));
        let rg = self.rg(a);
        self.push(value, Op::AngularMargin(a, margin), rg)
    }

    /// Backpropagates from the `1 × 1` node `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let out_shape = self.value(out).shape();
        if out_shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: (1, 1),
                right: out_shape,
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; out.0 + 1];
        let mut visited = Vec::new();
        grads[out.0] = Some(Matrix::scalar(1.0));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(Var(i));
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let acc = |v: Var, contribution: Matrix, grads: &mut [Option<Matrix>]| -> Result<()> {
            if !self.rg(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot @ None => {
                    *slot = Some(contribution);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?, grads)?;
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?, grads)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads)?;
                acc(*b, g.clone(), grads)?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads)?;
                acc(*b, g.scale(-1.0), grads)?;
            }
            Op::Mul(a, b) => {
                acc(*a, g.hadamard(self.value(*b))?, grads)?;
                acc(*b, g.hadamard(self.value(*a))?, grads)?;
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone(), grads)?;
                acc(*bias, g.column_sums(), grads)?;
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c), grads)?,
            Op::Tanh(a) => {
                let d = g.zip_with(&node.value, "tanh'", |g, y| g * (1.0 - y * y))?;
                acc(*a, d, grads)?;
            }
            Op::Transpose(a) => acc(*a, g.transpose(), grads)?,
            Op::Softmax(a) => {
                let y = &node.value;
                let gy = dot(g.data(), y.data());
                let d = g.zip_with(y, "softmax'", |g, y| y * (g - gy))?;
                acc(*a, d, grads)?;
            }
            Op::LogSoftmax(a) => {
                let gsum = g.sum();
                let d = g.zip_with(&node.value, "log_softmax'", |g, ly| g - ly.exp() * gsum)?;
                acc(*a, d, grads)?;
            }
            Op::Pick(a, idx) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                d.data_mut()[*idx] = g.data()[0];
                acc(*a, d, grads)?;
            }
            Op::ReplaceEntry(a, idx, v) => {
                let mut d = g.clone();
                d.data_mut()[*idx] = 0.0;
                acc(*a, d, grads)?;
                acc(*v, Matrix::scalar(g.data()[*idx]), grads)?;
            }
            Op::Sum(a) => {
                let src = self.value(*a);
                acc(*a, Matrix::filled(src.rows(), src.cols(), g.data()[0]), grads)?;
            }
            Op::SqrtFloor(a, floor) => {
                let x = self.value(*a);
                let mut d = g.zip_with(&node.value, "sqrt'", |g, y| g / (2.0 * y))?;
                for (di, &xi) in d.data_mut().iter_mut().zip(x.data()) {
                    if xi <= *floor {
                        *di = 0.0;
                    }
                }
                acc(*a, d, grads)?;
            }
            Op::ConcatCols(a, b) => {
                let ac = self.value(*a).cols();
                let bc = self.value(*b).cols();
                let mut da = Vec::with_capacity(g.rows() * ac);
                let mut db = Vec::with_capacity(g.rows() * bc);
                for r in 0..g.rows() {
                    let row = g.row(r);
                    da.extend_from_slice(&row[..ac]);
                    db.extend_from_slice(&row[ac..]);
                }
                acc(*a, Matrix::new(g.rows(), ac, da)?, grads)?;
                acc(*b, Matrix::new(g.rows(), bc, db)?, grads)?;
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for (r, n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let proj = dot(yr, gr);
                    for ((di, &yi), &gi) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *di = (gi - yi * proj) / n;
                    }
                }
                acc(*a, d, grads)?;
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let d = g.zip_with(x, "clamp'", |g, x| if x < *lo || x > *hi { 0.0 } else { g })?;
                acc(*a, d, grads)?;
            }
            Op::AngularMargin(a, m) => {
                let x = self.value(*a);
                let d = g.zip_with(x, "angular_margin'", |g, c| g * angular_margin_slope(c, *m))?;
                acc(*a, d, grads)?;
            }
        }
        Ok(())
    }
}

fn angular_margin_value(c: f64, m: f64) -> f64 {
    if c >= -m.cos() {
        let sin = (1.0 - c * c).max(0.0).sqrt();
        c * m.cos() - sin * m.sin()
    } else {
        c - m * m.sin()
    }
}

fn angular_margin_slope(c: f64, m: f64) -> f64 {
    if c >= -m.cos() {
        let sin = (1.0 - c * c).max(0.0).sqrt().max(MIN_SINE);
        m.cos() + c * m.sin() / sin
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;
    use crate::numerics::rng::{seeded, uniform_matrix};

    #[test]
    fn reused_value_accumulates_both_contributions() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(vec![3.0, -2.0]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, -4.0]);
    }

    #[test]
    fn backward_visits_in_reverse_creation_order() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::row_vector(vec![0.3, 0.1]));
        let b = t.tanh(a);
        let c = t.scale(b, 2.0);
        let d = t.mul(c, a).unwrap();
        let e = t.sum(d);
        let g = t.backward(e).unwrap();
        assert_eq!(g.visited(), &[e, d, c, b, a]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::row_vector(vec![1.0, 2.0]));
        let k = t.constant(Matrix::row_vector(vec![5.0, 7.0]));
        let p = t.mul(w, k).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert!(g.get(k).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::row_vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(w), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = seeded(7);
        let a = uniform_matrix(&mut rng, 3, 4, 1.0);
        let b = uniform_matrix(&mut rng, 4, 2, 1.0);
        let report = grad_check(
            |t, p| {
                let bv = t.constant(b.clone());
                let y = t.matmul(p, bv)?;
                Ok(t.sum(y))
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn angular_margin_fallback_is_monotone_across_boundary() {
        let m = 0.2_f64;
        let boundary = -m.cos();
        let above = angular_margin_value(boundary, m);
        let below = angular_margin_value(boundary - 1e-9, m);
        assert!((above + 1.0).abs() < 1e-12);
        assert!(below < above);
    }
}
