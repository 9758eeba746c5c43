//! Tape-based reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! Every value on the tape is a row-major matrix (`rows × cols`); scalars are
//! `1 × 1`, row vectors `1 × n` and per-instance columns `n × 1`. Binary
//! elementwise ops broadcast a size-1 axis against the other operand, and the
//! adjoint of a broadcast operand is summed back down to its own shape.
//!
//! A tape is built by one forward pass and consumed by one call to
//! [`Tape::backward`]. Nodes only ever reference earlier nodes, so walking the
//! node list backwards is a valid reverse topological order.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf { trainable: bool },
    Linear { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SumAll(Var),
    SumCols(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    PairwiseDistances(Var),
    DoubleCenter(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 3] {
        use Op::*;
        match *self {
            Leaf { .. } => [None, None, None],
            Linear { x, w, b } => [Some(x), Some(w), Some(b)],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | ConcatCols(a, b)
            | ConcatRows(a, b) => [Some(a), Some(b), None],
            Neg(x) | Scale(x, _) | AddScalar(x) | Relu(x) | Sigmoid(x) | Softplus(x) | Exp(x)
            | Ln(x) | Sqrt(x) | Square(x) | Clamp { x, .. } | SumAll(x) | SumCols(x)
            | PairwiseDistances(x) | DoubleCenter(x) => [Some(x), None, None],
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    /// Whether any trainable leaf feeds this node.
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(m: &Matrix) -> (usize, usize) {
    m.dim()
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Shape { op, lhs: a, rhs: b }),
    }
}

/// Sum `grad` down to `target` along broadcast axes.
fn reduce_to(grad: Matrix, target: (usize, usize)) -> Matrix {
    let mut g = grad;
    if target.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn zip_broadcast(
    a: &Matrix,
    b: &Matrix,
    out: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Matrix {
    let av = a.broadcast(out).expect("checked broadcast");
    let bv = b.broadcast(out).expect("checked broadcast");
    let mut res = Matrix::zeros(out);
    Zip::from(&mut res)
        .and(&av)
        .and(&bv)
        .for_each(|r, &x, &y| *r = f(x, y));
    res
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    /// Drop every node recorded after the first `len`; handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match op {
            Op::Leaf { trainable } => trainable,
            _ => op.inputs().iter().flatten().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { trainable: true })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { trainable: false })
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    /// Copy of `x` cut off from the graph: adjoints stop here.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf { trainable: true })
    }

    /// `x · wᵀ + b` with `w: [out × in]` and `b: [1 × out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.1 != ws.1 {
            return Err(Error::Shape { op: "linear", lhs: xs, rhs: ws });
        }
        if bs != (1, ws.0) {
            return Err(Error::Shape { op: "linear bias", lhs: ws, rhs: bs });
        }
        let mut out = self.value(x).dot(&self.value(w).t());
        out += self.value(b);
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape { op: "matmul", lhs: sa, rhs: sb });
        }
        let out = self.value(a).dot(self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), out_shape, f);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).mapv(f);
        self.push(out, op)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Clamp into `[lo, hi]`; the adjoint passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::from_elem((1, 1), s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `[n × d] -> [n × 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let out = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(Error::Shape { op: "concat_cols", lhs: sa, rhs: sb });
        }
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(Error::Shape { op: "concat_rows", lhs: sa, rhs: sb });
        }
        let out = ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("column counts checked");
        Ok(self.push(out, Op::ConcatRows(a, b)))
    }

    /// Euclidean distances between all row pairs: `[n × d] -> [n × n]`.
    pub fn pairwise_distances(&mut self, z: Var) -> Var {
        let out = pairwise_distances(self.value(z));
        self.push(out, Op::PairwiseDistances(z))
    }

    /// Subtract row means and column means, add back the grand mean.
    pub fn double_center(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.0 != s.1 {
            return Err(Error::Shape { op: "double_center", lhs: s, rhs: (s.1, s.0) });
        }
        let out = double_center(self.value(a));
        Ok(self.push(out, Op::DoubleCenter(a)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let s = self.shape(loss);
        if s != (1, 1) {
            return Err(Error::NonScalarLoss(s));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::ones((1, 1)));

        let nodes = &self.nodes;
        let acc = |adj: &mut [Option<Matrix>], v: Var, g: Matrix| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf { trainable } => {
                    if trainable {
                        adj[i] = Some(g);
                    }
                }
                Op::Linear { x, w, b } => {
                    if nodes[x.0].needs_grad {
                        acc(&mut adj, x, g.dot(self.value(w)));
                    }
                    let gw = g.t().dot(self.value(x));
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, w, gw);
                    acc(&mut adj, b, gb);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(b).t());
                    let gb = self.value(a).t().dot(&g);
                    acc(&mut adj, a, ga);
                    acc(&mut adj, b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, b, reduce_to(g.clone(), self.shape(b)));
                    acc(&mut adj, a, reduce_to(g, self.shape(a)));
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, b, reduce_to(-&g, self.shape(b)));
                    acc(&mut adj, a, reduce_to(g, self.shape(a)));
                }
                Op::Mul(a, b) => {
                    let out = g.dim();
                    let ga = zip_broadcast(&g, self.value(b), out, |gg, y| gg * y);
                    let gb = zip_broadcast(&g, self.value(a), out, |gg, x| gg * x);
                    acc(&mut adj, a, reduce_to(ga, self.shape(a)));
                    acc(&mut adj, b, reduce_to(gb, self.shape(b)));
                }
                Op::Div(a, b) => {
                    let out = g.dim();
                    let ga = zip_broadcast(&g, self.value(b), out, |gg, y| gg / y);
                    // d(a/b)/db = -(a/b)/b
                    let q_over_b = zip_broadcast(&node.value, self.value(b), out, |q, y| q / y);
                    let gb = &g * &q_over_b * -1.0;
                    acc(&mut adj, a, reduce_to(ga, self.shape(a)));
                    acc(&mut adj, b, reduce_to(gb, self.shape(b)));
                }
                Op::Neg(x) => acc(&mut adj, x, -g),
                Op::Scale(x, c) => acc(&mut adj, x, g * c),
                Op::AddScalar(x) => acc(&mut adj, x, g),
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(x))
                        .for_each(|gg, &v| if v <= 0.0 { *gg = 0.0 });
                    acc(&mut adj, x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gg, &s| *gg *= s * (1.0 - s));
                    acc(&mut adj, x, gx);
                }
                Op::Softplus(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(x))
                        .for_each(|gg, &v| *gg *= sigmoid(v));
                    acc(&mut adj, x, gx);
                }
                Op::Exp(x) => acc(&mut adj, x, g * &node.value),
                Op::Ln(x) => acc(&mut adj, x, g / self.value(x)),
                Op::Sqrt(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gg, &s| *gg *= 0.5 / s);
                    acc(&mut adj, x, gx);
                }
                Op::Square(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(x))
                        .for_each(|gg, &v| *gg *= 2.0 * v);
                    acc(&mut adj, x, gx);
                }
                Op::Clamp { x, lo, hi } => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(x))
                        .for_each(|gg, &v| if v < lo || v > hi { *gg = 0.0 });
                    acc(&mut adj, x, gx);
                }
                Op::SumAll(x) => {
                    let gx = Matrix::from_elem(self.shape(x), g[[0, 0]]);
                    acc(&mut adj, x, gx);
                }
                Op::SumCols(x) => {
                    let gx = g
                        .broadcast(self.shape(x))
                        .expect("column broadcast")
                        .to_owned();
                    acc(&mut adj, x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(a).1;
                    let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                    let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                    acc(&mut adj, a, ga);
                    acc(&mut adj, b, gb);
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.shape(a).0;
                    let ga = g.slice(ndarray::s![..ra, ..]).to_owned();
                    let gb = g.slice(ndarray::s![ra.., ..]).to_owned();
                    acc(&mut adj, a, ga);
                    acc(&mut adj, b, gb);
                }
                Op::PairwiseDistances(z) => {
                    let zv = self.value(z);
                    let d = &node.value;
                    let n = zv.nrows();
                    let mut gz = Matrix::zeros(zv.dim());
                    for k in 0..n {
                        for l in 0..n {
                            let dist = d[[k, l]];
                            if dist <= 0.0 {
                                continue;
                            }
                            let w = (g[[k, l]] + g[[l, k]]) / dist;
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..zv.ncols() {
                                gz[[k, c]] += w * (zv[[k, c]] - zv[[l, c]]);
                            }
                        }
                    }
                    acc(&mut adj, z, gz);
                }
                Op::DoubleCenter(a) => {
                    // the centering projection is self-adjoint
                    acc(&mut adj, a, double_center(&g));
                }
            }
        }
        Ok(Gradients { adj })
    }
}

pub fn pairwise_distances(z: &Matrix) -> Matrix {
    let n = z.nrows();
    let mut out = Matrix::zeros((n, n));
    for k in 0..n {
        for l in (k + 1)..n {
            let mut s = 0.0;
            for c in 0..z.ncols() {
                let d = z[[k, c]] - z[[l, c]];
                s += d * d;
            }
            let d = s.sqrt();
            out[[k, l]] = d;
            out[[l, k]] = d;
        }
    }
    out
}

pub fn double_center(a: &Matrix) -> Matrix {
    let row_means = a.mean_axis(Axis(1)).expect("non-empty").insert_axis(Axis(1));
    let col_means = a.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
    let grand = a.mean().expect("non-empty");
    let mut out = a - &row_means;
    out -= &col_means;
    out += grand;
    out
}

/// Adjoints from one backward sweep, indexed by [`Var`].
pub struct Gradients {
    adj: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a trainable leaf; `None` when the leaf is not reachable
    /// from the loss or is not trainable.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adj.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with zeros filled in for unreachable or frozen leaves.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(tape.shape(v)))
    }
}
