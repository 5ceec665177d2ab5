//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation in execution order; node ids are
//! therefore a topological order and [`Graph::backward`] is a single reverse
//! sweep. Scalars are 1×1 matrices.

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `A · B`
    MatMul(Var, Var),
    /// `A · Bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `A + 1·b` with `b` a single row.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    /// Hard clamp to `[0, 1]`; derivative 1 strictly inside, 0 elsewhere.
    Clamp01(Var),
    Focal { m: Var, pairs: Vec<(usize, usize)>, alpha: f64, gamma: f64 },
    Bce { o: Var, labels: Vec<bool> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::SoftmaxCols(..) => "softmax_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::Clamp01(..) => "clamp01",
            Op::Focal { .. } => "focal_loss",
            Op::Bce { .. } => "bce_loss",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Floor applied inside every logarithm of the loss nodes.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints of every node reachable from the differentiated root.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, or zeros of `shape` when `v` does not influence the root.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

pub fn softmax_cols(x: &Array2<f64>) -> Array2<f64> {
    softmax_rows(&x.t().to_owned()).t().to_owned()
}

/// `−(1/|K|) Σ_K α (1−p)^γ ln p` with `p = max(M(i,j), ε)`.
pub fn focal_value(m: &Array2<f64>, pairs: &[(usize, usize)], alpha: f64, gamma: f64) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let p = m[[i, j]].max(LOG_EPS);
            alpha * (1.0 - p).powf(gamma) * p.ln()
        })
        .sum();
    -sum / pairs.len() as f64
}

/// `−(1/n) Σ [y ln o + (1−y) ln(1−o)]` with `o` clipped to `[ε, 1−ε]`.
pub fn bce_value(o: &Array2<f64>, labels: &[bool]) -> f64 {
    let sum: f64 = o
        .iter()
        .zip(labels)
        .map(|(&o, &y)| {
            let p = o.clamp(LOG_EPS, 1.0 - LOG_EPS);
            if y { p.ln() } else { (1.0 - p).ln() }
        })
        .sum();
    -sum / labels.len() as f64
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(shape_err("matmul", x.shape(), y.shape()));
        }
        let v = x.dot(y);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.ncols() {
            return Err(shape_err("matmul_t", x.shape(), y.shape()));
        }
        let v = x.dot(&y.t());
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let v = x + y;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.nrows() != 1 || r.ncols() != x.ncols() {
            return Err(shape_err("add_row", x.shape(), r.shape()));
        }
        let v = x + r;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x.shape(), y.shape()));
        }
        let v = x * y;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let v = softmax_cols(self.value(a));
        self.push(v, Op::SoftmaxCols(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.nrows() != y.nrows() {
            return Err(shape_err("concat_cols", x.shape(), y.shape()));
        }
        let v = concatenate(Axis(1), &[x.view(), y.view()]).expect("row counts checked");
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= x.nrows()) {
            return Err(Error::Shape(format!("gather_rows: row {r} of {}", x.nrows())));
        }
        let v = x.select(Axis(0), rows);
        Ok(self.push(v, Op::GatherRows(a, rows.to_vec())))
    }

    pub fn clamp01(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(0.0, 1.0));
        self.push(v, Op::Clamp01(a))
    }

    pub fn focal_loss(&mut self, m: Var, pairs: &[(usize, usize)], alpha: f64, gamma: f64) -> Result<Var> {
        let x = self.value(m);
        if pairs.is_empty() {
            return Err(Error::InvalidInput("focal loss needs at least one ground-truth pair".into()));
        }
        if let Some(p) = pairs.iter().find(|&&(i, j)| i >= x.nrows() || j >= x.ncols()) {
            return Err(Error::Shape(format!("focal_loss: pair {p:?} outside {:?}", x.shape())));
        }
        let v = Array2::from_elem((1, 1), focal_value(x, pairs, alpha, gamma));
        Ok(self.push(v, Op::Focal { m, pairs: pairs.to_vec(), alpha, gamma }))
    }

    pub fn bce_loss(&mut self, o: Var, labels: &[bool]) -> Result<Var> {
        let x = self.value(o);
        if x.len() != labels.len() || labels.is_empty() {
            return Err(shape_err("bce_loss", x.shape(), &[labels.len()]));
        }
        let v = Array2::from_elem((1, 1), bce_value(x, labels));
        Ok(self.push(v, Op::Bce { o, labels: labels.to_vec() }))
    }

    /// First node (in execution order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Adjoints of every node with respect to the 1×1 node `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).dim() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar root".into()));
        }
        if let Some((node, op)) = self.first_non_finite() {
            if node <= root.0 {
                return Err(Error::NonFinite { node, op });
            }
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut acc = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
                Some(e) => *e += &d,
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.dot(self.value(*b)));
                    acc(*b, g.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::AddRow(a, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * self.value(*b));
                    acc(*b, &g * self.value(*a));
                }
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::Tanh(a) => acc(*a, &g * &node.value.mapv(|y| 1.0 - y * y)),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, y * &(&g - &dot));
                }
                Op::SoftmaxCols(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, y * &(&g - &dot));
                }
                Op::ConcatCols(a, b) => {
                    let k = self.value(*a).ncols();
                    acc(*a, g.slice(s![.., ..k]).to_owned());
                    acc(*b, g.slice(s![.., k..]).to_owned());
                }
                Op::GatherRows(a, rows) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.raw_dim());
                    for (r, &from) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(from);
                        dst += &g.row(r);
                    }
                    acc(*a, d);
                }
                Op::Clamp01(a) => {
                    let x = self.value(*a);
                    let mut d = g.clone();
                    d.zip_mut_with(x, |gv, &xv| {
                        if !(xv > 0.0 && xv < 1.0) {
                            *gv = 0.0;
                        }
                    });
                    acc(*a, d);
                }
                Op::Focal { m, pairs, alpha, gamma } => {
                    let x = self.value(*m);
                    let scale = g[[0, 0]] / pairs.len() as f64;
                    let mut d = Array2::zeros(x.raw_dim());
                    for &(i, j) in pairs {
                        let p = x[[i, j]];
                        if p <= LOG_EPS {
                            continue;
                        }
                        let q = 1.0 - p;
                        let dl = -alpha * (q.powf(*gamma) / p - gamma * q.powf(gamma - 1.0) * p.ln());
                        d[[i, j]] += scale * dl;
                    }
                    acc(*m, d);
                }
                Op::Bce { o, labels } => {
                    let x = self.value(*o);
                    let scale = g[[0, 0]] / labels.len() as f64;
                    let mut d = Array2::zeros(x.raw_dim());
                    for ((dv, &p), &y) in d.iter_mut().zip(x.iter()).zip(labels) {
                        if p > LOG_EPS && p < 1.0 - LOG_EPS {
                            *dv = -scale * if y { 1.0 / p } else { -1.0 / (1.0 - p) };
                        }
                    }
                    acc(*o, d);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
