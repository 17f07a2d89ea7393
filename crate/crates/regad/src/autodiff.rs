//! Minimal reverse-mode autodiff over dense f64 tensors.
//!
//! A [`Tape`] records one forward pass as a flat list of primitive nodes;
//! [`Tape::backward`] replays it in reverse exactly once. The primitive set
//! is only what the two fixed network architectures and their losses need:
//! sparse-dense matmul, dense matmul, bias add, relu, sigmoid, reductions,
//! row gathering, elementwise affine/abs/log, and pairwise row dots.
//!
//! All reductions run in fixed sequential order so results are bitwise
//! reproducible across runs with identical inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::graph::Csr;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("backward requires a scalar loss, got shape {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("tape already replayed backward; double backward unsupported")]
    DoubleBackward,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("no gradient recorded for variable (requires_grad = false?)")]
    NoGradient,
}

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Spmm { a: Arc<Csr>, x: usize },
    MatMul { a: usize, b: usize },
    AddBias { x: usize, b: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Mean { x: usize },
    Sum { x: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    Affine { x: usize, mul: f64 },
    Abs { x: usize },
    Add { a: usize, b: usize },
    MulVec { x: usize, w: Vec<f64> },
    Ln { x: usize },
    DotPairs { x: usize, pairs: Vec<(usize, usize)> },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    replayed: bool,
}

/// Per-variable gradients from one backward pass.
pub struct Grads {
    g: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Result<&[f64], KernelError> {
        self.g[v.0].as_deref().ok_or(KernelError::NoGradient)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, data: Vec<f64>, rg: bool) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            data,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(self.shape(v), (1, 1), "expected scalar");
        self.nodes[v.0].data[0]
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Var {
        assert_eq!(data.len(), rows * cols, "leaf data length mismatch");
        self.push(Op::Leaf, rows, cols, data, requires_grad)
    }

    /// `A x` for sparse `A` (n x n) and dense `x` (n x k). `A` is constant;
    /// gradients flow through `x` only.
    pub fn spmm(&mut self, a: Arc<Csr>, x: Var) -> Var {
        let (n, k) = self.shape(x);
        assert_eq!(a.n, n, "spmm: dimension mismatch");
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            let row = &mut out[i * k..(i + 1) * k];
            for (&j, &v) in cols.iter().zip(vals) {
                let xrow = &xd[j as usize * k..(j as usize + 1) * k];
                for c in 0..k {
                    row[c] += v * xrow[c];
                }
            }
        }
        let rg = self.rg(x);
        self.push(Op::Spmm { a, x: x.0 }, n, k, out, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner dimension mismatch");
        let ad = &self.nodes[a.0].data;
        let bd = &self.nodes[b.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for l in 0..k {
                let av = ad[i * k + l];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[l * c..(l + 1) * c];
                let orow = &mut out[i * c..(i + 1) * c];
                for j in 0..c {
                    orow[j] += av * brow[j];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul { a: a.0, b: b.0 }, r, c, out, rg)
    }

    /// Adds a length-`cols` bias row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(b), (1, c), "add_bias: bias shape mismatch");
        let bd = self.nodes[b.0].data.clone();
        let out: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % c])
            .collect();
        let rg = self.rg(x) || self.rg(b);
        self.push(Op::AddBias { x: x.0, b: b.0 }, r, c, out, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(x);
        self.push(Op::Relu { x: x.0 }, r, c, out, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let rg = self.rg(x);
        self.push(Op::Sigmoid { x: x.0 }, r, c, out, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let len = self.nodes[x.0].data.len();
        assert!(len > 0, "mean of empty tensor");
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Mean { x: x.0 }, 1, 1, vec![s / len as f64], rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum { x: x.0 }, 1, 1, vec![s], rg)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather_rows: index out of range");
            out.extend_from_slice(&self.nodes[x.0].data[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        self.push(
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
            idx.len(),
            c,
            out,
            rg,
        )
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| mul * v + add).collect();
        let rg = self.rg(x);
        self.push(Op::Affine { x: x.0, mul }, r, c, out, rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.abs()).collect();
        let rg = self.rg(x);
        self.push(Op::Abs { x: x.0 }, r, c, out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (r, c), "add: shape mismatch");
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add { a: a.0, b: b.0 }, r, c, out, rg)
    }

    /// Elementwise product with a constant weight vector of the same length.
    pub fn mul_vec(&mut self, x: Var, w: Vec<f64>) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(w.len(), r * c, "mul_vec: weight length mismatch");
        let out: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(&w)
            .map(|(&v, &wi)| v * wi)
            .collect();
        let rg = self.rg(x);
        self.push(Op::MulVec { x: x.0, w }, r, c, out, rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.ln()).collect();
        let rg = self.rg(x);
        self.push(Op::Ln { x: x.0 }, r, c, out, rg)
    }

    /// `y[p] = x[i_p, :] . x[j_p, :]` for each row pair; output is a column.
    pub fn dot_pairs(&mut self, x: Var, pairs: &[(usize, usize)]) -> Var {
        let (r, c) = self.shape(x);
        let xd = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            assert!(i < r && j < r, "dot_pairs: row index out of range");
            let (ri, rj) = (&xd[i * c..(i + 1) * c], &xd[j * c..(j + 1) * c]);
            out.push(ri.iter().zip(rj).map(|(&a, &b)| a * b).sum());
        }
        let rg = self.rg(x);
        self.push(
            Op::DotPairs {
                x: x.0,
                pairs: pairs.to_vec(),
            },
            pairs.len(),
            1,
            out,
            rg,
        )
    }

    /// Replay the tape backward from a scalar loss, once.
    pub fn backward(&mut self, loss: Var) -> Result<Grads, KernelError> {
        if self.replayed {
            return Err(KernelError::DoubleBackward);
        }
        self.replayed = true;
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(KernelError::NonScalarLoss(r, c));
        }
        if !self.scalar(loss).is_finite() {
            return Err(KernelError::NonFinite("loss"));
        }
        let mut g: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| n.requires_grad.then(|| vec![0.0; n.data.len()]))
            .collect();
        if g[loss.0].is_none() {
            // Loss does not depend on any differentiable leaf.
            return Ok(Grads { g });
        }
        g[loss.0].as_mut().unwrap()[0] = 1.0;

        for id in (0..=loss.0).rev() {
            let Some(gout) = g[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    g[id] = Some(gout);
                    continue;
                }
                Op::Spmm { a, x } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let k = self.nodes[id].cols;
                        for i in 0..a.n {
                            let (cols, vals) = a.row(i);
                            let grow = &gout[i * k..(i + 1) * k];
                            for (&j, &v) in cols.iter().zip(vals) {
                                let gxr = &mut gx[j as usize * k..(j as usize + 1) * k];
                                for c in 0..k {
                                    gxr[c] += v * grow[c];
                                }
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (r, c) = (self.nodes[id].rows, self.nodes[id].cols);
                    let k = self.nodes[*a].cols;
                    if g[*a].is_some() {
                        let bd = &self.nodes[*b].data;
                        let ga = g[*a].as_mut().unwrap();
                        // gA = G B^T
                        for i in 0..r {
                            for l in 0..k {
                                let mut acc = 0.0;
                                let grow = &gout[i * c..(i + 1) * c];
                                let brow = &bd[l * c..(l + 1) * c];
                                for j in 0..c {
                                    acc += grow[j] * brow[j];
                                }
                                ga[i * k + l] += acc;
                            }
                        }
                    }
                    if g[*b].is_some() {
                        let ad = &self.nodes[*a].data;
                        let gb = g[*b].as_mut().unwrap();
                        // gB = A^T G
                        for i in 0..r {
                            let grow = &gout[i * c..(i + 1) * c];
                            for l in 0..k {
                                let av = ad[i * k + l];
                                if av == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[l * c..(l + 1) * c];
                                for j in 0..c {
                                    gbrow[j] += av * grow[j];
                                }
                            }
                        }
                    }
                }
                Op::AddBias { x, b } => {
                    let c = self.nodes[id].cols;
                    if let Some(gx) = g[*x].as_mut() {
                        for (gv, &go) in gx.iter_mut().zip(&gout) {
                            *gv += go;
                        }
                    }
                    if let Some(gb) = g[*b].as_mut() {
                        for (i, &go) in gout.iter().enumerate() {
                            gb[i % c] += go;
                        }
                    }
                }
                Op::Relu { x } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let xd = &self.nodes[*x].data;
                        for i in 0..gout.len() {
                            if xd[i] > 0.0 {
                                gx[i] += gout[i];
                            }
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let yd = &self.nodes[id].data;
                        for i in 0..gout.len() {
                            gx[i] += gout[i] * yd[i] * (1.0 - yd[i]);
                        }
                    }
                }
                Op::Mean { x } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let s = gout[0] / gx.len() as f64;
                        for gv in gx.iter_mut() {
                            *gv += s;
                        }
                    }
                }
                Op::Sum { x } => {
                    if let Some(gx) = g[*x].as_mut() {
                        for gv in gx.iter_mut() {
                            *gv += gout[0];
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let c = self.nodes[id].cols;
                        for (r, &i) in idx.iter().enumerate() {
                            let grow = &gout[r * c..(r + 1) * c];
                            let gxr = &mut gx[i * c..(i + 1) * c];
                            for j in 0..c {
                                gxr[j] += grow[j];
                            }
                        }
                    }
                }
                Op::Affine { x, mul } => {
                    if let Some(gx) = g[*x].as_mut() {
                        for i in 0..gout.len() {
                            gx[i] += mul * gout[i];
                        }
                    }
                }
                Op::Abs { x } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let xd = &self.nodes[*x].data;
                        for i in 0..gout.len() {
                            gx[i] += gout[i] * xd[i].signum() * (xd[i] != 0.0) as u8 as f64;
                        }
                    }
                }
                Op::Add { a, b } => {
                    if let Some(ga) = g[*a].as_mut() {
                        for (gv, &go) in ga.iter_mut().zip(&gout) {
                            *gv += go;
                        }
                    }
                    if let Some(gb) = g[*b].as_mut() {
                        for (gv, &go) in gb.iter_mut().zip(&gout) {
                            *gv += go;
                        }
                    }
                }
                Op::MulVec { x, w } => {
                    if let Some(gx) = g[*x].as_mut() {
                        for i in 0..gout.len() {
                            gx[i] += gout[i] * w[i];
                        }
                    }
                }
                Op::Ln { x } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let xd = &self.nodes[*x].data;
                        for i in 0..gout.len() {
                            gx[i] += gout[i] / xd[i];
                        }
                    }
                }
                Op::DotPairs { x, pairs } => {
                    if let Some(gx) = g[*x].as_mut() {
                        let c = self.nodes[*x].cols;
                        let xd = &self.nodes[*x].data;
                        for (p, &(i, j)) in pairs.iter().enumerate() {
                            let go = gout[p];
                            for l in 0..c {
                                gx[i * c + l] += go * xd[j * c + l];
                                gx[j * c + l] += go * xd[i * c + l];
                            }
                        }
                    }
                }
            }
        }
        Ok(Grads { g })
    }
}

/// Named flat parameter arrays with shapes. Iteration order is the sorted
/// name order, so gradient checks and updates are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(data.len(), rows * cols, "param shape mismatch: {name}");
        self.entries.insert(name.to_string(), Param { rows, cols, data });
    }

    pub fn get(&self, name: &str) -> &Param {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("missing param {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing param {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }
}

/// Leaf every parameter onto `tape` with gradients enabled.
pub fn bind_params(tape: &mut Tape, params: &ParamStore) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(name, p)| {
            (
                name.clone(),
                tape.leaf(p.rows, p.cols, p.data.clone(), true),
            )
        })
        .collect()
}

/// One gradient-descent step with L2 weight decay:
/// `w <- w - lr * (g + wd * w)`.
pub fn sgd_step(params: &mut ParamStore, grads: &ParamStore, lr: f64, weight_decay: f64) {
    for (name, g) in grads.iter() {
        let p = params.get_mut(name);
        for (w, &gv) in p.data.iter_mut().zip(&g.data) {
            *w -= lr * (gv + weight_decay * *w);
        }
    }
}

/// Run `forward` once with gradients, returning the scalar loss and a
/// gradient store shaped like `params`.
pub fn loss_and_grads<F>(params: &ParamStore, forward: F) -> Result<(f64, ParamStore), KernelError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Var,
{
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params);
    let loss = forward(&mut tape, &vars);
    let loss_val = tape.scalar(loss);
    let grads_raw = tape.backward(loss)?;
    let mut grads = ParamStore::new();
    for (name, p) in params.iter() {
        let g = grads_raw.get(vars[name])?;
        grads.insert(name, p.rows, p.cols, g.to_vec());
    }
    Ok((loss_val, grads))
}

/// Compare analytic gradients against central finite differences at
/// perturbation `eps`; returns the max relative error over all parameters.
/// The denominator is floored at 1e-6 so components below what central
/// differences can resolve (f64 roundoff is ~1e-11 at eps=1e-5) do not
/// register as spurious relative error.
pub fn grad_check<F>(params: &ParamStore, eps: f64, forward: F) -> Result<f64, KernelError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Var,
{
    let (_, analytic) = loss_and_grads(params, &forward)?;
    let eval = |p: &ParamStore| -> Result<f64, KernelError> {
        let mut tape = Tape::new();
        let vars = p
            .iter()
            .map(|(name, q)| (name.clone(), tape.leaf(q.rows, q.cols, q.data.clone(), false)))
            .collect();
        let loss = forward(&mut tape, &vars);
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(KernelError::NonFinite("grad_check forward"));
        }
        Ok(v)
    };
    let mut max_rel = 0.0_f64;
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let len = params.get(name).data.len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.get_mut(name).data[i] += eps;
            let mut minus = params.clone();
            minus.get_mut(name).data[i] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic.get(name).data[i];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(KernelError::NonFinite("grad_check"));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
