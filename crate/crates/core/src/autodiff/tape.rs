use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Log(Var),
    RowL2Norm(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Nll {
        probs: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients of leaf values from one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }
}

/// Records primitive operations in execution order so that
/// [`Tape::backward`] can replay them in reverse.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op,
            left: shape.to_vec(),
            right: vec![0, 0],
        });
    }
    Ok((shape[0], shape[1]))
}

/// `a (m×n) · b (n×p)`.
fn mm(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `g (m×p) · bᵀ` where `b` is `n×p`.
fn mm_bt(g: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let grow = &g[i * p..(i + 1) * p];
        for k in 0..n {
            let brow = &b[k * p..(k + 1) * p];
            out[i * n + k] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `m×n` and `g` is `m×p`.
fn mm_at(a: &[f64], g: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..m {
        let grow = &g[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * p..(k + 1) * p];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
    out
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
        None => *acc = Some(g.to_vec()),
    }
}

impl Tape {
    /// A tape that tracks gradients for trainable parameters.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which parameters enter as constants; nothing is
    /// differentiable and `backward` yields no gradients.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded shapes are consistent")
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::Dimension {
                op: "constant",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(self.push(vec![rows, cols], data, Op::Leaf, false))
    }

    /// Records a standalone tensor. Its gradient, if any, is returned in
    /// [`Gradients`] rather than written back.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Records a parameter once per tape; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        );
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "matmul")?;
        let (n2, p) = dims2(self.shape(b), "matmul")?;
        if n != n2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: vec![m, n],
                right: vec![n2, p],
            });
        }
        let out = mm(self.value(a), self.value(b), m, n, p);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, p], out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "add_row")?;
        let rs = self.shape(row);
        if rs != [1, n] {
            return Err(Error::Dimension {
                op: "add_row",
                left: vec![m, n],
                right: rs.to_vec(),
            });
        }
        let b = self.value(row);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(vec![m, n], out, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, c), rg)
    }

    /// Multiplies every entry of `x` by the single-element var `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Dimension {
                op: "scale_by",
                left: self.shape(s).to_vec(),
                right: vec![],
            });
        }
        let c = self.scalar_value(s);
        let out = self.value(x).iter().map(|v| c * v).collect();
        let rg = self.rg(s) || self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::ScaleBy(s, x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "transpose")?;
        let out = transpose(self.value(x), m, n);
        let rg = self.rg(x);
        Ok(self.push(vec![n, m], out, Op::Transpose(x), rg))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let (_, n) = dims2(self.shape(first), "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (m, n2) = dims2(self.shape(p), "concat_rows")?;
            if n2 != n {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: vec![m, n2],
                    right: vec![rows, n],
                });
            }
            rows += m;
            out.extend_from_slice(self.value(p));
            rg |= self.rg(p);
        }
        Ok(self.push(vec![rows, n], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "select_rows")?;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::contract(format!("row {i} out of range for {m} rows")));
            }
            out.extend_from_slice(&self.value(x)[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![idx.len(), n], out, Op::SelectRows(x, idx.to_vec()), rg))
    }

    /// Column means of an `m×n` matrix, as a `1×n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "mean_rows")?;
        if m == 0 {
            return Err(Error::contract("mean_rows of an empty matrix"));
        }
        let v = self.value(x);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(&v[r * n..(r + 1) * n]) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(x);
        Ok(self.push(vec![1, n], out, Op::MeanRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).iter().any(|v| *v < 0.0) {
            return Err(Error::Numeric("sqrt of a negative value".into()));
        }
        Ok(self.map(x, Op::Sqrt(x), f64::sqrt))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).iter().any(|v| *v <= 0.0) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        Ok(self.map(x, Op::Log(x), f64::ln))
    }

    /// Per-row `sqrt(Σ x² + eps)`, giving an `m×1` column. `eps` keeps the
    /// norm differentiable at the origin.
    pub fn row_l2_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "row_l2_norm")?;
        let v = self.value(x);
        let out = (0..m)
            .map(|r| {
                let ss: f64 = v[r * n..(r + 1) * n].iter().map(|a| a * a).sum();
                (ss + eps).sqrt()
            })
            .collect();
        let rg = self.rg(x);
        Ok(self.push(vec![m, 1], out, Op::RowL2Norm(x), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = dims2(self.shape(x), "softmax_rows")?;
        let mask = vec![true; n];
        self.masked_softmax_rows(x, &mask)
    }

    /// Row-wise softmax over the columns where `col_mask` is true; the other
    /// columns receive probability exactly zero (logit −∞).
    pub fn masked_softmax_rows(&mut self, x: Var, col_mask: &[bool]) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "softmax_rows")?;
        if col_mask.len() != n {
            return Err(Error::Dimension {
                op: "masked_softmax_rows",
                left: vec![m, n],
                right: vec![col_mask.len()],
            });
        }
        if !col_mask.iter().any(|&b| b) {
            return Err(Error::contract("softmax with every column masked"));
        }
        let v = self.value(x);
        if v.iter().any(|a| a.is_nan()) {
            return Err(Error::Numeric("NaN in softmax input".into()));
        }
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &v[r * n..(r + 1) * n];
            let max = row
                .iter()
                .zip(col_mask)
                .filter(|(_, &k)| k)
                .map(|(a, _)| *a)
                .fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for c in 0..n {
                if col_mask[c] {
                    o[c] = (row[c] - max).exp();
                    total += o[c];
                }
            }
            o.iter_mut().for_each(|e| *e /= total);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![m, n], out, Op::Softmax(x), rg))
    }

    fn check_targets(
        &self,
        x: Var,
        targets: &[usize],
        weights: &[f64],
        op: &'static str,
    ) -> Result<(usize, usize, f64)> {
        let (m, c) = dims2(self.shape(x), op)?;
        if targets.len() != m || weights.len() != m {
            return Err(Error::Dimension {
                op,
                left: vec![m, c],
                right: vec![targets.len(), weights.len()],
            });
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::contract(format!("target class {t} out of range")));
        }
        let total: f64 = weights.iter().sum();
        if m == 0 || total <= 0.0 {
            return Err(Error::contract(format!("{op} needs positive total weight")));
        }
        Ok((m, c, total))
    }

    /// Weighted mean cross-entropy of row-wise softmax(logits) against
    /// integer targets: `Σ wᵢ·(−log pᵢ[tᵢ]) / Σ wᵢ`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let (m, c, total) = self.check_targets(logits, targets, weights, "softmax_cross_entropy")?;
        let v = self.value(logits);
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for r in 0..m {
            let row = &v[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
            loss += weights[r] * (lse - row[targets[r]]);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            vec![loss / total],
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Weighted mean negative log-likelihood of already-normalized rows.
    pub fn nll(&mut self, probs: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (_, c, total) = self.check_targets(probs, targets, weights, "nll")?;
        let v = self.value(probs);
        let mut loss = 0.0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            let p = v[r * c + t];
            if p <= 0.0 {
                return Err(Error::Numeric("nll of a zero probability".into()));
            }
            loss -= w * p.ln();
        }
        let rg = self.rg(probs);
        Ok(self.push(
            vec![],
            vec![loss / total],
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a single-element `loss`.
    ///
    /// Parameter gradients are added into `store` (so repeated calls
    /// accumulate until the store is zeroed); gradients of non-parameter
    /// leaves are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let send = |v: Var, grad: &[f64], adj: &mut Vec<Option<Vec<f64>>>| {
                if self.nodes[v.0].requires_grad {
                    add_into(&mut adj[v.0], grad);
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(pid) = node.param {
                        store.get_mut(pid).accumulate_grad(&g)?;
                    } else {
                        out.leaves.insert(Var(i), g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let p = self.shape(*b)[1];
                    if self.rg(*a) {
                        send(*a, &mm_bt(&g, self.value(*b), m, n, p), &mut adj);
                    }
                    if self.rg(*b) {
                        send(*b, &mm_at(self.value(*a), &g, m, n, p), &mut adj);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, &g, &mut adj);
                    send(*b, &g, &mut adj);
                }
                Op::Sub(a, b) => {
                    send(*a, &g, &mut adj);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    send(*b, &neg, &mut adj);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    send(*a, &ga, &mut adj);
                    send(*b, &gb, &mut adj);
                }
                Op::AddRow(x, row) => {
                    send(*x, &g, &mut adj);
                    let n = self.shape(*row)[1];
                    let mut gb = vec![0.0; n];
                    for (k, v) in g.iter().enumerate() {
                        gb[k % n] += v;
                    }
                    send(*row, &gb, &mut adj);
                }
                Op::Scale(x, c) => {
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    send(*x, &gx, &mut adj);
                }
                Op::ScaleBy(s, x) => {
                    let c = self.scalar_value(*s);
                    let gs: f64 = g.iter().zip(self.value(*x)).map(|(a, b)| a * b).sum();
                    send(*s, &[gs], &mut adj);
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    send(*x, &gx, &mut adj);
                }
                Op::Transpose(x) => {
                    let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                    // g is n×m
                    send(*x, &transpose(&g, n, m), &mut adj);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        send(*p, &g[off..off + len], &mut adj);
                        off += len;
                    }
                }
                Op::SelectRows(x, idx) => {
                    let n = self.shape(*x)[1];
                    let mut gx = vec![0.0; self.value(*x).len()];
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..n {
                            gx[src * n + c] += g[r * n + c];
                        }
                    }
                    send(*x, &gx, &mut adj);
                }
                Op::MeanRows(x) => {
                    let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let mut gx = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            gx[r * n + c] = g[c] / m as f64;
                        }
                    }
                    send(*x, &gx, &mut adj);
                }
                Op::Sum(x) => {
                    let gx = vec![g[0]; self.value(*x).len()];
                    send(*x, &gx, &mut adj);
                }
                Op::Sigmoid(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv * y * (1.0 - y))
                        .collect();
                    send(*x, &gx, &mut adj);
                }
                Op::Tanh(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv * (1.0 - y * y))
                        .collect();
                    send(*x, &gx, &mut adj);
                }
                Op::Relu(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    send(*x, &gx, &mut adj);
                }
                Op::Sqrt(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv / (2.0 * y))
                        .collect();
                    send(*x, &gx, &mut adj);
                }
                Op::Log(x) => {
                    let gx: Vec<f64> = g.iter().zip(self.value(*x)).map(|(gv, xv)| gv / xv).collect();
                    send(*x, &gx, &mut adj);
                }
                Op::RowL2Norm(x) => {
                    let n = self.shape(*x)[1];
                    let xv = self.value(*x);
                    let mut gx = vec![0.0; xv.len()];
                    for (r, (gv, y)) in g.iter().zip(&node.value).enumerate() {
                        for c in 0..n {
                            gx[r * n + c] = gv * xv[r * n + c] / y;
                        }
                    }
                    send(*x, &gx, &mut adj);
                }
                Op::Softmax(x) => {
                    let n = node.shape[1];
                    let y = &node.value;
                    let mut gx = vec![0.0; y.len()];
                    for r in 0..node.shape[0] {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gx[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    send(*x, &gx, &mut adj);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let c = self.shape(*logits)[1];
                    let total: f64 = weights.iter().sum();
                    let mut gx = vec![0.0; probs.len()];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        for k in 0..c {
                            let onehot = if k == t { 1.0 } else { 0.0 };
                            gx[r * c + k] = g[0] * w * (probs[r * c + k] - onehot) / total;
                        }
                    }
                    send(*logits, &gx, &mut adj);
                }
                Op::Nll {
                    probs,
                    targets,
                    weights,
                } => {
                    let c = self.shape(*probs)[1];
                    let total: f64 = weights.iter().sum();
                    let pv = self.value(*probs);
                    let mut gx = vec![0.0; pv.len()];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        gx[r * c + t] = -g[0] * w / (total * pv[r * c + t]);
                    }
                    send(*probs, &gx, &mut adj);
                }
            }
        }
        Ok(out)
    }
}
