use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::{DiffError, ParamStore, Result, Tensor};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    idx: usize,
}

/// Parameter name → variable, as produced by [`Tape::bind`].
pub type VarMap = BTreeMap<String, Var>;

#[derive(Debug)]
enum Op {
    Leaf { name: Option<String> },
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { m: Var, v: Var },
    Affine { x: Var, scale: f64 },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    SumAll(Var),
    SumRows(Var),
    Concat { parts: Vec<Var>, widths: Vec<usize>, rows: usize },
    Gather { x: Var, idx: Vec<usize> },
    Slice { x: Var, start: usize },
    Reshape(Var),
    RepeatRows(Var),
    SoftmaxRows(Var),
    MaskedSoftmax(Var),
    Bce { p: Var, y: Vec<f64>, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Eager recording tape.
///
/// Every operation computes its value immediately and appends a node; a node is
/// written once and never modified, so the reverse pass is a single backwards
/// sweep over the record.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(DiffError::Shape(msg))
}

fn dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    t.as_matrix_dims()
        .ok_or_else(|| DiffError::Shape(format!("{what}: expected vector or matrix, got {:?}", t.shape())))
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn owns(&self, v: Var) -> bool {
        v.tape == self.id && v.idx < self.nodes.borrow().len()
    }

    /// Borrow a recorded value.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        assert!(self.owns(v), "variable does not belong to this tape");
        Ref::map(self.nodes.borrow(), |n| &n[v.idx].value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// Records a named trainable leaf.
    pub fn param(&self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(value, Op::Leaf { name: Some(name.into()) })
    }

    /// Records an unnamed leaf; it still receives a gradient in [`Gradients`].
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { name: None })
    }

    /// Records every tensor of `store` as a named leaf.
    pub fn bind(&self, store: &ParamStore) -> VarMap {
        store
            .iter()
            .map(|(name, t)| (name.to_string(), self.param(name, t.clone())))
            .collect()
    }

    /// `x · W + b` for `x` of shape `[in]` or `[rows, in]`, `W` of shape
    /// `[in, out]` and `b` of shape `[out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.idx].value;
            let wv = &nodes[w.idx].value;
            let (rows, inp) = dims(xv, "linear input")?;
            let [win, out] = *wv.shape() else {
                return shape_err(format!("linear weight must be a matrix, got {:?}", wv.shape()));
            };
            if win != inp {
                return shape_err(format!("linear: input width {inp} vs weight rows {win}"));
            }
            let mut data = vec![0.0; rows * out];
            if let Some(b) = b {
                let bv = &nodes[b.idx].value;
                if bv.shape() != [out] {
                    return shape_err(format!("linear bias {:?} vs width {out}", bv.shape()));
                }
                for r in 0..rows {
                    data[r * out..(r + 1) * out].copy_from_slice(bv.data());
                }
            }
            let xd = xv.data();
            let wd = wv.data();
            for r in 0..rows {
                let orow = &mut data[r * out..(r + 1) * out];
                for k in 0..inp {
                    let xk = xd[r * inp + k];
                    if xk == 0.0 {
                        continue;
                    }
                    let wrow = &wd[k * out..(k + 1) * out];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xk * wv;
                    }
                }
            }
            let shape = if xv.rank() == 1 { vec![out] } else { vec![rows, out] };
            Tensor::new(shape, data)?
        };
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Matrix product `[r, k] × [k, c]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let bv = &nodes[b.idx].value;
            let ([r, k], [k2, c]) = (av.shape(), bv.shape()) else {
                return shape_err(format!("matmul needs matrices, got {:?} and {:?}", av.shape(), bv.shape()));
            };
            let (r, k, k2, c) = (*r, *k, *k2, *c);
            if k != k2 {
                return shape_err(format!("matmul inner dims {k} vs {k2}"));
            }
            Tensor::new(vec![r, c], matmul_raw(av.data(), bv.data(), r, k, c))?
        };
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let [r, c] = *av.shape() else {
                return shape_err(format!("transpose needs a matrix, got {:?}", av.shape()));
            };
            Tensor::new(vec![c, r], transpose_raw(av.data(), r, c))?
        };
        Ok(self.push(value, Op::Transpose(a)))
    }

    fn binary(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.idx].value;
        let bv = &nodes[b.idx].value;
        if av.shape() != bv.shape() {
            return shape_err(format!("{what}: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds vector `v` to every row of matrix `m`.
    pub fn add_row(&self, m: Var, v: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let mv = &nodes[m.idx].value;
            let vv = &nodes[v.idx].value;
            let (_, c) = dims(mv, "add_row")?;
            if vv.shape() != [c] {
                return shape_err(format!("add_row: row {:?} vs width {c}", vv.shape()));
            }
            let mut out = mv.clone();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o += vv.data()[i % c];
            }
            out
        };
        Ok(self.push(value, Op::AddRow { m, v }))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine { x, scale })
    }

    pub fn scale(&self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    pub fn tanh(&self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn ln(&self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Ln(x))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::SumAll(x))
    }

    /// Column sums of a `[r, c]` matrix, shape `[c]`. Each column is summed
    /// in ascending value order, so permuting the rows gives the same bits.
    pub fn sum_rows(&self, x: Var) -> Result<Var> {
        let value = {
            let xv = self.value(x);
            let [r, c] = *xv.shape() else {
                return shape_err(format!("sum_rows needs a matrix, got {:?}", xv.shape()));
            };
            let mut col = Vec::with_capacity(r);
            let out = (0..c)
                .map(|j| {
                    col.clear();
                    col.extend((0..r).map(|i| xv.data()[i * c + j]));
                    col.sort_by(f64::total_cmp);
                    col.iter().sum()
                })
                .collect();
            Tensor::vector(out)
        };
        Ok(self.push(value, Op::SumRows(x)))
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Concatenates vectors end to end, or matrices with equal row counts
    /// along columns. An empty part list yields an empty vector.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let (value, widths, rows) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.idx].value).collect();
            let is_vec = vals.first().is_none_or(|v| v.rank() == 1);
            let mut rows = 1;
            let mut widths = Vec::with_capacity(vals.len());
            for (i, v) in vals.iter().enumerate() {
                let (r, c) = dims(v, "concat part")?;
                if (v.rank() == 1) != is_vec {
                    return shape_err("concat: cannot mix vectors and matrices".into());
                }
                if i == 0 {
                    rows = r;
                } else if r != rows {
                    return shape_err(format!("concat: row counts {rows} vs {r}"));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (v, &w) in vals.iter().zip(&widths) {
                    data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
                }
            }
            let shape = if is_vec { vec![total] } else { vec![rows, total] };
            (Tensor::new(shape, data)?, widths, rows)
        };
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
                rows,
            },
        ))
    }

    /// Picks flat elements of `x` by index into a vector.
    pub fn gather(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let value = {
            let xv = self.value(x);
            if let Some(&bad) = idx.iter().find(|&&i| i >= xv.len()) {
                return shape_err(format!("gather index {bad} out of range {}", xv.len()));
            }
            Tensor::vector(idx.iter().map(|&i| xv.data()[i]).collect())
        };
        Ok(self.push(value, Op::Gather { x, idx: idx.to_vec() }))
    }

    /// Contiguous flat range of `x` starting at `start`, reshaped to `shape`.
    pub fn slice(&self, x: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let value = {
            let xv = self.value(x);
            let n: usize = shape.iter().product();
            if start + n > xv.len() {
                return shape_err(format!("slice {start}..{} beyond length {}", start + n, xv.len()));
            }
            Tensor::new(shape.to_vec(), xv.data()[start..start + n].to_vec())?
        };
        Ok(self.push(value, Op::Slice { x, start }))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&self, x: Var, i: usize) -> Result<Var> {
        let (r, c) = {
            let xv = self.value(x);
            dims(&xv, "row")?
        };
        if i >= r {
            return shape_err(format!("row {i} out of range {r}"));
        }
        self.slice(x, i * c, &[c])
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Tiles vector `v` into `rows` identical rows.
    pub fn repeat_rows(&self, v: Var, rows: usize) -> Result<Var> {
        let value = {
            let vv = self.value(v);
            if vv.rank() != 1 {
                return shape_err(format!("repeat_rows needs a vector, got {:?}", vv.shape()));
            }
            let mut data = Vec::with_capacity(rows * vv.len());
            for _ in 0..rows {
                data.extend_from_slice(vv.data());
            }
            Tensor::new(vec![rows, vv.len()], data)?
        };
        Ok(self.push(value, Op::RepeatRows(v)))
    }

    /// Row-wise softmax of a matrix (or of a single vector).
    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let value = {
            let xv = self.value(x);
            let (r, c) = dims(&xv, "softmax")?;
            let mut out = xv.clone();
            for i in 0..r {
                let row = &mut out.data_mut()[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            out
        };
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    /// Softmax over the allowed entries of a logit vector; masked entries are
    /// exactly zero and receive no gradient.
    pub fn masked_softmax(&self, logits: Var, allowed: &[bool]) -> Result<Var> {
        let value = {
            let lv = self.value(logits);
            if lv.rank() != 1 {
                return shape_err(format!("masked_softmax needs a vector, got {:?}", lv.shape()));
            }
            Tensor::vector(crate::masked_softmax(lv.data(), allowed)?)
        };
        Ok(self.push(value, Op::MaskedSoftmax(logits)))
    }

    /// Summed binary cross-entropy of probabilities `p` against labels `y`.
    /// Each log argument is floored at `eps`.
    pub fn binary_cross_entropy(&self, p: Var, y: &[f64], eps: f64) -> Result<Var> {
        let value = {
            let pv = self.value(p);
            if pv.len() != y.len() {
                return shape_err(format!("bce: {} predictions vs {} labels", pv.len(), y.len()));
            }
            let loss: f64 = pv
                .data()
                .iter()
                .zip(y)
                .map(|(&p, &y)| bce_term(p, y, eps))
                .sum();
            Tensor::scalar(loss)
        };
        Ok(self.push(
            value,
            Op::Bce {
                p,
                y: y.to_vec(),
                eps,
            },
        ))
    }

    /// Reverse pass seeded with upstream gradients for one or more outputs.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            if !self.owns(*v) {
                return Err(DiffError::LossNotOnTape);
            }
            if nodes[v.idx].value.shape() != g.shape() {
                return shape_err(format!(
                    "seed {:?} for output {:?}",
                    g.shape(),
                    nodes[v.idx].value.shape()
                ));
            }
            accumulate(&mut grads[v.idx], g.clone());
            last = last.max(v.idx);
        }
        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    /// Gradient of a scalar loss with respect to every named leaf. Leaves the
    /// loss does not depend on get zero gradients.
    pub fn grad(&self, loss: Var) -> Result<ParamStore> {
        if !self.owns(loss) || self.value(loss).len() != 1 {
            return Err(DiffError::LossNotOnTape);
        }
        let shape = self.shape(loss);
        let grads = self.backward(&[(loss, Tensor::full(&shape, 1.0))])?;
        Ok(self.param_grads(&grads))
    }

    /// Collects gradients of all named leaves into a store.
    pub fn param_grads(&self, grads: &Gradients) -> ParamStore {
        let nodes = self.nodes.borrow();
        let mut out = ParamStore::new();
        for (i, node) in nodes.iter().enumerate() {
            if let Op::Leaf { name: Some(name) } = &node.op {
                let g = grads
                    .grads
                    .get(i)
                    .and_then(Option::as_ref)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.get_mut(name) {
                    Some(existing) => existing.add_assign(&g),
                    None => out.set(name.clone(), g),
                }
            }
        }
        out
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the seeds do not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bce_term(p: f64, y: f64, eps: f64) -> f64 {
    let mut loss = 0.0;
    if y != 0.0 {
        loss -= y * p.max(eps).ln();
    }
    if y != 1.0 {
        loss -= (1.0 - y) * (1.0 - p).max(eps).ln();
    }
    loss
}

fn bce_grad(p: f64, y: f64, eps: f64) -> f64 {
    let mut g = 0.0;
    if y != 0.0 && p > eps {
        g -= y / p;
    }
    if y != 1.0 && 1.0 - p > eps {
        g += (1.0 - y) / (1.0 - p);
    }
    g
}

fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[kk * c..(kk + 1) * c]) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn add_into(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    let t = Tensor::new(shape.to_vec(), data).expect("gradient shape");
    accumulate(&mut grads[v.idx], t);
}

fn propagate(nodes: &[Node], i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[i];
    let out = &node.value;
    let gd = g.data();
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Linear { x, w, b } => {
            let xv = &nodes[x.idx].value;
            let wv = &nodes[w.idx].value;
            let (rows, inp) = xv.as_matrix_dims().unwrap();
            let outw = wv.shape()[1];
            let xd = xv.data();
            let wd = wv.data();
            let mut dx = vec![0.0; rows * inp];
            let mut dw = vec![0.0; inp * outw];
            for r in 0..rows {
                let grow = &gd[r * outw..(r + 1) * outw];
                for k in 0..inp {
                    let wrow = &wd[k * outw..(k + 1) * outw];
                    dx[r * inp + k] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                    let xk = xd[r * inp + k];
                    if xk != 0.0 {
                        for (d, gv) in dw[k * outw..(k + 1) * outw].iter_mut().zip(grow) {
                            *d += xk * gv;
                        }
                    }
                }
            }
            add_into(grads, *x, xv.shape(), dx);
            add_into(grads, *w, wv.shape(), dw);
            if let Some(b) = b {
                let mut db = vec![0.0; outw];
                for r in 0..rows {
                    for (d, gv) in db.iter_mut().zip(&gd[r * outw..(r + 1) * outw]) {
                        *d += gv;
                    }
                }
                add_into(grads, *b, &[outw], db);
            }
        }
        Op::MatMul { a, b } => {
            let av = &nodes[a.idx].value;
            let bv = &nodes[b.idx].value;
            let (r, k) = (av.shape()[0], av.shape()[1]);
            let c = bv.shape()[1];
            let bt = transpose_raw(bv.data(), k, c);
            let da = matmul_raw(gd, &bt, r, c, k);
            let at = transpose_raw(av.data(), r, k);
            let db = matmul_raw(&at, gd, k, r, c);
            add_into(grads, *a, av.shape(), da);
            add_into(grads, *b, bv.shape(), db);
        }
        Op::Transpose(a) => {
            let [r, c] = *out.shape() else { unreachable!() };
            add_into(grads, *a, &[c, r], transpose_raw(gd, r, c));
        }
        Op::Add(a, b) => {
            add_into(grads, *a, out.shape(), gd.to_vec());
            add_into(grads, *b, out.shape(), gd.to_vec());
        }
        Op::Sub(a, b) => {
            add_into(grads, *a, out.shape(), gd.to_vec());
            add_into(grads, *b, out.shape(), gd.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let av = nodes[a.idx].value.data();
            let bv = nodes[b.idx].value.data();
            add_into(grads, *a, out.shape(), gd.iter().zip(bv).map(|(g, y)| g * y).collect());
            add_into(grads, *b, out.shape(), gd.iter().zip(av).map(|(g, x)| g * x).collect());
        }
        Op::AddRow { m, v } => {
            let c = nodes[v.idx].value.len();
            let mut dv = vec![0.0; c];
            for (j, gv) in gd.iter().enumerate() {
                dv[j % c] += gv;
            }
            add_into(grads, *m, out.shape(), gd.to_vec());
            add_into(grads, *v, &[c], dv);
        }
        Op::Affine { x, scale } => {
            add_into(grads, *x, out.shape(), gd.iter().map(|g| g * scale).collect());
        }
        Op::Tanh(x) => {
            let d = gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
            add_into(grads, *x, out.shape(), d);
        }
        Op::Sigmoid(x) => {
            let d = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
            add_into(grads, *x, out.shape(), d);
        }
        Op::Exp(x) => {
            let d = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
            add_into(grads, *x, out.shape(), d);
        }
        Op::Ln(x) => {
            let xv = nodes[x.idx].value.data();
            let d = gd.iter().zip(xv).map(|(g, x)| g / x).collect();
            add_into(grads, *x, out.shape(), d);
        }
        Op::SumAll(x) => {
            let xv = &nodes[x.idx].value;
            add_into(grads, *x, xv.shape(), vec![gd[0]; xv.len()]);
        }
        Op::SumRows(x) => {
            let xv = &nodes[x.idx].value;
            let r = xv.shape()[0];
            let mut d = Vec::with_capacity(xv.len());
            for _ in 0..r {
                d.extend_from_slice(gd);
            }
            add_into(grads, *x, xv.shape(), d);
        }
        Op::Concat { parts, widths, rows } => {
            let total: usize = widths.iter().sum();
            let mut offset = 0;
            for (p, &w) in parts.iter().zip(widths) {
                let mut d = Vec::with_capacity(rows * w);
                for r in 0..*rows {
                    d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                }
                add_into(grads, *p, nodes[p.idx].value.shape(), d);
                offset += w;
            }
        }
        Op::Gather { x, idx } => {
            let xv = &nodes[x.idx].value;
            let mut d = vec![0.0; xv.len()];
            for (&j, gv) in idx.iter().zip(gd) {
                d[j] += gv;
            }
            add_into(grads, *x, xv.shape(), d);
        }
        Op::Slice { x, start } => {
            let xv = &nodes[x.idx].value;
            let mut d = vec![0.0; xv.len()];
            d[*start..start + gd.len()].copy_from_slice(gd);
            add_into(grads, *x, xv.shape(), d);
        }
        Op::Reshape(x) => {
            add_into(grads, *x, nodes[x.idx].value.shape(), gd.to_vec());
        }
        Op::RepeatRows(v) => {
            let c = nodes[v.idx].value.len();
            let mut d = vec![0.0; c];
            for (j, gv) in gd.iter().enumerate() {
                d[j % c] += gv;
            }
            add_into(grads, *v, &[c], d);
        }
        Op::SoftmaxRows(x) | Op::MaskedSoftmax(x) => {
            let (r, c) = out.as_matrix_dims().unwrap();
            let p = out.data();
            let mut d = vec![0.0; p.len()];
            for i in 0..r {
                let s = i * c..(i + 1) * c;
                let inner: f64 = gd[s.clone()].iter().zip(&p[s.clone()]).map(|(g, p)| g * p).sum();
                for j in s {
                    d[j] = p[j] * (gd[j] - inner);
                }
            }
            add_into(grads, *x, out.shape(), d);
        }
        Op::Bce { p, y, eps } => {
            let pv = &nodes[p.idx].value;
            let d = pv
                .data()
                .iter()
                .zip(y)
                .map(|(&p, &y)| gd[0] * bce_grad(p, y, *eps))
                .collect();
            add_into(grads, *p, pv.shape(), d);
        }
    }
}
