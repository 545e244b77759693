//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation in creation order, which is a
//! topological order. [`Graph::backward`] walks the tape in reverse and
//! returns gradients for the parameters that were read from a
//! [`ParamStore`]; the parameters themselves are never touched.

use super::rng::SeededRng;
use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, softmax_in_place, Real, Tensor};
use super::NumericsError;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named learnable tensors plus their accumulated gradients, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Swaps in a new value (possibly with a new shape) and resets its gradient.
    pub fn replace(&mut self, id: ParamId, value: Tensor<T>) {
        let p = &mut self.params[id.0];
        p.grad = Tensor::zeros(value.shape());
        p.value = value;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

/// Result of a backward pass, indexed by [`ParamId`]. Parameters that were not
/// on the path to the loss have no entry; [`Gradients::get_or_zeros`] fills them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    per_param: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.per_param.get(id.0).and_then(Option::as_ref)
    }

    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Param(ParamId),
    Constant,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout(Var, Vec<T>),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        epsilon: T,
        pad_id: Option<usize>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording tape. Borrowing the parameter store keeps parameter reads free of copies.
pub struct Graph<'p, T> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self
                .params
                .expect("parameter node without a store")
                .value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var, NumericsError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(NumericsError::NonFinite {
                op: op_name(&op),
            });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(
            self.params.is_some_and(|p| id.0 < p.len()),
            "parameter {id:?} is not in this graph's store"
        );
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("matmul_bt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        gemm_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMulBT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        if self.shape(a).len() != 2 {
            return Err(shape_err("transpose", self.shape(a), &[]));
        }
        let t = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let n = self.value(a).cols();
        if self.value(bias).len() != n {
            return Err(shape_err("add_row", self.shape(a), self.shape(bias)));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o = *o + bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Softmax along the last axis. `blocked[r * cols + c] == true` removes
    /// that entry from row `r`'s support; a row with no open entry is an error.
    pub fn softmax(&mut self, a: Var, blocked: Option<&[bool]>) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        let cols = out.cols();
        if let Some(mask) = blocked {
            if mask.len() != out.len() {
                return Err(shape_err("softmax mask", out.shape(), &[mask.len()]));
            }
        }
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            match blocked {
                None => softmax_in_place(row),
                Some(mask) => {
                    let m = &mask[r * cols..(r + 1) * cols];
                    if m.iter().all(|&b| b) {
                        return Err(NumericsError::FullyMasked { row: r });
                    }
                    let max = row
                        .iter()
                        .zip(m)
                        .filter(|(_, &b)| !b)
                        .map(|(&v, _)| v)
                        .fold(T::neg_infinity(), |x, y| if y > x { y } else { x });
                    let mut total = T::zero();
                    for (v, &b) in row.iter_mut().zip(m) {
                        *v = if b { T::zero() } else { (*v - max).exp() };
                        total = total + *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / total;
                    }
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, NumericsError> {
        let n = self.value(x).cols();
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x);
        let rows = xv.rows();
        let nf = T::from_usize(n).unwrap();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); rows * n];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * n];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Inverted dropout. Outside training, or at rate 0, this is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, training: bool, rng: &mut SeededRng) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.unit() < rate { T::zero() } else { keep })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a);
        self.push(out, Op::Dropout(a, mask), rg)
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::IndexOutOfRange { index: id, bound: v });
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.rg(table);
        self.push(Tensor::new(&[ids.len(), d], out)?, Op::Gather(table, ids.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(shape_err("slice_cols", t.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(Tensor::new(&[r, len], out)?, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if start + len > r {
            return Err(shape_err("slice_rows", t.shape(), &[start, len]));
        }
        let out = t.data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(&[len, c], out)?, Op::SliceRows(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != r {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            total += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(&[r, total], out)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", self.shape(parts[0]), t.shape()));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(&[rows, c], out)?, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let s = t.sum() / T::from_usize(t.len().max(1)).unwrap();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Label-smoothed cross-entropy averaged over non-pad rows of `logits [T, V]`.
    ///
    /// The target distribution puts `1 - epsilon` on the gold id and
    /// `epsilon / (V - 1)` on every other id. Rows whose target is `pad_id`
    /// contribute nothing; if every row is padding the loss is zero.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        epsilon: f64,
        pad_id: Option<usize>,
    ) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(NumericsError::InvalidArgument(format!(
                "label smoothing {epsilon} outside [0, 1)"
            )));
        }
        let lv = self.value(logits);
        let (rows, v) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(shape_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if epsilon > 0.0 && v < 2 {
            return Err(NumericsError::InvalidArgument(
                "label smoothing needs at least two classes".into(),
            ));
        }
        let eps = T::from_f64_lossy(epsilon);
        let off = if v > 1 {
            eps / T::from_usize(v - 1).unwrap()
        } else {
            T::zero()
        };
        let on = T::one() - eps;
        let mut probs = vec![T::zero(); rows * v];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &y) in targets.iter().enumerate() {
            if y >= v {
                return Err(NumericsError::IndexOutOfRange { index: y, bound: v });
            }
            let row = lv.row(r);
            let max = row
                .iter()
                .copied()
                .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            for (j, &x) in row.iter().enumerate() {
                probs[r * v + j] = (x - lse).exp();
            }
            if Some(y) == pad_id {
                continue;
            }
            count += 1;
            let mut loss = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let q = if j == y { on } else { off };
                if q != T::zero() {
                    loss = loss - q * (x - lse);
                }
            }
            total = total + loss;
        }
        let value = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).unwrap()
        };
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                epsilon: eps,
                pad_id,
                count,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Gradients are returned, not applied.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let n_params = self.params.map_or(0, ParamStore::len);
        let mut per_param: Vec<Option<Tensor<T>>> = vec![None; n_params];
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let send = |v: Var, t: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Param(id) => match &mut per_param[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if self.rg(*a) {
                        let mut ga = vec![T::zero(); m * k];
                        gemm_bt_acc(g.data(), bv.data(), &mut ga, m, n, k);
                        send(*a, Tensor::new(&[m, k], ga)?, &mut grads);
                    }
                    if self.rg(*b) {
                        let mut gb = vec![T::zero(); k * n];
                        gemm_at_acc(av.data(), g.data(), &mut gb, m, k, n);
                        send(*b, Tensor::new(&[k, n], gb)?, &mut grads);
                    }
                }
                Op::MatMulBT(a, b) => {
                    // out[m,n] = a[m,k] b[n,k]ᵀ
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                    if self.rg(*a) {
                        let mut ga = vec![T::zero(); m * k];
                        gemm_acc(g.data(), bv.data(), &mut ga, m, n, k);
                        send(*a, Tensor::new(&[m, k], ga)?, &mut grads);
                    }
                    if self.rg(*b) {
                        let mut gb = vec![T::zero(); n * k];
                        gemm_at_acc(g.data(), av.data(), &mut gb, m, n, k);
                        send(*b, Tensor::new(&[n, k], gb)?, &mut grads);
                    }
                }
                Op::Transpose(a) => send(*a, g.transpose(), &mut grads),
                Op::Add(a, b) => {
                    send(*b, g.clone(), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let ga = mul_data(&g, self.value(*b));
                    let gb = mul_data(&g, self.value(*a));
                    send(*a, ga, &mut grads);
                    send(*b, gb, &mut grads);
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        let n = g.cols();
                        let mut gb = vec![T::zero(); n];
                        for r in 0..g.rows() {
                            for (acc, &x) in gb.iter_mut().zip(g.row(r)) {
                                *acc = *acc + x;
                            }
                        }
                        send(*bias, Tensor::new(self.shape(*bias), gb)?, &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|v| v * c), &mut grads);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    send(*a, Tensor::new(g.shape(), data)?, &mut grads);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(idx));
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    send(*a, gx, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let n = g.cols();
                    let rows = g.rows();
                    let nf = T::from_usize(n).unwrap();
                    let gv = self.value(*gain).data();
                    if self.rg(*gain) || self.rg(*bias) {
                        let mut gg = vec![T::zero(); n];
                        let mut gbias = vec![T::zero(); n];
                        for r in 0..rows {
                            for c in 0..n {
                                let d = g.data()[r * n + c];
                                gg[c] = gg[c] + d * xhat[r * n + c];
                                gbias[c] = gbias[c] + d;
                            }
                        }
                        send(*gain, Tensor::new(self.shape(*gain), gg)?, &mut grads);
                        send(*bias, Tensor::new(self.shape(*bias), gbias)?, &mut grads);
                    }
                    if self.rg(*x) {
                        let mut gx = vec![T::zero(); rows * n];
                        for r in 0..rows {
                            let mut sum_d = T::zero();
                            let mut sum_dx = T::zero();
                            for c in 0..n {
                                let dh = g.data()[r * n + c] * gv[c];
                                sum_d = sum_d + dh;
                                sum_dx = sum_dx + dh * xhat[r * n + c];
                            }
                            for c in 0..n {
                                let dh = g.data()[r * n + c] * gv[c];
                                gx[r * n + c] = inv_std[r] / nf
                                    * (nf * dh - sum_d - xhat[r * n + c] * sum_dx);
                            }
                        }
                        send(*x, Tensor::new(g.shape(), gx)?, &mut grads);
                    }
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(&x, &m)| x * m).collect();
                    send(*a, Tensor::new(g.shape(), data)?, &mut grads);
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.shape());
                    let d = t.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id * d..(id + 1) * d];
                        for (o, &x) in dst.iter_mut().zip(g.row(r)) {
                            *o = *o + x;
                        }
                    }
                    send(*table, gt, &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.shape());
                    let len = g.cols();
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + len].copy_from_slice(g.row(r));
                    }
                    send(*a, ga, &mut grads);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.shape());
                    let c = src.cols();
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    send(*a, ga, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let rows = g.rows();
                        let mut gp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        send(p, Tensor::new(self.shape(p), gp)?, &mut grads);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let gp = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        send(p, Tensor::new(self.shape(p), gp)?, &mut grads);
                    }
                }
                Op::Sum(a) => {
                    let s = g.item();
                    send(*a, Tensor::filled(self.shape(*a), s), &mut grads);
                }
                Op::Mean(a) => {
                    let n = T::from_usize(self.value(*a).len().max(1)).unwrap();
                    let s = g.item() / n;
                    send(*a, Tensor::filled(self.shape(*a), s), &mut grads);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                    epsilon,
                    pad_id,
                    count,
                } => {
                    let lv = self.value(*logits);
                    let v = lv.cols();
                    let mut gl = vec![T::zero(); probs.len()];
                    if *count > 0 {
                        let scale = g.item() / T::from_usize(*count).unwrap();
                        let off = if v > 1 {
                            *epsilon / T::from_usize(v - 1).unwrap()
                        } else {
                            T::zero()
                        };
                        let on = T::one() - *epsilon;
                        for (r, &y) in targets.iter().enumerate() {
                            if Some(y) == *pad_id {
                                continue;
                            }
                            for j in 0..v {
                                let q = if j == y { on } else { off };
                                gl[r * v + j] = (probs[r * v + j] - q) * scale;
                            }
                        }
                    }
                    send(*logits, Tensor::new(lv.shape(), gl)?, &mut grads);
                }
            }
        }
        Ok(Gradients { per_param })
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mul_data<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Param(_) => "param",
        Op::Constant => "constant",
        Op::MatMul(..) => "matmul",
        Op::MatMulBT(..) => "matmul_bt",
        Op::Transpose(_) => "transpose",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::Softmax(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Dropout(..) => "dropout",
        Op::Gather(..) => "gather",
        Op::SliceCols(..) => "slice_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}
