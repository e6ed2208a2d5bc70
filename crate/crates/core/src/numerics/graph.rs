//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter the
//! tape through [`Graph::param`], which binds each [`ParamId`] to exactly one
//! leaf so that shared weights receive the sum of all their uses.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::strides;
use super::{ParamId, ParamStore, Rng, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    MaskedSoftmax { x: Var, mask: Rc<Vec<bool>> },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<f64> },
    Dropout { x: Var, keep: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    Gather { table: Var, ids: Vec<usize> },
    RelBias { table: Var, buckets: Rc<Vec<usize>> },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Tape of tensor operations supporting a backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    no_grad: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose parameter leaves do not require gradients.
    pub fn inference() -> Self {
        Graph {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter to a leaf, reusing the leaf on repeated calls.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let rg = !self.no_grad && store.is_trainable(id);
        let v = self.leaf(store.value(id).clone(), rg);
        self.bound.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Adds the gradients of every bound parameter into the store.
    pub fn flush_param_grads(&self, store: &mut ParamStore) {
        let mut bound: Vec<_> = self.bound.iter().collect();
        bound.sort();
        for (id, v) in bound {
            if let Some(g) = self.grad(*v) {
                store.accumulate_grad(*id, g);
            }
        }
    }

    /// Matrix product. `a` is `[m,k]` or `[batch,m,k]`; `b` is `[k,n]` or
    /// `[batch,k,n]` (`[.., n, k]` when `trans_b`). A 2-D `b` broadcasts
    /// across the batch of a 3-D `a`.
    pub fn matmul_ex(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let dims_err = || Error::dims("matmul", &sa, &sb);
        let (batch, m, k) = match sa.len() {
            2 => (None, sa[0], sa[1]),
            3 => (Some(sa[0]), sa[1], sa[2]),
            _ => return Err(dims_err()),
        };
        let (b_batch, kb, n) = match (sb.len(), trans_b) {
            (2, false) => (None, sb[0], sb[1]),
            (2, true) => (None, sb[1], sb[0]),
            (3, false) => (Some(sb[0]), sb[1], sb[2]),
            (3, true) => (Some(sb[0]), sb[2], sb[1]),
            _ => return Err(dims_err()),
        };
        if kb != k {
            return Err(dims_err());
        }
        match (batch, b_batch) {
            (_, None) => {}
            (Some(x), Some(y)) if x == y => {}
            _ => return Err(dims_err()),
        }
        let nb = batch.unwrap_or(1);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; nb * m * n];
        for bi in 0..nb {
            let a_s = &av[bi * m * k..(bi + 1) * m * k];
            let b_s = if b_batch.is_some() { &bv[bi * k * n..(bi + 1) * k * n] } else { bv };
            let c_s = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                gemm_nt(a_s, b_s, c_s, m, k, n);
            } else {
                gemm_nn(a_s, b_s, c_s, m, k, n);
            }
        }
        let shape = match batch {
            Some(x) => vec![x, m, n],
            None => vec![m, n],
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Softmax along `axis`, computed with max subtraction. A slice whose
    /// entries are all `-inf` becomes uniform.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Parameter(format!(
                "softmax axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = src[at(j)];
                }
                softmax_in_place(&mut buf, None);
                for (j, b) in buf.iter().enumerate() {
                    out[at(j)] = *b;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Softmax over the last axis with an attention mask of shape
    /// `[groups, q, k]` matching the last two dims of `x`. The leading dims
    /// of `x` are split into `groups` equal consecutive blocks, each using
    /// its own mask. `mask[i*k + j] == true` means `j` is visible from `i`.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::Shape("masked softmax needs rank >= 2".into()));
        }
        let k = shape[shape.len() - 1];
        let q = shape[shape.len() - 2];
        let leading: usize = shape[..shape.len() - 2].iter().product();
        let groups = if q * k == 0 { 1 } else { mask.len() / (q * k) };
        if mask.len() != groups * q * k || groups == 0 || leading % groups != 0 {
            return Err(Error::dims("masked_softmax", &shape, &[mask.len()]));
        }
        let src = self.value(x).data();
        let mut out = src.to_vec();
        for (r, row) in out.chunks_mut(k).enumerate() {
            softmax_in_place(row, Some(mask_row(&mask, r, q, k, leading)));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaskedSoftmax { x, mask }, rg))
    }

    /// `gain ⊙ x / sqrt(mean(x²) + eps)` over the last axis. No centering,
    /// no additive bias.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Shape("rms_norm of a scalar".into()))?;
        if self.shape(gain) != [d] {
            return Err(Error::dims("rms_norm", &shape, self.shape(gain)));
        }
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let rows = xv.len() / d.max(1);
        let mut inv_rms = Vec::with_capacity(rows);
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            inv_rms.push(inv);
            for j in 0..d {
                out[r * d + j] = gv[j] * row[j] * inv;
            }
        }
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.push(Tensor::new(shape, out)?, Op::RmsNorm { x, gain, inv_rms }, rg))
    }

    /// Inverted dropout. Identity when not training or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { scale })
            .collect();
        let data = self.value(x).data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Dropout { x, keep }, rg))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[len, vocab]`). `None` targets are ignored; if every
    /// target is ignored the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::dims("cross_entropy", &shape, &[targets.len()]));
        }
        let vocab = shape[1];
        if let Some(bad) = targets.iter().flatten().find(|t| **t >= vocab) {
            return Err(Error::Index {
                index: *bad,
                size: vocab,
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (row, t) in probs.chunks_mut(vocab).zip(targets) {
            softmax_in_place(row, None);
            if let Some(t) = t {
                total -= row[*t].ln();
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Rows of a `[n, d]` table selected by `ids`, giving `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape("gather expects a 2-D table".into()));
        }
        let (n, d) = (shape[0], shape[1]);
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= n {
                return Err(Error::Index { index: i, size: n });
            }
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Expands a `[heads, buckets]` bias table using a precomputed
    /// `[groups, q, k]` bucket map into `[groups * heads, q, k]`, group-major.
    pub fn relative_bias(&mut self, table: Var, buckets: Rc<Vec<usize>>, q: usize, k: usize) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || q * k == 0 || buckets.len() % (q * k) != 0 {
            return Err(Error::dims("relative_bias", &shape, &[q, k]));
        }
        let groups = buckets.len() / (q * k);
        let (h, nb) = (shape[0], shape[1]);
        if let Some(b) = buckets.iter().find(|b| **b >= nb) {
            return Err(Error::Index { index: *b, size: nb });
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(groups * h * q * k);
        for map in buckets.chunks(q * k) {
            for head in 0..h {
                out.extend(map.iter().map(|b| tv[head * nb + b]));
            }
        }
        let rg = self.rg(table);
        Ok(self.push(Tensor::new(vec![groups * h, q, k], out)?, Op::RelBias { table, buckets }, rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|p| *p >= shape.len() || std::mem::replace(&mut seen[*p], true)) {
            return Err(Error::Parameter(format!("bad permutation {perm:?} for rank {}", shape.len())));
        }
        let out = permute_data(self.value(x).data(), &shape, perm);
        let new_shape: Vec<usize> = perm.iter().map(|p| shape[*p]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Backpropagates from a scalar `loss`, adding into the stored gradient
    /// of every node that requires one. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
            match &mut self.nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[id];
        let send = |v: Var, delta: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (nb, m, k) = if sa.len() == 3 { (sa[0], sa[1], sa[2]) } else { (1, sa[0], sa[1]) };
                let b_batched = sb.len() == 3;
                let n = if *trans_b { sb[sb.len() - 2] } else { sb[sb.len() - 1] };
                if self.rg(*a) {
                    let mut da = vec![0.0; av.len()];
                    for bi in 0..nb {
                        let g_s = &g[bi * m * n..(bi + 1) * m * n];
                        let b_s = if b_batched { &bv[bi * k * n..(bi + 1) * k * n] } else { bv };
                        let da_s = &mut da[bi * m * k..(bi + 1) * m * k];
                        if *trans_b {
                            gemm_nn(g_s, b_s, da_s, m, n, k);
                        } else {
                            gemm_nt(g_s, b_s, da_s, m, n, k);
                        }
                    }
                    send(*a, da, grads);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; bv.len()];
                    for bi in 0..nb {
                        let g_s = &g[bi * m * n..(bi + 1) * m * n];
                        let a_s = &av[bi * m * k..(bi + 1) * m * k];
                        let db_s = if b_batched { &mut db[bi * k * n..(bi + 1) * k * n] } else { &mut db[..] };
                        if *trans_b {
                            gemm_tn(g_s, a_s, db_s, n, m, k);
                        } else {
                            gemm_tn(a_s, g_s, db_s, k, m, n);
                        }
                    }
                    send(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.to_vec(), grads);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    send(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect(), grads);
                }
                if self.rg(*b) {
                    send(*b, g.iter().zip(av).map(|(x, y)| x * y).collect(), grads);
                }
            }
            Op::Scale(x, c) => send(*x, g.iter().map(|v| v * c).collect(), grads),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                send(*x, g.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect(), grads);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                send(*x, dx, grads);
            }
            Op::MaskedSoftmax { x, mask } => {
                let y = node.value.data();
                let shape = node.value.shape();
                let k = shape[shape.len() - 1];
                let q = shape[shape.len() - 2];
                let leading: usize = shape[..shape.len() - 2].iter().product();
                let mut dx = vec![0.0; y.len()];
                for (r, (dxr, (yr, gr))) in dx.chunks_mut(k).zip(y.chunks(k).zip(g.chunks(k))).enumerate() {
                    let m = mask_row(mask, r, q, k, leading);
                    if !m.iter().any(|b| *b) {
                        continue;
                    }
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*x, dx, grads);
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let d = gv.len();
                if self.rg(*x) {
                    let mut dx = vec![0.0; xv.len()];
                    for (r, inv) in inv_rms.iter().enumerate() {
                        let xr = &xv[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        // y_j = w_j x_j s, s = (mean(x²)+eps)^-1/2, ds/dx_i = -s³ x_i / d
                        let dot: f64 = (0..d).map(|j| gr[j] * gv[j] * xr[j]).sum();
                        let s3 = inv * inv * inv / d as f64;
                        for i in 0..d {
                            dx[r * d + i] = gr[i] * gv[i] * inv - s3 * xr[i] * dot;
                        }
                    }
                    send(*x, dx, grads);
                }
                if self.rg(*gain) {
                    let mut dg = vec![0.0; d];
                    for (r, inv) in inv_rms.iter().enumerate() {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xv[r * d + j] * inv;
                        }
                    }
                    send(*gain, dg, grads);
                }
            }
            Op::Dropout { x, keep } => send(*x, g.iter().zip(keep).map(|(a, b)| a * b).collect(), grads),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count > 0 {
                    let vocab = self.shape(*logits)[1];
                    let scale = g[0] / *count as f64;
                    let mut dl = vec![0.0; probs.len()];
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for j in 0..vocab {
                            dl[r * vocab + j] = probs[r * vocab + j] * scale;
                        }
                        dl[r * vocab + t] -= scale;
                    }
                    send(*logits, dl, grads);
                }
            }
            Op::Gather { table, ids } => {
                let shape = self.shape(*table);
                let d = shape[1];
                let mut dt = vec![0.0; shape[0] * d];
                for (r, i) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += g[r * d + j];
                    }
                }
                send(*table, dt, grads);
            }
            Op::RelBias { table, buckets } => {
                let shape = self.shape(*table);
                let (h, nb) = (shape[0], shape[1]);
                let out_shape = node.value.shape();
                let qk = out_shape[1] * out_shape[2];
                let mut dt = vec![0.0; h * nb];
                for (gi, map) in buckets.chunks(qk).enumerate() {
                    for head in 0..h {
                        let gs = &g[(gi * h + head) * qk..(gi * h + head + 1) * qk];
                        for (b, gv) in map.iter().zip(gs) {
                            dt[head * nb + b] += gv;
                        }
                    }
                }
                send(*table, dt, grads);
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, p) in perm.iter().enumerate() {
                    inverse[*p] = i;
                }
                send(*x, permute_data(g, node.value.shape(), &inverse), grads);
            }
            Op::Reshape(x) => send(*x, g.to_vec(), grads),
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()], grads),
            Op::Mean(x) => {
                let n = self.value(*x).numel().max(1);
                send(*x, vec![g[0] / n as f64; n], grads)
            }
        }
        Ok(())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Stable softmax of `row` in place. Masked-out or `-inf` entries get zero
/// probability; a row with nothing visible becomes uniform.
fn mask_row(mask: &[bool], r: usize, q: usize, k: usize, leading: usize) -> &[bool] {
    let groups = mask.len() / (q * k);
    let group = (r / q) / (leading / groups);
    let at = group * q * k + (r % q) * k;
    &mask[at..at + k]
}

pub(crate) fn softmax_in_place(row: &mut [f64], mask: Option<&[bool]>) {
    let visible = |j: usize| mask.map_or(true, |m| m[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| visible(*j))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
        return;
    }
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        *v = if visible(j) { (*v - max).exp() } else { 0.0 };
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|p| shape[*p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|p| in_strides[*p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..src.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}
