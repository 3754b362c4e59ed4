//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap, reference-counted handle onto a node of a dynamic
//! computation graph. Every operation records its inputs and a backward rule;
//! [`Tensor::backward`] walks the graph in reverse topological order and
//! accumulates gradients into every leaf that requires them.
//!
//! Broadcasting is deliberately narrow: the smaller operand of an elementwise
//! op must match a trailing suffix of the larger operand's shape (e.g. a bias
//! `[C]` against activations `[B, T, C]`), and matmul only broadcasts a
//! batch-free operand against a batched one.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Plain row-major array without graph bookkeeping.
///
/// Used for datasets and other read-only values that may be shared across
/// threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(TensorError::Contract(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row `i` of a 2-D array.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.shape[1..].iter().product::<usize>();
        &self.data[i * width..(i + 1) * width]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Gathers the given leading-axis rows into a new array.
    pub fn select_rows(&self, idx: &[usize]) -> Array {
        let width = self.shape[1..].iter().product::<usize>();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Array { shape, data }
    }
}

/// Boolean mask for [`masked_softmax`]; `true` marks an allowed entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, allowed: Vec<bool>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != allowed.len() {
            return Err(TensorError::Contract(format!(
                "mask shape {:?} needs {} entries, got {}",
                shape,
                numel(&shape),
                allowed.len()
            )));
        }
        Ok(Self { shape, allowed })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Self { shape: vec![rows, cols], allowed }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.shape[1] + j]
    }
}

enum Op {
    Add(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    MulConst(Tensor, Vec<f64>),
    MatMul(Tensor, Tensor),
    Permute(Tensor, Vec<usize>),
    Reshape(Tensor),
    Softmax(Tensor),
    LayerNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Conv1d {
        x: Tensor,
        w: Tensor,
        b: Tensor,
        dilation: usize,
    },
    Sum(Tensor),
    Mean(Tensor),
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::MulConst(a, _)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
            Op::LayerNorm { x, gamma, beta, .. } | Op::BatchNorm { x, gamma, beta, .. } => {
                vec![x, gamma, beta]
            }
            Op::Conv1d { x, w, b, .. } => vec![x, w, b],
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Option<Op>,
}

/// Handle onto a graph node. Cloning shares the node.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::Contract(format!(
            "shape {shape:?} has a zero extent"
        )));
    }
    Ok(())
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

impl Tensor {
    fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op: if requires_grad { Some(op) } else { None },
        }))
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(TensorError::Contract(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op: None,
        })))
    }

    /// Constant leaf (no gradient tracking).
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Self::leaf(shape, data, false)
    }

    /// Trainable leaf.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Self::leaf(shape, data, true)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel(&shape);
        Self::leaf(shape, vec![0.0; n], false).expect("zero extents are rejected by callers")
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::leaf(vec![1], vec![v], false).expect("scalar shape is valid")
    }

    pub fn from_array(a: &Array) -> Tensor {
        Tensor::new(a.shape.clone(), a.data.clone()).expect("array shape already validated")
    }

    pub fn to_array(&self) -> Array {
        Array { shape: self.0.shape.clone(), data: self.data().clone() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values, for optimizers and parameter loading.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// True if both handles refer to the same graph node.
    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Copy of the value with no graph history.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.0.shape.clone(), self.to_vec(), false).expect("valid shape")
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into the `grad`
    /// field of every node that requires them; call [`Tensor::zero_grad`] on
    /// parameters between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        let index: HashMap<*const Node, usize> = order
            .iter()
            .enumerate()
            .map(|(i, t)| (Rc::as_ptr(&t.0), i))
            .collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; order.len()];
        grads[order.len() - 1] = Some(vec![1.0]);

        for i in (0..order.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &order[i];
            if let Some(op) = &node.0.op {
                let contributions = backward_op(op, node, &g);
                for (input, contrib) in op.inputs().into_iter().zip(contributions) {
                    if !input.requires_grad() {
                        continue;
                    }
                    let Some(contrib) = contrib else { continue };
                    let j = index[&Rc::as_ptr(&input.0)];
                    match &mut grads[j] {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            let mut stored = node.0.grad.borrow_mut();
            match stored.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, c)| *a += c),
                None => *stored = Some(g),
            }
        }
        Ok(())
    }
}

/// Nodes reachable from `root` that require grad, inputs before consumers.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen: HashMap<*const Node, ()> = HashMap::new();
    // Iterative DFS: (node, inputs expanded?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        let key = Rc::as_ptr(&t.0);
        if expanded {
            order.push(t);
            continue;
        }
        if seen.contains_key(&key) {
            continue;
        }
        seen.insert(key, ());
        stack.push((t.clone(), true));
        if let Some(op) = &t.0.op {
            for input in op.inputs() {
                if input.requires_grad() && !seen.contains_key(&Rc::as_ptr(&input.0)) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

/// Sum `g` (shaped like the big operand) down to the trailing-suffix shape.
fn reduce_to_suffix(g: &[f64], small_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; small_len];
    for chunk in g.chunks(small_len) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn backward_op(op: &Op, out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    match op {
        Op::Add(a, b) => {
            let gb = if b.requires_grad() {
                Some(reduce_to_suffix(g, b.numel()))
            } else {
                None
            };
            vec![a.requires_grad().then(|| g.to_vec()), gb]
        }
        Op::Mul(a, b) => {
            let ad = a.data();
            let bd = b.data();
            let nb = bd.len();
            let ga = a.requires_grad().then(|| {
                g.iter()
                    .enumerate()
                    .map(|(i, gi)| gi * bd[i % nb])
                    .collect::<Vec<_>>()
            });
            let gb = b.requires_grad().then(|| {
                let full: Vec<f64> = g.iter().zip(ad.iter()).map(|(gi, ai)| gi * ai).collect();
                reduce_to_suffix(&full, nb)
            });
            vec![ga, gb]
        }
        Op::Scale(_, c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Op::Relu(a) => {
            let ad = a.data();
            vec![Some(
                g.iter()
                    .zip(ad.iter())
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect(),
            )]
        }
        Op::MulConst(_, m) => vec![Some(g.iter().zip(m).map(|(gi, mi)| gi * mi).collect())],
        Op::MatMul(a, b) => matmul_backward(a, b, g),
        Op::Permute(_, axes) => {
            let inv = inverse_perm(axes);
            vec![Some(permute_data(g, out.shape(), &inv))]
        }
        Op::Reshape(_) => vec![Some(g.to_vec())],
        Op::Softmax(_) => {
            let y = out.data();
            let n = *out.shape().last().unwrap();
            let mut gx = vec![0.0; g.len()];
            for ((yr, gr), dst) in y.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for k in 0..n {
                    dst[k] = yr[k] * (gr[k] - dot);
                }
            }
            vec![Some(gx)]
        }
        Op::LayerNorm { x: _, gamma, beta: _, xhat, inv_std } => {
            let c = gamma.numel();
            let gam = gamma.data();
            let mut gx = vec![0.0; g.len()];
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for (row, ((gr, xr), dst)) in g
                .chunks(c)
                .zip(xhat.chunks(c))
                .zip(gx.chunks_mut(c))
                .enumerate()
            {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for k in 0..c {
                    let d = gr[k] * gam[k];
                    sum_d += d;
                    sum_dx += d * xr[k];
                    ggamma[k] += gr[k] * xr[k];
                    gbeta[k] += gr[k];
                }
                let cf = c as f64;
                for k in 0..c {
                    let d = gr[k] * gam[k];
                    dst[k] = inv_std[row] / cf * (cf * d - sum_d - xr[k] * sum_dx);
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }
        Op::BatchNorm { x, gamma, beta: _, xhat, inv_std, batch_stats } => {
            let (bsz, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let gam = gamma.data();
            let mut gx = vec![0.0; g.len()];
            let mut ggamma = vec![0.0; ch];
            let mut gbeta = vec![0.0; ch];
            let n = (bsz * len) as f64;
            for c in 0..ch {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for b in 0..bsz {
                    let base = (b * ch + c) * len;
                    for t in 0..len {
                        let i = base + t;
                        ggamma[c] += g[i] * xhat[i];
                        gbeta[c] += g[i];
                        let d = g[i] * gam[c];
                        sum_d += d;
                        sum_dx += d * xhat[i];
                    }
                }
                for b in 0..bsz {
                    let base = (b * ch + c) * len;
                    for t in 0..len {
                        let i = base + t;
                        let d = g[i] * gam[c];
                        gx[i] = if *batch_stats {
                            inv_std[c] / n * (n * d - sum_d - xhat[i] * sum_dx)
                        } else {
                            d * inv_std[c]
                        };
                    }
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }
        Op::Conv1d { x, w, b: _, dilation } => conv1d_backward(x, w, *dilation, g),
        Op::Sum(a) => vec![Some(vec![g[0]; a.numel()])],
        Op::Mean(a) => vec![Some(vec![g[0] / a.numel() as f64; a.numel()])],
    }
}

// ---------------------------------------------------------------------------
// elementwise

fn broadcast_pair<'a>(op: &str, a: &'a Tensor, b: &'a Tensor) -> Result<(&'a Tensor, &'a Tensor)> {
    if is_suffix(b.shape(), a.shape()) {
        Ok((a, b))
    } else if is_suffix(a.shape(), b.shape()) {
        Ok((b, a))
    } else {
        Err(TensorError::Shape {
            op: op.to_string(),
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (big, small) = broadcast_pair("add", a, b)?;
    let data = {
        let bd = big.data();
        let sd = small.data();
        let n = sd.len();
        bd.iter().enumerate().map(|(i, v)| v + sd[i % n]).collect()
    };
    Ok(Tensor::from_op(big.shape().to_vec(), data, Op::Add(big.clone(), small.clone())))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    add(a, &scale(b, -1.0))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (big, small) = broadcast_pair("mul", a, b)?;
    let data = {
        let bd = big.data();
        let sd = small.data();
        let n = sd.len();
        bd.iter().enumerate().map(|(i, v)| v * sd[i % n]).collect()
    };
    Ok(Tensor::from_op(big.shape().to_vec(), data, Op::Mul(big.clone(), small.clone())))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|v| v * c).collect();
    Tensor::from_op(a.shape().to_vec(), data, Op::Scale(a.clone(), c))
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::from_op(a.shape().to_vec(), data, Op::Relu(a.clone()))
}

/// Elementwise product with a constant same-shape factor (dropout masks).
pub fn mul_const(a: &Tensor, factor: Vec<f64>) -> Result<Tensor> {
    if factor.len() != a.numel() {
        return Err(TensorError::Contract(format!(
            "constant factor has {} values for shape {:?}",
            factor.len(),
            a.shape()
        )));
    }
    let data = a.data().iter().zip(&factor).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, Op::MulConst(a.clone(), factor)))
}

pub fn sum(a: &Tensor) -> Tensor {
    let s = a.data().iter().sum();
    Tensor::from_op(vec![1], vec![s], Op::Sum(a.clone()))
}

pub fn mean(a: &Tensor) -> Tensor {
    let s: f64 = a.data().iter().sum();
    Tensor::from_op(vec![1], vec![s / a.numel() as f64], Op::Mean(a.clone()))
}

// ---------------------------------------------------------------------------
// matmul

struct MatmulDims {
    batch: Vec<usize>,
    batches: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    p: usize,
    q: usize,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    let err = || TensorError::Shape {
        op: "matmul".into(),
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, p) = (a[a.len() - 2], a[a.len() - 1]);
    let (p2, q) = (b[b.len() - 2], b[b.len() - 1]);
    if p != p2 {
        return Err(err());
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = if ab == bb || bb.is_empty() {
        ab.to_vec()
    } else if ab.is_empty() {
        bb.to_vec()
    } else {
        return Err(err());
    };
    Ok(MatmulDims {
        batches: numel(&batch),
        batch,
        a_batched: !ab.is_empty(),
        b_batched: !bb.is_empty(),
        m,
        p,
        q,
    })
}

/// `out[m,q] += a[m,p] · b[p,q]`
fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, p: usize, q: usize) {
    for i in 0..m {
        let orow = &mut out[i * q..(i + 1) * q];
        for k in 0..p {
            let av = a[i * p + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * q..(k + 1) * q];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,p] += g[m,q] · b[p,q]ᵀ`
fn gemm_nt_acc(out: &mut [f64], g: &[f64], b: &[f64], m: usize, p: usize, q: usize) {
    for i in 0..m {
        let grow = &g[i * q..(i + 1) * q];
        for k in 0..p {
            let brow = &b[k * q..(k + 1) * q];
            out[i * p + k] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[p,q] += a[m,p]ᵀ · g[m,q]`
fn gemm_tn_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, p: usize, q: usize) {
    for i in 0..m {
        let grow = &g[i * q..(i + 1) * q];
        for k in 0..p {
            let av = a[i * p + k];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[k * q..(k + 1) * q];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Batched matrix product `[.., m, p] × [.., p, q] → [.., m, q]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; d.batches * d.m * d.q];
    {
        let ad = a.data();
        let bd = b.data();
        for n in 0..d.batches {
            let aoff = if d.a_batched { n * d.m * d.p } else { 0 };
            let boff = if d.b_batched { n * d.p * d.q } else { 0 };
            gemm_acc(
                &mut out[n * d.m * d.q..(n + 1) * d.m * d.q],
                &ad[aoff..aoff + d.m * d.p],
                &bd[boff..boff + d.p * d.q],
                d.m,
                d.p,
                d.q,
            );
        }
    }
    let mut shape = d.batch.clone();
    shape.extend([d.m, d.q]);
    Ok(Tensor::from_op(shape, out, Op::MatMul(a.clone(), b.clone())))
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let d = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
    let ad = a.data();
    let bd = b.data();
    let mut ga = a.requires_grad().then(|| vec![0.0; a.numel()]);
    let mut gb = b.requires_grad().then(|| vec![0.0; b.numel()]);
    for n in 0..d.batches {
        let aoff = if d.a_batched { n * d.m * d.p } else { 0 };
        let boff = if d.b_batched { n * d.p * d.q } else { 0 };
        let gslice = &g[n * d.m * d.q..(n + 1) * d.m * d.q];
        if let Some(ga) = ga.as_mut() {
            gemm_nt_acc(
                &mut ga[aoff..aoff + d.m * d.p],
                gslice,
                &bd[boff..boff + d.p * d.q],
                d.m,
                d.p,
                d.q,
            );
        }
        if let Some(gb) = gb.as_mut() {
            gemm_tn_acc(
                &mut gb[boff..boff + d.p * d.q],
                &ad[aoff..aoff + d.m * d.p],
                gslice,
                d.m,
                d.p,
                d.q,
            );
        }
    }
    vec![ga, gb]
}

// ---------------------------------------------------------------------------
// shape ops

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn inverse_perm(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Permute `data` laid out as `shape` so that output axis `i` is input axis `axes[i]`.
fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    loop {
        let base: usize = idx[..rank - 1]
            .iter()
            .zip(&src_strides[..rank - 1])
            .map(|(i, s)| i * s)
            .sum();
        for k in 0..inner {
            out.push(data[base + k * inner_stride]);
        }
        // increment the outer multi-index
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

pub fn permute(a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = a.shape().len();
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    if sorted != (0..rank).collect::<Vec<_>>() {
        return Err(TensorError::Contract(format!(
            "{axes:?} is not a permutation of the axes of {:?}",
            a.shape()
        )));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&i| a.shape()[i]).collect();
    let data = permute_data(&a.data(), a.shape(), axes);
    Ok(Tensor::from_op(out_shape, data, Op::Permute(a.clone(), axes.to_vec())))
}

/// Swap the last two axes.
pub fn transpose_last(a: &Tensor) -> Result<Tensor> {
    let rank = a.shape().len();
    if rank < 2 {
        return Err(TensorError::Contract(format!(
            "transpose needs rank >= 2, got {:?}",
            a.shape()
        )));
    }
    let mut axes: Vec<usize> = (0..rank).collect();
    axes.swap(rank - 2, rank - 1);
    permute(a, &axes)
}

pub fn reshape(a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    check_shape(&shape)?;
    if numel(&shape) != a.numel() {
        return Err(TensorError::Shape {
            op: "reshape".into(),
            lhs: a.shape().to_vec(),
            rhs: shape,
        });
    }
    let data = a.to_vec();
    Ok(Tensor::from_op(shape, data, Op::Reshape(a.clone())))
}

// ---------------------------------------------------------------------------
// normalization

/// Softmax over the last axis. Masked entries come out exactly zero; the mask
/// must match a trailing suffix of `x`'s shape and leave every row at least
/// one allowed entry.
pub fn masked_softmax(x: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    let n = *x.shape().last().unwrap();
    if let Some(m) = mask {
        if !is_suffix(m.shape(), x.shape()) || m.shape().last() != Some(&n) {
            return Err(TensorError::Shape {
                op: "masked_softmax".into(),
                lhs: x.shape().to_vec(),
                rhs: m.shape().to_vec(),
            });
        }
        for (row, chunk) in m.allowed().chunks(n).enumerate() {
            if !chunk.iter().any(|&a| a) {
                return Err(TensorError::InvalidMask { row });
            }
        }
    }
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let mlen = mask.map_or(0, |m| m.allowed.len());
    for (r, (src, dst)) in xd.chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let allowed = |k: usize| match mask {
            Some(m) => m.allowed[(r * n + k) % mlen],
            None => true,
        };
        let mut max = f64::NEG_INFINITY;
        for k in 0..n {
            if allowed(k) && src[k] > max {
                max = src[k];
            }
        }
        let mut total = 0.0;
        for k in 0..n {
            if allowed(k) {
                let e = (src[k] - max).exp();
                dst[k] = e;
                total += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= total;
        }
    }
    drop(xd);
    Ok(Tensor::from_op(x.shape().to_vec(), out, Op::Softmax(x.clone())))
}

/// Per-position normalization over the last axis followed by `gamma·x̂ + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let c = *x.shape().last().unwrap();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::Shape {
            op: "layer_norm".into(),
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let rows = xd.len() / c;
    let mut xhat = vec![0.0; xd.len()];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; xd.len()];
    for r in 0..rows {
        let row = &xd[r * c..(r + 1) * c];
        let mu = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for k in 0..c {
            let h = (row[k] - mu) * is;
            xhat[r * c + k] = h;
            out[r * c + k] = gd[k] * h + bd[k];
        }
    }
    drop((xd, gd, bd));
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        Op::LayerNorm {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
        },
    ))
}

/// Per-channel statistics of a `[B, C, T]` tensor over batch and time:
/// returns `(mean, biased variance)`.
pub fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (bsz, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xd = x.data();
    let n = (bsz * len) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for c in 0..ch {
        let mut s = 0.0;
        for b in 0..bsz {
            s += xd[(b * ch + c) * len..(b * ch + c + 1) * len].iter().sum::<f64>();
        }
        let mu = s / n;
        let mut v = 0.0;
        for b in 0..bsz {
            v += xd[(b * ch + c) * len..(b * ch + c + 1) * len]
                .iter()
                .map(|x| (x - mu) * (x - mu))
                .sum::<f64>();
        }
        mean[c] = mu;
        var[c] = v / n;
    }
    (mean, var)
}

/// Per-channel normalization of `[B, C, T]` with the supplied statistics.
///
/// With `batch_stats = true` the statistics must be the batch's own (as from
/// [`channel_stats`]) and gradients flow through them; otherwise they are
/// treated as constants (running statistics in eval mode).
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    batch_stats: bool,
) -> Result<Tensor> {
    if x.shape().len() != 3 {
        return Err(TensorError::Contract(format!(
            "batch_norm expects [B, C, T], got {:?}",
            x.shape()
        )));
    }
    let (bsz, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if gamma.shape() != [ch] || beta.shape() != [ch] || mean.len() != ch || var.len() != ch {
        return Err(TensorError::Shape {
            op: "batch_norm".into(),
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for b in 0..bsz {
        for c in 0..ch {
            let base = (b * ch + c) * len;
            for t in 0..len {
                let h = (xd[base + t] - mean[c]) * inv_std[c];
                xhat[base + t] = h;
                out[base + t] = gd[c] * h + bd[c];
            }
        }
    }
    drop((xd, gd, bd));
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        Op::BatchNorm {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
            batch_stats,
        },
    ))
}

// ---------------------------------------------------------------------------
// convolution

/// Dilated causal 1-D convolution with implicit left zero-padding.
///
/// `x: [B, Cin, T]`, `w: [Cout, Cin, k]`, `b: [Cout]`; tap `i` reads
/// `x[s - dilation·i]`, so tap 0 is the current step.
pub fn conv1d_causal(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize) -> Result<Tensor> {
    let err = || TensorError::Shape {
        op: "conv1d_causal".into(),
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    if x.shape().len() != 3 || w.shape().len() != 3 || dilation == 0 {
        return Err(err());
    }
    let (bsz, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, wcin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if wcin != cin || b.shape() != [cout] {
        return Err(err());
    }
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![0.0; bsz * cout * len];
    for bi in 0..bsz {
        for o in 0..cout {
            let orow = &mut out[(bi * cout + o) * len..(bi * cout + o + 1) * len];
            orow.iter_mut().for_each(|v| *v = bd[o]);
            for c in 0..cin {
                let xrow = &xd[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                for i in 0..k {
                    let wv = wd[(o * cin + c) * k + i];
                    let shift = dilation * i;
                    if shift >= len || wv == 0.0 {
                        continue;
                    }
                    for (dst, src) in orow[shift..].iter_mut().zip(xrow) {
                        *dst += wv * src;
                    }
                }
            }
        }
    }
    drop((xd, wd, bd));
    Ok(Tensor::from_op(
        vec![bsz, cout, len],
        out,
        Op::Conv1d {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
            dilation,
        },
    ))
}

fn conv1d_backward(x: &Tensor, w: &Tensor, dilation: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (bsz, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let xd = x.data();
    let wd = w.data();
    let mut gx = x.requires_grad().then(|| vec![0.0; xd.len()]);
    let mut gw = w.requires_grad().then(|| vec![0.0; wd.len()]);
    let mut gb = vec![0.0; cout];
    for bi in 0..bsz {
        for o in 0..cout {
            let grow = &g[(bi * cout + o) * len..(bi * cout + o + 1) * len];
            gb[o] += grow.iter().sum::<f64>();
            for c in 0..cin {
                let xoff = (bi * cin + c) * len;
                for i in 0..k {
                    let shift = dilation * i;
                    if shift >= len {
                        continue;
                    }
                    let widx = (o * cin + c) * k + i;
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += grow[shift..]
                            .iter()
                            .zip(&xd[xoff..xoff + len - shift])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wv = wd[widx];
                        for (dst, gv) in gx[xoff..xoff + len - shift].iter_mut().zip(&grow[shift..]) {
                            *dst += wv * gv;
                        }
                    }
                }
            }
        }
    }
    vec![gx, gw, Some(gb)]
}

// ---------------------------------------------------------------------------
// gradient checking

/// Central-difference estimate of `∇f(x)` for a scalar-valued `f`.
///
/// `x` is perturbed in place (and restored), so `f` must read its current
/// values through the graph rather than capturing a copy.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn() -> Result<Tensor>,
{
    let n = x.numel();
    let mut grad = vec![0.0; n];
    for (i, gi) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let plus = f()?.item();
        x.data_mut()[i] = orig - h;
        let minus = f()?.item();
        x.data_mut()[i] = orig;
        *gi = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
