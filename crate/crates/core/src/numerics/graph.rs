//! Reverse-mode tape over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node that requires one.
//! Shape errors inside the tape are programming errors and panic.

use std::sync::Arc;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::sample::taps;
use super::tensor::{FeatureMapSequence, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Marker for "no source element" in gather indices; the output is zero.
pub const GATHER_ZERO: u32 = u32::MAX;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulNt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow { a: Var, bias: Var },
    Silu(Var),
    Gelu(Var),
    Softmax { a: Var, n: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, n: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather { a: Var, idx: Arc<[u32]> },
    Concat(Vec<Var>),
    ConcatCols { parts: Vec<(Var, usize)>, rows: usize },
    SumGroups { a: Var, group: usize, cols: usize },
    Bilinear { map: Var, coords: Var, frames: Arc<[u32]>, h: usize, w: usize, c: usize },
    BilinearConst { maps: Arc<[Arc<FeatureMapSequence>]>, coords: Var, frames: Arc<[(u32, u32)]> },
    MeanSquare(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Arc<[u32]>, mask: Arc<[bool]>, probs: Vec<f64>, count: usize },
    Detach,
    StraightThrough { input: Var },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the differentiated scalar with respect to `v`, if any
    /// gradient reached it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::wrt`] but returns zeros for unreached nodes.
    pub fn wrt_or_zero(&self, g: &Graph, v: Var) -> Vec<f64> {
        self.wrt(v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; g.value(v).len()])
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `c = a · b (+ c if accumulate)` for row-major `c` of shape `m×n`, with
/// arbitrary strides on `a` (m×k) and `b` (k×n).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the caller guarantees every strided access stays within the
    // slices (checked by the shape assertions of the matmul ops).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul_values(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, k, 1, b, n, 1, &mut out, false);
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// In-place softmax of consecutive groups of `n`, honouring an optional mask
/// (masked entries become exactly zero).
pub(crate) fn softmax_groups(values: &mut [f64], n: usize, mask: Option<&[bool]>) {
    for (gi, row) in values.chunks_mut(n).enumerate() {
        let m = mask.map(|m| &m[gi * n..(gi + 1) * n]);
        let allowed = |i: usize| m.is_none_or(|m| m[i]);
        let max = row
            .iter()
            .enumerate()
            .filter(|(i, _)| allowed(*i))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (i, v) in row.iter_mut().enumerate() {
            if allowed(i) {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that gradients flow into.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf bound to a stored parameter. Frozen parameters are constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let entry = store.entry(id);
        let v = self.push(entry.value.clone(), Op::Leaf, entry.trainable);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul needs 2-d operands");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        assert_eq!(k, sb[0], "matmul inner dimensions differ: {sa:?} x {sb:?}");
        let out = matmul_values(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        self.push(Tensor::from_vec(&[m, n], out), Op::MatMul { a, b, m, k, n }, rg)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul_nt needs 2-d operands");
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        assert_eq!(k, sb[1], "matmul_nt inner dimensions differ: {sa:?} x {sb:?}ᵀ");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), k, 1, self.value(b).data(), 1, k, &mut out, false);
        let rg = self.requires(a) || self.requires(b);
        self.push(Tensor::from_vec(&[m, n], out), Op::MatMulNt { a, b, m, k, n }, rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise operands differ in shape");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::from_vec(self.shape(a), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map_unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        let t = Tensor::from_vec(self.shape(a), data);
        let rg = self.requires(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map_unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map_unary(a, silu, Op::Silu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map_unary(a, gelu, Op::Gelu(a))
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let n = self.value(a).cols();
        assert_eq!(self.value(bias).len(), n, "bias length must equal the row width");
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        }
        let rg = self.requires(a) || self.requires(bias);
        self.push(t, Op::AddRow { a, bias }, rg)
    }

    /// Softmax over consecutive groups of `n` values. Entries whose mask is
    /// `false` get probability zero; every group needs at least one allowed
    /// entry.
    pub fn softmax(&mut self, a: Var, n: usize, mask: Option<Arc<[bool]>>) -> Var {
        let mut t = self.value(a).clone();
        assert_eq!(t.len() % n, 0, "softmax group size must divide the length");
        if let Some(m) = &mask {
            assert_eq!(m.len(), t.len(), "softmax mask length mismatch");
        }
        softmax_groups(t.data_mut(), n, mask.as_deref());
        let rg = self.requires(a);
        self.push(t, Op::Softmax { a, n }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let n = self.value(x).cols();
        assert_eq!(self.value(gamma).len(), n);
        assert_eq!(self.value(beta).len(), n);
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let xv = self.value(x);
        let rows = xv.len() / n;
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[r] = rs;
            for i in 0..n {
                let h = (row[i] - mean) * rs;
                xhat[r * n + i] = h;
                out[r * n + i] = h * g[i] + b[i];
            }
        }
        let t = Tensor::from_vec(xv.shape(), out);
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(t, Op::LayerNorm { x, gamma, beta, n, xhat, rstd }, rg)
    }

    /// `out[i] = a[idx[i]]` (or zero for [`GATHER_ZERO`]), reshaped to `shape`.
    pub fn gather(&mut self, a: Var, idx: Arc<[u32]>, shape: &[usize]) -> Var {
        let n: usize = shape.iter().product();
        assert_eq!(n, idx.len(), "gather index length must match output shape");
        let src = self.value(a).data();
        let data = idx
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i as usize] })
            .collect();
        let rg = self.requires(a);
        self.push(Tensor::from_vec(shape, data), Op::Gather { a, idx }, rg)
    }

    /// Row gather: picks whole rows of a 2-d tensor.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let cols = self.value(a).cols();
        let idx: Vec<u32> = rows
            .iter()
            .flat_map(|&r| (0..cols).map(move |c| (r * cols + c) as u32))
            .collect();
        self.gather(a, idx.into(), &[rows.len(), cols])
    }

    /// Column slice `[start, start+len)` of a 2-d tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
        assert!(start + len <= cols);
        let idx: Vec<u32> = (0..rows)
            .flat_map(|r| (start..start + len).map(move |c| (r * cols + c) as u32))
            .collect();
        self.gather(a, idx.into(), &[rows, len])
    }

    /// Concatenates the flat contents of `parts` and gives the result `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: &[usize]) -> Var {
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(Tensor::from_vec(shape, data), Op::Concat(parts.to_vec()), rg)
    }

    /// Side-by-side concatenation of 2-d tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let v = self.value(*p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|p| self.requires(*p));
        let parts = parts.iter().copied().zip(widths).collect();
        self.push(
            Tensor::from_vec(&[rows, total], data),
            Op::ConcatCols { parts, rows },
            rg,
        )
    }

    /// Sums consecutive groups of `group` rows: `[R×C] -> [R/group × C]`.
    pub fn sum_groups(&mut self, a: Var, group: usize) -> Var {
        let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
        assert_eq!(rows % group, 0, "group size must divide the row count");
        let src = self.value(a).data();
        let mut out = vec![0.0; rows / group * cols];
        for r in 0..rows {
            let o = r / group;
            for c in 0..cols {
                out[o * cols + c] += src[r * cols + c];
            }
        }
        let rg = self.requires(a);
        self.push(
            Tensor::from_vec(&[rows / group, cols], out),
            Op::SumGroups { a, group, cols },
            rg,
        )
    }

    /// Bilinear sampling from a differentiable map `[frames, h, w, c]`.
    /// `coords` is `[P, 2]` holding `(x, y)`; `frames[p]` selects the frame.
    pub fn bilinear(&mut self, map: Var, coords: Var, frames: Arc<[u32]>) -> Var {
        let ms = self.shape(map).to_vec();
        assert_eq!(ms.len(), 4, "map must be [frames, h, w, c]");
        let (h, w, c) = (ms[1], ms[2], ms[3]);
        let pts = self.value(coords).data();
        assert_eq!(pts.len(), frames.len() * 2);
        let mv = self.value(map).data();
        let mut out = vec![0.0; frames.len() * c];
        for (p, &f) in frames.iter().enumerate() {
            assert!((f as usize) < ms[0]);
            let t = taps(h, w, pts[2 * p], pts[2 * p + 1]);
            let base = f as usize * h * w * c;
            for (cell, wt) in t.cells.iter().zip(t.weights) {
                let src = &mv[base + cell * c..base + (cell + 1) * c];
                for (o, v) in out[p * c..(p + 1) * c].iter_mut().zip(src) {
                    *o += wt * v;
                }
            }
        }
        let rg = self.requires(map) || self.requires(coords);
        let n = frames.len();
        self.push(
            Tensor::from_vec(&[n, c], out),
            Op::Bilinear { map, coords, frames, h, w, c },
            rg,
        )
    }

    /// Bilinear sampling from constant feature maps. `frames[p]` is
    /// `(sequence, frame)` into `maps`. Only `coords` receives gradient.
    pub fn bilinear_const(
        &mut self,
        maps: Arc<[Arc<FeatureMapSequence>]>,
        coords: Var,
        frames: Arc<[(u32, u32)]>,
    ) -> Var {
        let c = maps[0].channels();
        let pts = self.value(coords).data();
        assert_eq!(pts.len(), frames.len() * 2);
        let mut out = vec![0.0; frames.len() * c];
        for (p, &(s, f)) in frames.iter().enumerate() {
            let m = &maps[s as usize];
            assert_eq!(m.channels(), c, "all maps must share the channel count");
            let grid = m.frame(f as usize);
            let t = taps(m.height(), m.width(), pts[2 * p], pts[2 * p + 1]);
            for (cell, wt) in t.cells.iter().zip(t.weights) {
                let src = &grid[cell * c..(cell + 1) * c];
                for (o, v) in out[p * c..(p + 1) * c].iter_mut().zip(src) {
                    *o += wt * f64::from(*v);
                }
            }
        }
        let rg = self.requires(coords);
        let n = frames.len();
        self.push(
            Tensor::from_vec(&[n, c], out),
            Op::BilinearConst { maps, coords, frames },
            rg,
        )
    }

    /// Mean of squared entries (a scalar).
    pub fn mean_square(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64;
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), Op::MeanSquare(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean cross-entropy of `logits [L×V]` against `targets` over the
    /// positions where `mask` is true. Returns `None` when the mask is empty.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Arc<[u32]>,
        mask: Arc<[bool]>,
    ) -> Option<Var> {
        let v = self.value(logits).cols();
        let l = self.value(logits).rows();
        assert_eq!(targets.len(), l, "one target per logit row");
        assert_eq!(mask.len(), l, "one mask entry per logit row");
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return None;
        }
        let mut probs = self.value(logits).data().to_vec();
        softmax_groups(&mut probs, v, None);
        let mut loss = 0.0;
        for (i, (&t, &m)) in targets.iter().zip(mask.iter()).enumerate() {
            if m {
                assert!((t as usize) < v, "target id out of range");
                loss -= probs[i * v + t as usize].max(f64::MIN_POSITIVE).ln();
            }
        }
        loss /= count as f64;
        let rg = self.requires(logits);
        Some(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets, mask, probs, count },
            rg,
        ))
    }

    /// Forward identity that blocks gradient to `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.push(t, Op::Detach, false)
    }

    /// Takes the value of `replacement` but routes the incoming gradient to
    /// `input` unchanged (straight-through estimator).
    pub fn straight_through(&mut self, input: Var, replacement: Var) -> Var {
        assert_eq!(self.shape(input), self.shape(replacement));
        let t = self.value(replacement).clone();
        let rg = self.requires(input);
        self.push(t, Op::StraightThrough { input }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape).expect("invalid reshape");
        let rg = self.requires(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(go) = grads[i].take() else { continue };
            self.propagate(i, &go, &mut grads);
            grads[i] = Some(go);
        }
        Gradients { grads }
    }

    /// Adds the gradients of every parameter leaf into `out`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, out: &mut ParamGrads) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), true) = (node.param, node.requires_grad) {
                if let Some(g) = grads.wrt(Var(i)) {
                    out.accumulate(pid, g);
                }
            }
        }
    }

    fn propagate(&self, i: usize, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| gemm(m, n, k, go, n, 1, bv, 1, n, ga, true));
                let av = self.value(*a).data();
                acc(*b, &mut |gb| gemm(k, m, n, av, 1, k, go, n, 1, gb, true));
            }
            Op::MatMulNt { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| gemm(m, n, k, go, n, 1, bv, k, 1, ga, true));
                let av = self.value(*a).data();
                acc(*b, &mut |gb| gemm(n, m, k, go, 1, n, av, k, 1, gb, true));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x += y));
                acc(*b, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x += y));
                acc(*b, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| {
                    for ((x, y), z) in g.iter_mut().zip(go).zip(bv) {
                        *x += y * z;
                    }
                });
                acc(*b, &mut |g| {
                    for ((x, y), z) in g.iter_mut().zip(go).zip(av) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale(a, s) => {
                acc(*a, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x += s * y));
            }
            Op::AddRow { a, bias } => {
                acc(*a, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x += y));
                let n = self.value(*bias).len();
                acc(*bias, &mut |g| {
                    for row in go.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Silu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |g| {
                    for ((x, y), z) in g.iter_mut().zip(go).zip(av) {
                        let s = sigmoid(*z);
                        *x += y * s * (1.0 + z * (1.0 - s));
                    }
                });
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |g| {
                    for ((x, y), z) in g.iter_mut().zip(go).zip(av) {
                        *x += y * gelu_grad(*z);
                    }
                });
            }
            Op::Softmax { a, n } => {
                let y = node.value.data();
                let n = *n;
                acc(*a, &mut |g| {
                    for ((gr, yr), dr) in g.chunks_mut(n).zip(y.chunks(n)).zip(go.chunks(n)) {
                        let dot: f64 = yr.iter().zip(dr).map(|(p, q)| p * q).sum();
                        for ((x, p), q) in gr.iter_mut().zip(yr).zip(dr) {
                            *x += p * (q - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, n, xhat, rstd } => {
                let n = *n;
                let gv = self.value(*gamma).data();
                acc(*gamma, &mut |g| {
                    for (dr, hr) in go.chunks(n).zip(xhat.chunks(n)) {
                        for i in 0..n {
                            g[i] += dr[i] * hr[i];
                        }
                    }
                });
                acc(*beta, &mut |g| {
                    for dr in go.chunks(n) {
                        g.iter_mut().zip(dr).for_each(|(a, b)| *a += b);
                    }
                });
                acc(*x, &mut |g| {
                    for (r, ((gr, dr), hr)) in g
                        .chunks_mut(n)
                        .zip(go.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for i in 0..n {
                            let dh = dr[i] * gv[i];
                            m1 += dh;
                            m2 += dh * hr[i];
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for i in 0..n {
                            let dh = dr[i] * gv[i];
                            gr[i] += rstd[r] * (dh - m1 - hr[i] * m2);
                        }
                    }
                });
            }
            Op::Gather { a, idx } => {
                acc(*a, &mut |g| {
                    for (&j, y) in idx.iter().zip(go) {
                        if j != GATHER_ZERO {
                            g[j as usize] += y;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let seg = &go[offset..offset + len];
                    acc(*p, &mut |g| g.iter_mut().zip(seg).for_each(|(x, y)| *x += y));
                    offset += len;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let mut offset = 0;
                for (p, w) in parts {
                    let w = *w;
                    acc(*p, &mut |g| {
                        for r in 0..*rows {
                            let src = &go[r * total + offset..r * total + offset + w];
                            g[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::SumGroups { a, group, cols } => {
                let (group, cols) = (*group, *cols);
                acc(*a, &mut |g| {
                    for (r, row) in g.chunks_mut(cols).enumerate() {
                        let o = r / group;
                        row.iter_mut()
                            .zip(&go[o * cols..(o + 1) * cols])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Bilinear { map, coords, frames, h, w, c } => {
                let (h, w, c) = (*h, *w, *c);
                let pts = self.value(*coords).data();
                let mv = self.value(*map).data();
                acc(*map, &mut |g| {
                    for (p, &f) in frames.iter().enumerate() {
                        let t = taps(h, w, pts[2 * p], pts[2 * p + 1]);
                        let base = f as usize * h * w * c;
                        for (cell, wt) in t.cells.iter().zip(t.weights) {
                            let dst = &mut g[base + cell * c..base + (cell + 1) * c];
                            for (x, y) in dst.iter_mut().zip(&go[p * c..(p + 1) * c]) {
                                *x += wt * y;
                            }
                        }
                    }
                });
                acc(*coords, &mut |g| {
                    for (p, &f) in frames.iter().enumerate() {
                        let t = taps(h, w, pts[2 * p], pts[2 * p + 1]);
                        let base = f as usize * h * w * c;
                        let gp = &go[p * c..(p + 1) * c];
                        for k in 0..4 {
                            let src = &mv[base + t.cells[k] * c..base + (t.cells[k] + 1) * c];
                            let dot: f64 = src.iter().zip(gp).map(|(a, b)| a * b).sum();
                            g[2 * p] += t.dx[k] * dot;
                            g[2 * p + 1] += t.dy[k] * dot;
                        }
                    }
                });
            }
            Op::BilinearConst { maps, coords, frames } => {
                let pts = self.value(*coords).data();
                acc(*coords, &mut |g| {
                    for (p, &(s, f)) in frames.iter().enumerate() {
                        let m = &maps[s as usize];
                        let c = m.channels();
                        let grid = m.frame(f as usize);
                        let t = taps(m.height(), m.width(), pts[2 * p], pts[2 * p + 1]);
                        let gp = &go[p * c..(p + 1) * c];
                        for k in 0..4 {
                            let src = &grid[t.cells[k] * c..(t.cells[k] + 1) * c];
                            let dot: f64 = src.iter().zip(gp).map(|(a, b)| f64::from(*a) * b).sum();
                            g[2 * p] += t.dx[k] * dot;
                            g[2 * p + 1] += t.dy[k] * dot;
                        }
                    }
                });
            }
            Op::MeanSquare(a) => {
                let av = self.value(*a).data();
                let s = 2.0 * go[0] / av.len().max(1) as f64;
                acc(*a, &mut |g| g.iter_mut().zip(av).for_each(|(x, y)| *x += s * y));
            }
            Op::Sum(a) => {
                acc(*a, &mut |g| g.iter_mut().for_each(|x| *x += go[0]));
            }
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let v = self.value(*logits).cols();
                let s = go[0] / *count as f64;
                acc(*logits, &mut |g| {
                    for (i, (&t, &m)) in targets.iter().zip(mask.iter()).enumerate() {
                        if !m {
                            continue;
                        }
                        let row = &mut g[i * v..(i + 1) * v];
                        for (j, x) in row.iter_mut().enumerate() {
                            let onehot = if j == t as usize { 1.0 } else { 0.0 };
                            *x += s * (probs[i * v + j] - onehot);
                        }
                    }
                });
            }
            Op::StraightThrough { input } => {
                acc(*input, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x += y));
            }
            Op::Reshape(a) => {
                acc(*a, &mut |g| g.iter_mut().zip(go).for_each(|(x, y)| *x += y));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let mut g = Graph::new();
        let a = g.input(Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let b = g.input(Tensor::from_vec(&[3, 2], vec![7., 8., 9., 10., 11., 12.]));
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
        let bt = g.input(Tensor::from_vec(&[2, 3], vec![7., 9., 11., 8., 10., 12.]));
        let d = g.matmul_nt(a, bt);
        assert_eq!(g.value(d).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn stop_gradient_blocks_and_passes_value() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]));
        let s = g.stop_gradient(x);
        assert_eq!(g.value(s).data(), g.value(x).data());
        let l = g.mean_square(s);
        let grads = g.backward(l);
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[2, 2], vec![1.0, 5.0, 2.0, 3.0]));
        let mask: Arc<[bool]> = vec![true, false, true, true].into();
        let y = g.softmax(x, 2, Some(mask));
        assert_eq!(g.value(y).data()[0], 1.0);
        assert_eq!(g.value(y).data()[1], 0.0);
    }

    #[test]
    fn cross_entropy_empty_mask_is_none() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 4]));
        assert!(g
            .cross_entropy(x, vec![0, 1].into(), vec![false, false].into())
            .is_none());
        let l = g
            .cross_entropy(x, vec![0, 1].into(), vec![true, false].into())
            .unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }
}
