//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in exact reverse insertion order and sums the gradient
//! contributions of every use of a node.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Scalar, Tensor};
use crate::error::{bail, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Buf<'a, T> {
    Owned(Vec<T>),
    Borrowed(&'a [T]),
    Shared(Arc<[T]>),
}

impl<T> Deref for Buf<'_, T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        match self {
            Buf::Owned(v) => v,
            Buf::Borrowed(s) => s,
            Buf::Shared(a) => a,
        }
    }
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Exp(usize),
    Sqrt(usize),
    Abs(usize),
    Square(usize),
    Pow(usize, T),
    Gelu(usize),
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<T>, rstd: Vec<T> },
    Dropout { x: usize, mask: Vec<T> },
    Sum(usize),
    Mean(usize),
    Cols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    StackRows(Vec<(usize, usize)>),
    Reshape(usize),
}

struct Node<'a, T> {
    shape: Vec<usize>,
    value: Buf<'a, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-threaded computation tape.
///
/// Parameters and large constants are borrowed (or shared), never copied.
pub struct Graph<'a, T> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rank2(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Dimension(format!("{what} expects a matrix, got shape {shape:?}"))),
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation
    let c = T::lit(0.797_884_560_802_865_4);
    let k = T::lit(0.044_715);
    let half = T::lit(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x);
    (y, dy)
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Buf<'a, T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- leaves ---------------------------------------------------------

    /// Owned leaf. `requires_grad` makes it a differentiation target.
    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Buf::Owned(t.into_data()), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.input(t, false)
    }

    pub fn constant_slice(&mut self, data: &'a [T], shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            bail!(Dimension, "shape {:?} does not fit {} values", shape, data.len());
        }
        Ok(self.push(shape.to_vec(), Buf::Borrowed(data), Op::Leaf, false))
    }

    pub fn shared(&mut self, data: Arc<[T]>, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            bail!(Dimension, "shape {:?} does not fit {} values", shape, data.len());
        }
        Ok(self.push(shape.to_vec(), Buf::Shared(data), Op::Leaf, false))
    }

    /// Borrowed learnable array; its gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, t: &'a Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), Buf::Borrowed(t.data()), Op::Param(slot), true)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2(self.shape(a), "matmul")?;
        let (k2, n) = rank2(self.shape(b), "matmul")?;
        if k != k2 {
            bail!(Dimension, "matmul inner dimensions differ: {}x{} · {}x{}", m, k, k2, n);
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(vec![m, n], Buf::Owned(out), Op::MatMul(a.0, b.0), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2(self.shape(a), "matmul_nt")?;
        let (n, k2) = rank2(self.shape(b), "matmul_nt")?;
        if k != k2 {
            bail!(Dimension, "matmul_nt inner dimensions differ: {}x{} · ({}x{})ᵀ", m, k, n, k2);
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(vec![m, n], Buf::Owned(out), Op::MatMulNT(a.0, b.0), rg))
    }

    /// `x · wᵀ + b` with `w` stored as `[out × in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, din) = rank2(self.shape(x), "linear")?;
        let (dout, din2) = rank2(self.shape(w), "linear")?;
        if din != din2 {
            bail!(Dimension, "linear: input width {} vs weight {}x{}", din, dout, din2);
        }
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                bail!(Dimension, "linear: bias shape {:?}, expected [{}]", self.shape(b), dout);
            }
            let bv = self.value(b);
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        gemm_nt(self.value(x), self.value(w), &mut out, n, din, dout);
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let rg = self.rg(&ids);
        Ok(self.push(vec![n, dout], Buf::Owned(out), Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0) }, rg))
    }

    // ---- element-wise ---------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            bail!(Dimension, "{}: shapes {:?} and {:?} differ", what, self.shape(a), self.shape(b));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(self.shape(a).to_vec(), Buf::Owned(out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out: Vec<T> = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a.0]);
        self.push(self.shape(a).to_vec(), Buf::Owned(out), op, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn powf(&mut self, a: Var, p: T) -> Var {
        self.unary(a, |x| x.powf(p), Op::Pow(a.0, p))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |x| gelu_parts(x).0, Op::Gelu(a.0))
    }

    // ---- normalisation --------------------------------------------------

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            bail!(Dimension, "softmax axis {} out of range for shape {:?}", axis, shape);
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(xv[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (xv[at(j)] - mx).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(shape, Buf::Owned(out), Op::Softmax { x: x.0, outer, len, inner }, rg))
    }

    /// Layer normalisation over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Dimension("layer_norm of a scalar".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            bail!(
                Dimension,
                "layer_norm: gain {:?} / bias {:?} must be [{}]",
                self.shape(gain),
                self.shape(bias),
                d
            );
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let rows = xv.len() / d;
        let inv_d = T::one() / T::lit(d as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let rg = self.rg(&[x.0, gain.0, bias.0]);
        Ok(self.push(shape, Buf::Owned(out), Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, rstd }, rg))
    }

    /// Inverted dropout. `rng = None` (inference) or `rate == 0` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            bail!(Parameter, "dropout rate {} outside [0, 1)", rate);
        }
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => return Ok(x),
        };
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.rg(&[x.0]);
        Ok(self.push(self.shape(x).to_vec(), Buf::Owned(out), Op::Dropout { x: x.0, mask }, rg))
    }

    // ---- reductions and reshaping ---------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum::<T>();
        let rg = self.rg(&[a.0]);
        self.push(vec![1], Buf::Owned(vec![s]), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::lit(v.len() as f64);
        let rg = self.rg(&[a.0]);
        self.push(vec![1], Buf::Owned(vec![s]), Op::Mean(a.0), rg)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = rank2(self.shape(x), "cols")?;
        if start + len > c {
            bail!(Dimension, "cols {}..{} out of range for width {}", start, start + len, c);
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(vec![r, len], Buf::Owned(out), Op::Cols { x: x.0, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Dimension("concat_cols of nothing".into()))?;
        let (r, _) = rank2(self.shape(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = rank2(self.shape(p), "concat_cols")?;
            if pr != r {
                bail!(Dimension, "concat_cols: row counts {} and {} differ", r, pr);
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(vec![r, total], Buf::Owned(out), Op::ConcatCols(ids), rg))
    }

    /// Builds a matrix whose `i`-th row is row `rows[i].1` of node `rows[i].0`.
    /// Vectors count as single-row matrices.
    pub fn stack_rows(&mut self, rows: &[(Var, usize)]) -> Result<Var> {
        let width_of = |g: &Self, v: Var| -> Result<(usize, usize)> {
            match g.shape(v) {
                [w] => Ok((1, *w)),
                [r, w] => Ok((*r, *w)),
                s => Err(Error::Dimension(format!("stack_rows: unsupported shape {s:?}"))),
            }
        };
        let (_, w) = match rows.first() {
            Some(&(v, _)) => width_of(self, v)?,
            None => bail!(Dimension, "stack_rows of nothing"),
        };
        let mut out = Vec::with_capacity(rows.len() * w);
        for &(v, r) in rows {
            let (nr, nw) = width_of(self, v)?;
            if nw != w || r >= nr {
                bail!(Dimension, "stack_rows: row {} of {:?} incompatible with width {}", r, self.shape(v), w);
            }
            out.extend_from_slice(&self.value(v)[r * w..(r + 1) * w]);
        }
        let ids: Vec<(usize, usize)> = rows.iter().map(|&(v, r)| (v.0, r)).collect();
        let rg = rows.iter().any(|&(v, _)| self.requires_grad(v));
        Ok(self.push(vec![rows.len(), w], Buf::Owned(out), Op::StackRows(ids), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            bail!(Dimension, "cannot reshape {:?} into {:?}", self.shape(a), shape);
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(shape.to_vec(), Buf::Owned(out), Op::Reshape(a.0), rg))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            bail!(Dimension, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        }
        if !lv[0].is_finite() {
            bail!(NonFinite, "loss is {:?}", lv[0]);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.propagate(node, g, lo);
        }
        Ok(Gradients { grads, params: self.param_nodes() })
    }

    fn param_nodes(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(slot) => Some((slot, i)),
                _ => None,
            })
            .collect()
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], id: usize) -> Option<&'g mut [T]> {
        if !self.nodes[id].requires_grad {
            return None;
        }
        let n = self.nodes[id].value.len();
        Some(grads[id].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    fn propagate(&self, node: &Node<'a, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |id: usize| -> &[T] { &self.nodes[id].value };
        let shp = |id: usize| -> &[usize] { &self.nodes[id].shape };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nt(g, val(*b), ga, m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(val(*a), g, gb, k, m, n);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[0];
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nn(g, val(*b), ga, m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(g, val(*a), gb, n, m, k);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (shp(*x)[0], shp(*x)[1]);
                let dout = shp(*w)[0];
                if let Some(gx) = self.slot(grads, *x) {
                    gemm_nn(g, val(*w), gx, n, dout, din);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    gemm_tn(g, val(*x), gw, dout, n, din);
                }
                if let Some(gb) = b.and_then(|b| self.slot(grads, b)) {
                    for row in g.chunks_exact(dout) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if let Some(ga) = self.slot(grads, id) {
                        ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, &v)| *d -= v);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &v), &o) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *d += v * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, &v), &o) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *d += v * o;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *s);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &v), &y) in ga.iter_mut().zip(g).zip(&*node.value) {
                        *d += v * y;
                    }
                }
            }
            Op::Sqrt(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let two = T::lit(2.0);
                    for ((d, &v), &y) in ga.iter_mut().zip(g).zip(&*node.value) {
                        *d += v / (two * y);
                    }
                }
            }
            Op::Abs(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &v), &x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        if x > T::zero() {
                            *d += v;
                        } else if x < T::zero() {
                            *d -= v;
                        }
                    }
                }
            }
            Op::Square(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let two = T::lit(2.0);
                    for ((d, &v), &x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *d += two * x * v;
                    }
                }
            }
            Op::Pow(a, p) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let pm1 = *p - T::one();
                    for ((d, &v), &x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *d += v * *p * x.powf(pm1);
                    }
                }
            }
            Op::Gelu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &v), &x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *d += v * gelu_parts(x).1;
                    }
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let y = &*node.value;
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dotp = (0..*len).map(|j| g[at(j)] * y[at(j)]).sum::<T>();
                            for j in 0..*len {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dotp);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = shp(*gain)[0];
                let rows = rstd.len();
                if let Some(gg) = self.slot(grads, *gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks_exact(d) {
                        gb.iter_mut().zip(row).for_each(|(acc, &v)| *acc += v);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let gain_v = val(*gain);
                    let inv_d = T::one() / T::lit(d as f64);
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gain_v[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gain_v[j];
                            gx[r * d + j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, &v), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *d += v * m;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let s = g[0] / T::lit(ga.len() as f64);
                    ga.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Cols { x, start } => {
                let c = shp(*x)[1];
                let len = node.shape[1];
                if let Some(gx) = self.slot(grads, *x) {
                    for (i, row) in g.chunks_exact(len).enumerate() {
                        let dst = &mut gx[i * c + start..i * c + start + len];
                        dst.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::ConcatCols(ids) => {
                let total = node.shape[1];
                let mut off = 0;
                for &id in ids {
                    let w = shp(id)[1];
                    if let Some(gp) = self.slot(grads, id) {
                        for (i, dst) in gp.chunks_exact_mut(w).enumerate() {
                            let src = &g[i * total + off..i * total + off + w];
                            dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    }
                    off += w;
                }
            }
            Op::StackRows(rows) => {
                let w = node.shape[1];
                for (i, &(id, r)) in rows.iter().enumerate() {
                    if let Some(gp) = self.slot(grads, id) {
                        let dst = &mut gp[r * w..(r + 1) * w];
                        dst.iter_mut().zip(&g[i * w..(i + 1) * w]).for_each(|(d, &v)| *d += v);
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. a node, `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into `acc[slot]`. Slots the loss never
    /// touched are left alone.
    pub fn accumulate_params(&self, acc: &mut [Vec<T>]) {
        for &(slot, node) in &self.params {
            if let (Some(g), Some(dst)) = (self.grads[node].as_deref(), acc.get_mut(slot)) {
                dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::vec::Vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of `build` w.r.t. each input.
    fn check_grads(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) {
        let h = 1e-3;
        let eval = |ins: &[Tensor<f64>]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|x| g.input(x.clone(), true)).collect();
            let l = build(&mut g, &vars);
            g.scalar(l)
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone(), true)).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss).unwrap();
        for (k, var) in vars.iter().enumerate() {
            let analytic = grads.wrt(*var).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
            for i in 0..inputs[k].len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-2);
                assert!(err < 1e-4, "input {k}[{i}]: analytic {} numeric {numeric}", analytic[i]);
            }
        }
    }

    /// Contracts a node against fixed random weights so every output
    /// element influences the scalar.
    fn project(g: &mut Graph<'_, f64>, v: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::from_fn(g.shape(v), |_| rng.random_range(-1.0..1.0));
        let w = g.constant(w);
        let p = g.mul(v, w).unwrap();
        g.sum(p)
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[3.0, 4.0]);
        let a = g.constant(t(&[1, 1], &[2.0]));
        let b = g.constant(t(&[1, 1], &[5.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[10.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut g: Graph<'_, f64> = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ins = vec![random(&mut rng, &[4, 3]), random(&mut rng, &[3, 2])];
        check_grads(ins, |g, v| {
            let c = g.matmul(v[0], v[1]).unwrap();
            project(g, c, 9)
        });
    }

    #[test]
    fn matmul_nt_and_linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ins = vec![random(&mut rng, &[3, 4]), random(&mut rng, &[5, 4]), random(&mut rng, &[5])];
        check_grads(ins.clone(), |g, v| {
            let c = g.matmul_nt(v[0], v[1]).unwrap();
            project(g, c, 3)
        });
        check_grads(ins, |g, v| {
            let c = g.linear(v[0], v[1], Some(v[2])).unwrap();
            project(g, c, 4)
        });
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        for &v in g.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[2], &[1000.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        assert!((g.value(y)[0] - 1.0).abs() < 1e-12);
        assert!(g.value(y)[1].abs() < 1e-12);

        let x = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.softmax(x, 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (k, &v) in g.value(y).iter().enumerate() {
            assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_over_each_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[2, 3, 4]);
        for axis in 0..3 {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let y = g.softmax(xv, axis).unwrap();
            let shape = [2usize, 3, 4];
            let strides = [12usize, 4, 1];
            for flat in 0..24 {
                let idx = [flat / 12, (flat / 4) % 3, flat % 4];
                if idx[axis] != 0 {
                    continue;
                }
                let s: f64 = (0..shape[axis]).map(|j| g.value(y)[flat + j * strides[axis]]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            check_grads(std::vec![x.clone()], |g, v| {
                let y = g.softmax(v[0], axis).unwrap();
                project(g, y, 5)
            });
        }
        let mut g = Graph::new();
        let xv = g.constant(x);
        assert!(g.softmax(xv, 3).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::new();
        let ones = g.constant(Tensor::filled(&[4], 1.0));
        let zeros = g.constant(Tensor::zeros(&[4]));
        let x = g.constant(t(&[1, 4], &[5.0; 4]));
        let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert_eq!(g.value(y), &[0.0; 4]);

        let ones = g.constant(Tensor::filled(&[2], 1.0));
        let zeros = g.constant(Tensor::zeros(&[2]));
        let x = g.constant(t(&[1, 2], &[1.0, -1.0]));
        let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert!((g.value(y)[0] - 1.0).abs() < 1e-5 && (g.value(y)[1] + 1.0).abs() < 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = g.constant(Tensor::from_fn(&[1, 64], |_| rng.random_range(-3.0..7.0)));
        let ones = g.constant(Tensor::filled(&[64], 1.0));
        let zeros = g.constant(Tensor::zeros(&[64]));
        let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
        let v = g.value(y);
        let mean = v.iter().sum::<f64>() / 64.0;
        let std = (v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 64.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-3);
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ins = vec![random(&mut rng, &[3, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])];
        check_grads(ins, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            project(g, y, 6)
        });
    }

    #[test]
    fn elementwise_and_structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3, 4]);
        check_grads(vec![a.clone(), b.clone()], |g, v| {
            let s = g.sub(v[0], v[1]).unwrap();
            let q = g.square(s);
            let e = g.exp(v[0]);
            let m = g.mul(q, e).unwrap();
            let ab = g.abs(v[1]);
            let r = g.add_scalar(ab, 0.5);
            let r = g.sqrt(r);
            let p = g.powf(r, 1.5);
            let t = g.add(m, p).unwrap();
            let t = g.gelu(t);
            let t = g.scale(t, -0.7);
            let c = g.cols(t, 1, 2).unwrap();
            let d = g.cols(v[1], 0, 3).unwrap();
            let cat = g.concat_cols(&[c, d]).unwrap();
            let st = g.stack_rows(&[(cat, 2), (cat, 0), (cat, 2)]).unwrap();
            let rs = g.reshape(st, &[15]).unwrap();
            let mean = g.mean(rs);
            let s2 = project(g, rs, 7);
            g.add(mean, s2).unwrap()
        });
    }

    #[test]
    fn gradient_accumulates_over_repeated_use() {
        // f(x) = sum(x ⊙ x) + sum(x) uses x three times.
        let x = t(&[3], &[0.5, -1.0, 2.0]);
        let mut g = Graph::new();
        let v = g.input(x.clone(), true);
        let sq = g.mul(v, v).unwrap();
        let a = g.sum(sq);
        let b = g.sum(v);
        let l = g.add(a, b).unwrap();
        let grads = g.backward(l).unwrap();
        // duplicated-input oracle: treat the two factors as separate inputs
        let mut g2 = Graph::new();
        let v1 = g2.input(x.clone(), true);
        let v2 = g2.input(x.clone(), true);
        let v3 = g2.input(x.clone(), true);
        let sq = g2.mul(v1, v2).unwrap();
        let a = g2.sum(sq);
        let b = g2.sum(v3);
        let l2 = g2.add(a, b).unwrap();
        let gr2 = g2.backward(l2).unwrap();
        for i in 0..3 {
            let sum = gr2.wrt(v1).unwrap()[i] + gr2.wrt(v2).unwrap()[i] + gr2.wrt(v3).unwrap()[i];
            assert_eq!(grads.wrt(v).unwrap()[i], sum);
            assert_eq!(sum, 2.0 * x.data()[i] + 1.0);
        }
    }

    #[test]
    fn params_report_under_their_slot() {
        let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let mut g = Graph::new();
        let p = g.param(1, &w);
        let x = g.constant(t(&[1, 2], &[1.0, 1.0]));
        let y = g.linear(x, p, None).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        let mut acc = vec![vec![0.0; 1], vec![0.0; 4]];
        grads.accumulate_params(&mut acc);
        assert_eq!(acc[1], vec![1.0; 4]);
        assert_eq!(acc[0], vec![0.0]);
        // constants never receive gradients
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g: Graph<'_, f64> = Graph::new();
        let x = g.constant(Tensor::filled(&[100_000], 1.0));
        assert_eq!(g.dropout(x, 0.0, Some(&mut rng)).unwrap(), x);
        assert_eq!(g.dropout::<ChaCha8Rng>(x, 0.1, None).unwrap(), x);
        assert!(matches!(g.dropout(x, 1.0, Some(&mut rng)), Err(Error::Parameter(_))));
        let y = g.dropout(x, 0.1, Some(&mut rng)).unwrap();
        let v = g.value(y);
        let zeros = v.iter().filter(|&&a| a == 0.0).count() as f64 / v.len() as f64;
        assert!((0.09..=0.11).contains(&zeros), "zero fraction {zeros}");
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let mut g: Graph<'_, f64> = Graph::new();
        let x = g.input(t(&[1], &[-1.0]), true);
        let y = g.sqrt(x);
        assert!(matches!(g.backward(y), Err(Error::NonFinite(_))));
    }
}
