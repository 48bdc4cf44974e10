//! Reverse-mode differentiation over complex arrays.
//!
//! A [`Tape`] records every operation together with a closure that maps the
//! output adjoint to input adjoints. For a real loss `L` and a complex value
//! `z = x + iy` the stored adjoint is `∂L/∂x + i ∂L/∂y`, so a complex-linear map
//! `A` pulls adjoints back through `Aᴴ`. Real quantities are complex arrays with
//! zero imaginary part; real parameters read only the real part of their adjoint.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{ArrayD, Axis, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{Backend, CTensor};
use crate::error::{Error, Result};
use crate::fft;

type BackFn = Box<dyn Fn(&CTensor, &mut Sink)>;

struct Node {
    requires_grad: bool,
    keep_grad: bool,
    backward: Option<BackFn>,
}

/// Adjoint accumulator handed to backward closures.
pub struct Sink<'a> {
    grads: &'a mut [Option<CTensor>],
    req: &'a [bool],
}

impl Sink<'_> {
    fn add(&mut self, id: usize, g: CTensor) {
        if !self.req[id] {
            return;
        }
        match &mut self.grads[id] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, id: usize) -> bool {
        self.req[id]
    }
}

/// Record of operations for one loss evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    value: Rc<CTensor>,
    requires_grad: bool,
}

/// Adjoints of the tracked leaves after [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<CTensor>>,
}

impl Grads {
    /// Adjoint of `v`, or zeros when the loss does not depend on it.
    pub fn of(&self, v: &Var) -> CTensor {
        self.grads
            .get(v.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| ArrayD::zeros(v.value.raw_dim()))
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Sums `g` down to `shape` over broadcast axes.
fn sum_to_shape(g: &CTensor, shape: &[usize]) -> CTensor {
    if g.shape() == shape {
        return g.clone();
    }
    let lead = g.ndim() - shape.len();
    let mut out = g.clone();
    for _ in 0..lead {
        out = out.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

/// `y[.., j, ..] = Σ_i m[j, i] x[.., i, ..]` along `axis`.
pub(crate) fn axis_matmul(x: &CTensor, axis: usize, m: &ndarray::Array2<Complex64>) -> CTensor {
    let (rows, cols) = m.dim();
    assert_eq!(x.shape()[axis], cols, "axis_matmul: inner dimension");
    let mut shape = x.shape().to_vec();
    shape[axis] = rows;
    let mut y = ArrayD::zeros(shape);
    for j in 0..rows {
        let mut yj = y.index_axis_mut(Axis(axis), j);
        for i in 0..cols {
            let w = m[[j, i]];
            if w == c(0.0) {
                continue;
            }
            yj.zip_mut_with(&x.index_axis(Axis(axis), i), |o, v| *o += w * v);
        }
    }
    y
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Pointwise activation applied to the real part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: CTensor, requires_grad: bool, keep: bool, backward: Option<BackFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            requires_grad,
            keep_grad: keep,
            backward: if requires_grad { backward } else { None },
        });
        Var { tape: self, id, value: Rc::new(value), requires_grad }
    }

    /// Untracked input.
    pub fn constant(&self, value: CTensor) -> Var<'_> {
        self.push(value, false, false, None)
    }

    /// Tracked leaf whose adjoint is kept.
    pub fn param(&self, value: CTensor) -> Var<'_> {
        self.push(value, true, true, None)
    }

    fn op(&self, value: CTensor, parents: &[&Var], backward: BackFn) -> Var<'_> {
        let rg = parents.iter().any(|p| p.requires_grad);
        self.push(value, rg, false, Some(backward))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var) -> Result<Grads> {
        if loss.value.len() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", loss.value.shape())));
        }
        let nodes = self.nodes.borrow();
        let req: Vec<bool> = nodes.iter().map(|n| n.requires_grad).collect();
        let mut grads: Vec<Option<CTensor>> = vec![None; nodes.len()];
        if req[loss.id] {
            grads[loss.id] = Some(ArrayD::from_elem(loss.value.raw_dim(), c(1.0)));
        }
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(bw) = &nodes[i].backward {
                let (head, _) = grads.split_at_mut(i);
                let mut sink = Sink { grads: head, req: &req };
                bw(&g, &mut sink);
            }
            if nodes[i].keep_grad {
                grads[i] = Some(g);
            }
        }
        Ok(Grads { grads })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> &CTensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Real part of a single-element value.
    pub fn scalar(&self) -> f64 {
        self.value.iter().next().map(|v| v.re).unwrap_or(0.0)
    }

    pub fn add(&self, o: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.id, o.id);
        self.tape.op(&*self.value + &*o.value, &[self, o], Box::new(move |g, s| {
            s.add(a, g.clone());
            s.add(b, g.clone());
        }))
    }

    pub fn sub(&self, o: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.id, o.id);
        self.tape.op(&*self.value - &*o.value, &[self, o], Box::new(move |g, s| {
            s.add(a, g.clone());
            s.add(b, -g);
        }))
    }

    /// Elementwise product; `o` may broadcast into the shape of `self`.
    pub fn mul(&self, o: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.id, o.id);
        let (va, vb) = (self.value.clone(), o.value.clone());
        let shape_b = vb.shape().to_vec();
        self.tape.op(&*va * &*vb, &[self, o], Box::new(move |g, s| {
            if s.wants(a) {
                s.add(a, g * &vb.mapv(|v| v.conj()));
            }
            if s.wants(b) {
                let gb = g * &va.mapv(|v| v.conj());
                s.add(b, sum_to_shape(&gb, &shape_b));
            }
        }))
    }

    /// Sum with `o` broadcast into the shape of `self`.
    pub fn add_bcast(&self, o: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.id, o.id);
        let shape_b = o.value.shape().to_vec();
        self.tape.op(&*self.value + &*o.value, &[self, o], Box::new(move |g, s| {
            s.add(a, g.clone());
            if s.wants(b) {
                s.add(b, sum_to_shape(g, &shape_b));
            }
        }))
    }

    pub fn scale(&self, k: f64) -> Var<'t> {
        let a = self.id;
        self.tape.op(self.value.mapv(|v| v * k), &[self], Box::new(move |g, s| {
            s.add(a, g.mapv(|v| v * k));
        }))
    }

    pub fn mul_fixed(&self, m: &Arc<CTensor>) -> Var<'t> {
        let a = self.id;
        let m = m.clone();
        self.tape.op(&*self.value * &*m, &[self], Box::new(move |g, s| {
            s.add(a, g * &m.mapv(|v| v.conj()));
        }))
    }

    pub fn add_fixed(&self, m: &Arc<CTensor>) -> Var<'t> {
        let a = self.id;
        self.tape.op(&*self.value + &**m, &[self], Box::new(move |g, s| {
            s.add(a, g.clone());
        }))
    }

    /// Forward transform along `axes` (unnormalized).
    pub fn fft(&self, axes: &[usize]) -> Var<'t> {
        let a = self.id;
        let axes = axes.to_vec();
        let mut v = (*self.value).clone();
        fft::fft_axes(&mut v, &axes, false);
        self.tape.op(v, &[self], Box::new(move |g, s| {
            let mut h = g.clone();
            fft::fft_axes(&mut h, &axes, true);
            let n: usize = axes.iter().map(|&ax| g.shape()[ax]).product();
            h.mapv_inplace(|v| v * n as f64);
            s.add(a, h);
        }))
    }

    /// Normalized inverse transform along `axes`.
    pub fn ifft(&self, axes: &[usize]) -> Var<'t> {
        let a = self.id;
        let axes = axes.to_vec();
        let mut v = (*self.value).clone();
        fft::fft_axes(&mut v, &axes, true);
        self.tape.op(v, &[self], Box::new(move |g, s| {
            let mut h = g.clone();
            fft::fft_axes(&mut h, &axes, false);
            let n: usize = axes.iter().map(|&ax| g.shape()[ax]).product();
            h.mapv_inplace(|v| v / n as f64);
            s.add(a, h);
        }))
    }

    pub fn re(&self) -> Var<'t> {
        let a = self.id;
        self.tape.op(self.value.mapv(|v| c(v.re)), &[self], Box::new(move |g, s| {
            s.add(a, g.mapv(|v| c(v.re)));
        }))
    }

    /// Activation of the real part.
    pub fn activate(&self, act: Activation) -> Var<'t> {
        match act {
            Activation::Identity => self.re(),
            Activation::Gelu => {
                let a = self.id;
                let x = self.value.clone();
                self.tape.op(x.mapv(|v| c(gelu(v.re))), &[self], Box::new(move |g, s| {
                    let mut h = g.mapv(|v| c(v.re));
                    h.zip_mut_with(&x, |o, v| *o *= gelu_grad(v.re));
                    s.add(a, h);
                }))
            }
        }
    }

    /// `y[o, ..] = Σ_i w[o, i] x[i, ..]` with `w` of shape `[out, in]`.
    pub fn channel_matmul(&self, w: &Var<'t>) -> Var<'t> {
        let (xa, wa) = (self.id, w.id);
        let (xv, wv) = (self.value.clone(), w.value.clone());
        let w2 = (*wv).clone().into_dimensionality::<ndarray::Ix2>().expect("[out, in] weight");
        let y = axis_matmul(&xv, 0, &w2);
        self.tape.op(y, &[self, w], Box::new(move |g, s| {
            if s.wants(xa) {
                let wh = w2.t().mapv(|v| v.conj());
                s.add(xa, axis_matmul(g, 0, &wh));
            }
            if s.wants(wa) {
                let (o_n, i_n) = w2.dim();
                let mut gw = ArrayD::zeros(IxDyn(&[o_n, i_n]));
                for o in 0..o_n {
                    let go = g.index_axis(Axis(0), o);
                    for i in 0..i_n {
                        let xi = xv.index_axis(Axis(0), i);
                        gw[[o, i]] = ndarray::Zip::from(&go)
                            .and(&xi)
                            .fold(c(0.0), |acc, a, b| acc + a * b.conj());
                    }
                }
                s.add(wa, gw);
            }
        }))
    }

    /// Applies a fixed matrix `m` of shape `[rows, len]` along `axis`.
    pub fn axis_matmul_fixed(&self, axis: usize, m: &Arc<ndarray::Array2<Complex64>>) -> Var<'t> {
        let a = self.id;
        let m = m.clone();
        self.tape.op(axis_matmul(&self.value, axis, &m), &[self], Box::new(move |g, s| {
            let mh = m.t().mapv(|v| v.conj());
            s.add(a, axis_matmul(g, axis, &mh));
        }))
    }

    /// Spectral resize of the last two axes to `m` bins with scale `(m/n)²`.
    pub fn resize_spatial(&self, m: usize) -> Var<'t> {
        let a = self.id;
        let d = self.value.ndim();
        let n = self.value.shape()[d - 1];
        if n == m {
            return self.clone();
        }
        let s2 = (m as f64 / n as f64).powi(2);
        let y = crate::grid::resize_dyn(&self.value, m);
        self.tape.op(y, &[self], Box::new(move |g, s| {
            let h = fft::resize_axis_adjoint(g, d - 1, n, s2);
            s.add(a, fft::resize_axis_adjoint(&h, d - 2, n, 1.0));
        }))
    }

    /// Sub-array `x[i]` along axis 0.
    pub fn index0(&self, i: usize) -> Var<'t> {
        let a = self.id;
        let full = self.value.raw_dim();
        let y = self.value.index_axis(Axis(0), i).to_owned();
        self.tape.op(y, &[self], Box::new(move |g, s| {
            let mut h = ArrayD::zeros(full.clone());
            h.index_axis_mut(Axis(0), i).assign(g);
            s.add(a, h);
        }))
    }

    /// Stacks equally shaped values along a new axis 0.
    pub fn stack(items: &[Var<'t>]) -> Var<'t> {
        let tape = items[0].tape;
        let views: Vec<_> = items.iter().map(|v| v.value.view()).collect();
        let y = ndarray::stack(Axis(0), &views).expect("equal shapes");
        let ids: Vec<usize> = items.iter().map(|v| v.id).collect();
        let refs: Vec<&Var> = items.iter().collect();
        tape.op(y, &refs, Box::new(move |g, s| {
            for (k, &id) in ids.iter().enumerate() {
                if s.wants(id) {
                    s.add(id, g.index_axis(Axis(0), k).to_owned());
                }
            }
        }))
    }

    /// Concatenation along axis 0.
    pub fn concat0(items: &[Var<'t>]) -> Var<'t> {
        let tape = items[0].tape;
        let views: Vec<_> = items.iter().map(|v| v.value.view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("matching trailing shapes");
        let parts: Vec<(usize, usize)> = items.iter().map(|v| (v.id, v.value.shape()[0])).collect();
        let refs: Vec<&Var> = items.iter().collect();
        tape.op(y, &refs, Box::new(move |g, s| {
            let mut start = 0;
            for &(id, len) in &parts {
                if s.wants(id) {
                    s.add(id, g.slice_axis(Axis(0), ndarray::Slice::from(start..start + len)).to_owned());
                }
                start += len;
            }
        }))
    }

    /// `Σ w |x|²` as a scalar; `w` broadcasts into the shape of `self`.
    pub fn weighted_sq_sum(&self, w: &Arc<ArrayD<f64>>) -> Var<'t> {
        let a = self.id;
        let x = self.value.clone();
        let w = w.clone();
        let mut total = 0.0;
        ndarray::Zip::from(&*x)
            .and_broadcast(&*w)
            .for_each(|v, wt| total += wt * v.norm_sqr());
        self.tape.op(ArrayD::from_elem(IxDyn(&[]), c(total)), &[self], Box::new(move |g, s| {
            let gs = g.iter().next().map(|v| v.re).unwrap_or(0.0);
            let mut h = (*x).clone();
            ndarray::Zip::from(&mut h).and_broadcast(&*w).for_each(|v, wt| *v *= 2.0 * wt * gs);
            s.add(a, h);
        }))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let a = self.id;
        let shape = self.value.raw_dim();
        let total = self.value.sum();
        self.tape.op(ArrayD::from_elem(IxDyn(&[]), total), &[self], Box::new(move |g, s| {
            let gs = *g.iter().next().unwrap();
            s.add(a, ArrayD::from_elem(shape.clone(), gs));
        }))
    }

    /// Quotient of two scalars.
    pub fn div_scalar(&self, d: &Var<'t>) -> Var<'t> {
        let (a, b) = (self.id, d.id);
        let (x, y) = (self.scalar(), d.scalar());
        self.tape.op(ArrayD::from_elem(IxDyn(&[]), c(x / y)), &[self, d], Box::new(move |g, s| {
            let gs = g.iter().next().map(|v| v.re).unwrap_or(0.0);
            s.add(a, ArrayD::from_elem(IxDyn(&[]), c(gs / y)));
            s.add(b, ArrayD::from_elem(IxDyn(&[]), c(-gs * x / (y * y))));
        }))
    }

    /// Square root of a positive scalar.
    pub fn sqrt(&self) -> Var<'t> {
        let a = self.id;
        let r = self.scalar().sqrt();
        self.tape.op(ArrayD::from_elem(IxDyn(&[]), c(r)), &[self], Box::new(move |g, s| {
            let gs = g.iter().next().map(|v| v.re).unwrap_or(0.0);
            s.add(a, ArrayD::from_elem(IxDyn(&[]), c(0.5 * gs / r)));
        }))
    }

    /// Normalization over every axis except axis 1, separately for each index along axis 1,
    /// with per-channel affine `gamma`, `beta` (shape `[c]`, channels on axis 0).
    pub fn layer_norm(&self, gamma: &Var<'t>, beta: &Var<'t>, eps: f64) -> Var<'t> {
        let (xa, ga, ba) = (self.id, gamma.id, beta.id);
        let x = self.value.mapv(|v| v.re);
        let ch = x.shape()[0];
        let groups = x.shape()[1];
        let mut xhat = ArrayD::<f64>::zeros(x.raw_dim());
        let mut inv = vec![0.0; groups];
        for t in 0..groups {
            let xt = x.index_axis(Axis(1), t);
            let mean = xt.mean().expect("non-empty group");
            let var = xt.fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / xt.len() as f64;
            inv[t] = 1.0 / (var + eps).sqrt();
            xhat.index_axis_mut(Axis(1), t).zip_mut_with(&xt, |o, v| *o = (v - mean) * inv[t]);
        }
        let gv: Vec<f64> = gamma.value.iter().map(|v| v.re).collect();
        let bv: Vec<f64> = beta.value.iter().map(|v| v.re).collect();
        let mut y = ArrayD::<Complex64>::zeros(x.raw_dim());
        for k in 0..ch {
            let xk = xhat.index_axis(Axis(0), k);
            y.index_axis_mut(Axis(0), k)
                .zip_mut_with(&xk, |o, v| *o = c(gv[k] * v + bv[k]));
        }
        let xhat = Rc::new(xhat);
        self.tape.op(y, &[self, gamma, beta], Box::new(move |g, s| {
            let gr = g.mapv(|v| v.re);
            if s.wants(ga) || s.wants(ba) {
                let mut gg = ArrayD::zeros(IxDyn(&[ch]));
                let mut gb = ArrayD::zeros(IxDyn(&[ch]));
                for k in 0..ch {
                    let gk = gr.index_axis(Axis(0), k);
                    gg[k] = c((&gk * &xhat.index_axis(Axis(0), k)).sum());
                    gb[k] = c(gk.sum());
                }
                s.add(ga, gg);
                s.add(ba, gb);
            }
            if s.wants(xa) {
                let mut gx_hat = gr.clone();
                for k in 0..ch {
                    gx_hat.index_axis_mut(Axis(0), k).mapv_inplace(|v| v * gv[k]);
                }
                let mut gx = ArrayD::<f64>::zeros(gx_hat.raw_dim());
                for t in 0..groups {
                    let gt = gx_hat.index_axis(Axis(1), t);
                    let xt = xhat.index_axis(Axis(1), t);
                    let m1 = gt.mean().expect("non-empty group");
                    let m2 = (&gt * &xt).mean().expect("non-empty group");
                    let r = inv[t];
                    let mut out = gx.index_axis_mut(Axis(1), t);
                    ndarray::Zip::from(&mut out).and(&gt).and(&xt).for_each(|o, &gq, &xq| *o = (gq - m1 - xq * m2) * r);
                }
                s.add(xa, gx.mapv(c));
            }
        }))
    }
}

impl<'t> Var<'t> {
    /// Places entry `(.., i, j)` at `(.., map[i], map[j])` of an `m × m` array of zeros.
    pub fn scatter_last2(&self, map: &Arc<Vec<usize>>, m: usize) -> Var<'t> {
        let a = self.id;
        let x = &*self.value;
        let d = x.ndim();
        let k = x.shape()[d - 1];
        assert_eq!(map.len(), k, "scatter map length");
        let lead: usize = x.shape()[..d - 2].iter().product();
        let mut shape = x.shape().to_vec();
        shape[d - 2] = m;
        shape[d - 1] = m;
        let xs = x.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let mut y = vec![c(0.0); lead * m * m];
        for l in 0..lead {
            for i in 0..k {
                for j in 0..k {
                    y[(l * m + map[i]) * m + map[j]] = src[(l * k + i) * k + j];
                }
            }
        }
        let y = ArrayD::from_shape_vec(IxDyn(&shape), y).expect("shape");
        let in_shape = x.shape().to_vec();
        let map = map.clone();
        self.tape.op(y, &[self], Box::new(move |g, s| {
            let gs = g.as_standard_layout();
            let gv = gs.as_slice().expect("standard layout");
            let mut h = vec![c(0.0); lead * k * k];
            for l in 0..lead {
                for i in 0..k {
                    for j in 0..k {
                        h[(l * k + i) * k + j] = gv[(l * m + map[i]) * m + map[j]];
                    }
                }
            }
            s.add(a, ArrayD::from_shape_vec(IxDyn(&in_shape), h).expect("shape"));
        }))
    }

    /// Per-mode channel mixing of spectra `x: [ci, T, n, n]` by `r: [A, B, B, co, ci]`.
    ///
    /// Mode `(a, b, c)` of `r` acts on bin `(tbins[a], sbins[b], sbins[c])`; all
    /// other bins of the output are zero.
    pub fn spectral_mix(&self, r: &Var<'t>, tbins: &Arc<Vec<usize>>, sbins: &Arc<Vec<usize>>) -> Var<'t> {
        let (xa, ra) = (self.id, r.id);
        let (xv, rv) = (self.value.clone(), r.value.clone());
        let xs = xv.shape().to_vec();
        let rs = rv.shape().to_vec();
        let (ci, nt, n) = (xs[0], xs[1], xs[2]);
        let (na, nb, co) = (rs[0], rs[1], rs[3]);
        assert_eq!(rs[4], ci, "spectral_mix: input channels");
        assert!(tbins.len() == na && sbins.len() == nb, "spectral_mix: mode tables");
        let xi = move |i: usize, t: usize, p: usize, q: usize| ((i * nt + t) * n + p) * n + q;
        let ri = move |a: usize, b: usize, d: usize, o: usize, i: usize| (((a * nb + b) * nb + d) * co + o) * ci + i;
        let xsl = xv.as_standard_layout().as_slice().expect("standard layout").to_vec();
        let rsl = rv.as_standard_layout().as_slice().expect("standard layout").to_vec();
        let mut y = vec![c(0.0); co * nt * n * n];
        for a in 0..na {
            for b in 0..nb {
                for d in 0..nb {
                    let (t, p, q) = (tbins[a], sbins[b], sbins[d]);
                    for o in 0..co {
                        let mut acc = c(0.0);
                        for i in 0..ci {
                            acc += rsl[ri(a, b, d, o, i)] * xsl[xi(i, t, p, q)];
                        }
                        y[((o * nt + t) * n + p) * n + q] = acc;
                    }
                }
            }
        }
        let y = ArrayD::from_shape_vec(IxDyn(&[co, nt, n, n]), y).expect("shape");
        let (tb, sb) = (tbins.clone(), sbins.clone());
        self.tape.op(y, &[self, r], Box::new(move |g, s| {
            let gs = g.as_standard_layout();
            let gv = gs.as_slice().expect("standard layout");
            let gi = |o: usize, t: usize, p: usize, q: usize| ((o * nt + t) * n + p) * n + q;
            if s.wants(xa) {
                let mut gx = vec![c(0.0); xsl.len()];
                for a in 0..na {
                    for b in 0..nb {
                        for d in 0..nb {
                            let (t, p, q) = (tb[a], sb[b], sb[d]);
                            for o in 0..co {
                                let go = gv[gi(o, t, p, q)];
                                for i in 0..ci {
                                    gx[xi(i, t, p, q)] += rsl[ri(a, b, d, o, i)].conj() * go;
                                }
                            }
                        }
                    }
                }
                s.add(xa, ArrayD::from_shape_vec(IxDyn(&xs), gx).expect("shape"));
            }
            if s.wants(ra) {
                let mut gr = vec![c(0.0); rsl.len()];
                for a in 0..na {
                    for b in 0..nb {
                        for d in 0..nb {
                            let (t, p, q) = (tb[a], sb[b], sb[d]);
                            for o in 0..co {
                                let go = gv[gi(o, t, p, q)];
                                for i in 0..ci {
                                    gr[ri(a, b, d, o, i)] = go * xsl[xi(i, t, p, q)].conj();
                                }
                            }
                        }
                    }
                }
                s.add(ra, ArrayD::from_shape_vec(IxDyn(&rs), gr).expect("shape"));
            }
        }))
    }
}

/// [`Backend`] adapter that records kernels on a tape.
#[derive(Clone, Copy)]
pub struct TapeBackend<'t>(pub &'t Tape);

impl<'t> Backend for TapeBackend<'t> {
    type T = Var<'t>;

    fn constant(&self, x: CTensor) -> Var<'t> {
        self.0.constant(x)
    }
    fn value<'a>(&self, x: &'a Var<'t>) -> &'a CTensor {
        x.value()
    }
    fn add(&self, a: &Var<'t>, b: &Var<'t>) -> Var<'t> {
        a.add(b)
    }
    fn sub(&self, a: &Var<'t>, b: &Var<'t>) -> Var<'t> {
        a.sub(b)
    }
    fn mul(&self, a: &Var<'t>, b: &Var<'t>) -> Var<'t> {
        a.mul(b)
    }
    fn scale(&self, a: &Var<'t>, s: f64) -> Var<'t> {
        a.scale(s)
    }
    fn mul_fixed(&self, a: &Var<'t>, m: &Arc<CTensor>) -> Var<'t> {
        a.mul_fixed(m)
    }
    fn add_fixed(&self, a: &Var<'t>, m: &Arc<CTensor>) -> Var<'t> {
        a.add_fixed(m)
    }
    fn fft2(&self, a: &Var<'t>) -> Var<'t> {
        let d = a.shape().len();
        a.fft(&[d - 2, d - 1])
    }
    fn ifft2(&self, a: &Var<'t>) -> Var<'t> {
        let d = a.shape().len();
        a.ifft(&[d - 2, d - 1])
    }
    fn re(&self, a: &Var<'t>) -> Var<'t> {
        a.re()
    }
}

/// Which part of a complex coordinate is perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative discrepancy over the sampled coordinates.
    pub max_rel_err: f64,
    pub samples: Vec<(usize, usize, Part, f64, f64)>,
}

/// Compares tape adjoints with five-point central differences at `count` random coordinates.
///
/// `f` builds a scalar loss from the parameter leaves. `real[i]` marks parameter
/// arrays whose imaginary parts are not degrees of freedom. The relative error of
/// a coordinate is `|fd − ad| / max(|fd|, |ad|, 1e-6·max|ad|)`, so coordinates
/// with vanishing derivative are judged against the gradient scale.
pub fn grad_check<F>(
    f: F,
    params: &[CTensor],
    real: &[bool],
    eps: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let eval = |ps: &[CTensor], grad: bool| -> Result<(f64, Vec<CTensor>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let value = loss.scalar();
        if !grad {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(&loss)?;
        Ok((value, vars.iter().map(|v| g.of(v)).collect()))
    };
    let params: Vec<CTensor> = params.iter().map(|p| p.as_standard_layout().into_owned()).collect();
    let params = &params[..];
    let (_, grads) = eval(params, true)?;
    let grads: Vec<CTensor> = grads.into_iter().map(|g| g.as_standard_layout().into_owned()).collect();
    let gmax = grads
        .iter()
        .flat_map(|g| g.iter().map(|v| v.re.abs().max(v.im.abs())))
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut samples = Vec::new();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let part = if real.get(which).copied().unwrap_or(false) || rng.gen_bool(0.5) {
            Part::Re
        } else {
            Part::Im
        };
        let bump = |s: f64| {
            let mut ps = params.to_vec();
            let v = ps[which].as_slice_mut().expect("standard layout");
            match part {
                Part::Re => v[flat].re += s,
                Part::Im => v[flat].im += s,
            }
            ps
        };
        let f = |k: f64| -> Result<f64> { Ok(eval(&bump(k * eps), false)?.0) };
        let fd = (8.0 * (f(1.0)? - f(-1.0)?) - (f(2.0)? - f(-2.0)?)) / (12.0 * eps);
        let gv = grads[which].as_slice().expect("standard layout")[flat];
        let ad = match part {
            Part::Re => gv.re,
            Part::Im => gv.im,
        };
        let denom = fd.abs().max(ad.abs()).max(1e-6 * gmax).max(f64::MIN_POSITIVE);
        let rel = (fd - ad).abs() / denom;
        worst = worst.max(rel);
        samples.push((which, flat, part, fd, ad));
    }
    Ok(GradCheck { max_rel_err: worst, samples })
}
