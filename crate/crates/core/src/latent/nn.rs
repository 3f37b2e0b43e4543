//! Dense-layer primitives over flat parameter slices.

use alloc::vec::Vec;

use crate::rng::{normal, SeededRng};

/// Location of one parameter block inside a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Block {
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.start..self.start + self.len]
    }

    pub fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.start..self.start + self.len]
    }
}

/// Weight matrix (`out × inp`, row-major) and bias of one affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Affine {
    pub w: Block,
    pub b: Block,
    pub inp: usize,
    pub out: usize,
}

/// Hands out consecutive blocks while a layout is being built.
#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn block(&mut self, len: usize) -> Block {
        let b = Block { start: self.next, len };
        self.next += len;
        b
    }

    pub fn affine(&mut self, inp: usize, out: usize) -> Affine {
        let w = self.block(inp * out);
        let b = self.block(out);
        Affine { w, b, inp, out }
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

impl Affine {
    /// `out = W x + b`
    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        debug_assert_eq!(out.len(), self.out);
        let w = self.w.of(p);
        let b = self.b.of(p);
        for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(self.inp).zip(b)) {
            *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn apply(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.out];
        self.forward(p, x, &mut out);
        out
    }

    /// Accumulates `dW += g xᵀ`, `db += g`, and `gx = Wᵀ g` when requested.
    pub fn backward(&self, p: &[f64], x: &[f64], g_out: &[f64], grad: &mut [f64], g_x: Option<&mut [f64]>) {
        {
            let gw = self.w.of_mut(grad);
            for (row, g) in gw.chunks_exact_mut(self.inp).zip(g_out) {
                for (r, xi) in row.iter_mut().zip(x) {
                    *r += g * xi;
                }
            }
        }
        for (gb, g) in self.b.of_mut(grad).iter_mut().zip(g_out) {
            *gb += g;
        }
        if let Some(gx) = g_x {
            gx.iter_mut().for_each(|v| *v = 0.0);
            let w = self.w.of(p);
            for (row, g) in w.chunks_exact(self.inp).zip(g_out) {
                for (acc, wi) in gx.iter_mut().zip(row) {
                    *acc += g * wi;
                }
            }
        }
    }

    /// Gaussian weights with variance `gain² / inp`, zero biases.
    pub fn init(&self, p: &mut [f64], rng: &mut SeededRng, gain: f64) {
        let scale = gain / libm::sqrt(self.inp as f64);
        for w in self.w.of_mut(p) {
            *w = scale * normal(rng);
        }
        self.b.of_mut(p).iter_mut().for_each(|b| *b = 0.0);
    }
}

pub(crate) fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = libm::tanh(*x));
}

/// Multiplies `g` by tanh′ given the activations `h = tanh(·)`.
pub(crate) fn tanh_backward(h: &[f64], g: &mut [f64]) {
    for (g, h) in g.iter_mut().zip(h) {
        *g *= 1.0 - h * h;
    }
}

/// Numerically stable log Σ exp.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

/// Softmax of `v` written into `out`.
pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = libm::exp(x - m);
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;
