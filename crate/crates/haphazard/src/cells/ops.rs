//! Tiny elementwise helpers shared by the cell implementations.

use std::ops::Range;

/// Walks a flat parameter vector, handing out consecutive regions.
pub(super) struct Cursor(usize);

impl Cursor {
    pub(super) fn new() -> Self {
        Cursor(0)
    }

    pub(super) fn take(&mut self, len: usize) -> Range<usize> {
        let range = self.0..self.0 + len;
        self.0 += len;
        range
    }
}

/// `out += k * v`.
pub(super) fn axpy(out: &mut [f64], k: f64, v: &[f64]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += k * x;
    }
}

/// `out += a`.
pub(super) fn addv(out: &mut [f64], a: &[f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o += x;
    }
}

/// `out += a ⊙ b`.
pub(super) fn hadamard_acc(out: &mut [f64], a: &[f64], b: &[f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

pub(super) fn sigmoid_in(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = crate::numerics::sigmoid(*x);
    }
}

pub(super) fn tanh_in(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.tanh();
    }
}
