//! Memoryless cells: GRU and plain tanh RNN.
//!
//! Neither keeps a long-term memory, so both report the fresh hidden state
//! as the `c` output too; the matching backward folds the gradient arriving
//! on `c` into the hidden-state gradient.

use std::ops::Range;

use super::ops::{addv, axpy, sigmoid_in, tanh_in, Cursor};
use super::{CellOut, Region};
use crate::numerics::{matvec_into, outer_acc};

pub(super) struct GruLayout {
    pub w_xu: Range<usize>,
    pub w_hu: Range<usize>,
    pub b_u: Range<usize>,
    pub w_xr: Range<usize>,
    pub w_hr: Range<usize>,
    pub b_r: Range<usize>,
    pub w_xh: Range<usize>,
    pub w_hh: Range<usize>,
    pub b_h: Range<usize>,
}

impl GruLayout {
    pub fn new(s: usize) -> Self {
        let mut c = Cursor::new();
        GruLayout {
            w_xu: c.take(s),
            w_hu: c.take(s * s),
            b_u: c.take(s),
            w_xr: c.take(s),
            w_hr: c.take(s * s),
            b_r: c.take(s),
            w_xh: c.take(s),
            w_hh: c.take(s * s),
            b_h: c.take(s),
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        vec![
            Region { name: "w_xu", range: self.w_xu.clone(), bias: false },
            Region { name: "w_hu", range: self.w_hu.clone(), bias: false },
            Region { name: "b_u", range: self.b_u.clone(), bias: true },
            Region { name: "w_xr", range: self.w_xr.clone(), bias: false },
            Region { name: "w_hr", range: self.w_hr.clone(), bias: false },
            Region { name: "b_r", range: self.b_r.clone(), bias: true },
            Region { name: "w_xh", range: self.w_xh.clone(), bias: false },
            Region { name: "w_hh", range: self.w_hh.clone(), bias: false },
            Region { name: "b_h", range: self.b_h.clone(), bias: true },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: f64,
    h_prev: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    /// `W_hh * h_prev` before the reset gate scales it.
    q: Vec<f64>,
    hc: Vec<f64>,
}

pub(super) fn gru_forward(p: &[f64], x: f64, h_prev: &[f64]) -> (CellOut, GruCache) {
    let s = h_prev.len();
    let l = GruLayout::new(s);

    let mut u = vec![0.0; s];
    axpy(&mut u, x, &p[l.w_xu.clone()]);
    matvec_into(&p[l.w_hu.clone()], s, s, h_prev, &mut u);
    addv(&mut u, &p[l.b_u.clone()]);
    sigmoid_in(&mut u);

    let mut r = vec![0.0; s];
    axpy(&mut r, x, &p[l.w_xr.clone()]);
    matvec_into(&p[l.w_hr.clone()], s, s, h_prev, &mut r);
    addv(&mut r, &p[l.b_r.clone()]);
    sigmoid_in(&mut r);

    let mut q = vec![0.0; s];
    matvec_into(&p[l.w_hh.clone()], s, s, h_prev, &mut q);

    let mut hc = vec![0.0; s];
    axpy(&mut hc, x, &p[l.w_xh.clone()]);
    for k in 0..s {
        hc[k] += r[k] * q[k];
    }
    addv(&mut hc, &p[l.b_h.clone()]);
    tanh_in(&mut hc);

    let h: Vec<f64> = (0..s).map(|k| u[k] * h_prev[k] + (1.0 - u[k]) * hc[k]).collect();

    let cache = GruCache { x, h_prev: h_prev.to_vec(), u, r, q, hc };
    (CellOut { c: h.clone(), h }, cache)
}

pub(super) fn gru_backward(_p: &[f64], cc: &GruCache, dh: &[f64], dc: &[f64], g: &mut [f64]) {
    let s = cc.h_prev.len();
    let l = GruLayout::new(s);

    let mut da_u = vec![0.0; s];
    let mut da_r = vec![0.0; s];
    let mut da_h = vec![0.0; s];
    let mut dq = vec![0.0; s];
    for k in 0..s {
        let dtotal = dh[k] + dc[k];
        let du = dtotal * (cc.h_prev[k] - cc.hc[k]);
        let dhc = dtotal * (1.0 - cc.u[k]);
        da_u[k] = du * cc.u[k] * (1.0 - cc.u[k]);
        da_h[k] = dhc * (1.0 - cc.hc[k] * cc.hc[k]);
        dq[k] = da_h[k] * cc.r[k];
        let dr = da_h[k] * cc.q[k];
        da_r[k] = dr * cc.r[k] * (1.0 - cc.r[k]);
    }

    axpy(&mut g[l.w_xu.clone()], cc.x, &da_u);
    outer_acc(&mut g[l.w_hu.clone()], &da_u, &cc.h_prev, 1.0);
    addv(&mut g[l.b_u.clone()], &da_u);
    axpy(&mut g[l.w_xr.clone()], cc.x, &da_r);
    outer_acc(&mut g[l.w_hr.clone()], &da_r, &cc.h_prev, 1.0);
    addv(&mut g[l.b_r.clone()], &da_r);
    axpy(&mut g[l.w_xh.clone()], cc.x, &da_h);
    outer_acc(&mut g[l.w_hh.clone()], &dq, &cc.h_prev, 1.0);
    addv(&mut g[l.b_h.clone()], &da_h);
}

pub(super) struct RnnLayout {
    pub w_xh: Range<usize>,
    pub w_hh: Range<usize>,
    pub b_h: Range<usize>,
}

impl RnnLayout {
    pub fn new(s: usize) -> Self {
        let mut c = Cursor::new();
        RnnLayout { w_xh: c.take(s), w_hh: c.take(s * s), b_h: c.take(s) }
    }

    pub fn regions(&self) -> Vec<Region> {
        vec![
            Region { name: "w_xh", range: self.w_xh.clone(), bias: false },
            Region { name: "w_hh", range: self.w_hh.clone(), bias: false },
            Region { name: "b_h", range: self.b_h.clone(), bias: true },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct RnnCache {
    x: f64,
    h_prev: Vec<f64>,
    h: Vec<f64>,
}

pub(super) fn rnn_forward(p: &[f64], x: f64, h_prev: &[f64]) -> (CellOut, RnnCache) {
    let s = h_prev.len();
    let l = RnnLayout::new(s);

    let mut h = vec![0.0; s];
    axpy(&mut h, x, &p[l.w_xh.clone()]);
    matvec_into(&p[l.w_hh.clone()], s, s, h_prev, &mut h);
    addv(&mut h, &p[l.b_h.clone()]);
    tanh_in(&mut h);

    let cache = RnnCache { x, h_prev: h_prev.to_vec(), h: h.clone() };
    (CellOut { c: h.clone(), h }, cache)
}

pub(super) fn rnn_backward(_p: &[f64], cc: &RnnCache, dh: &[f64], dc: &[f64], g: &mut [f64]) {
    let s = cc.h_prev.len();
    let l = RnnLayout::new(s);

    let mut da = vec![0.0; s];
    for k in 0..s {
        da[k] = (dh[k] + dc[k]) * (1.0 - cc.h[k] * cc.h[k]);
    }
    axpy(&mut g[l.w_xh.clone()], cc.x, &da);
    outer_acc(&mut g[l.w_hh.clone()], &da, &cc.h_prev, 1.0);
    addv(&mut g[l.b_h.clone()], &da);
}
