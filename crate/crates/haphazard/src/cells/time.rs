//! Time-gated LSTM cells.
//!
//! All three variants feed the elapsed time `dt` through learned sigmoid
//! time gates that modulate how much of the candidate update enters memory,
//! and again through a direct term in the output gate. The richest variant
//! keeps two separate memory updates: a short-term one (read by the hidden
//! state) and a long-term one (carried to the next instance); the two-gate
//! variant adds an explicit forget gate to both; the one-gate variant
//! collapses them into a single memory.

use std::ops::Range;

use super::ops::{addv, axpy, hadamard_acc, sigmoid_in, tanh_in, Cursor};
use super::{CellOut, Region};
use crate::numerics::{matvec_into, outer_acc, sigmoid};

pub(super) struct Tl3Layout {
    pub w_xi: Range<usize>,
    pub w_hi: Range<usize>,
    pub w_ci: Range<usize>,
    pub b_i: Range<usize>,
    pub w_xt1: Range<usize>,
    pub w_t1: Range<usize>,
    pub b_t1: Range<usize>,
    pub w_xt2: Range<usize>,
    pub w_t2: Range<usize>,
    pub b_t2: Range<usize>,
    pub w_xg1: Range<usize>,
    pub w_hg1: Range<usize>,
    pub b_g1: Range<usize>,
    pub w_xg2: Range<usize>,
    pub w_hg2: Range<usize>,
    pub b_g2: Range<usize>,
    pub w_xo: Range<usize>,
    pub w_do: Range<usize>,
    pub w_ho: Range<usize>,
    pub w_co: Range<usize>,
    pub b_o: Range<usize>,
}

impl Tl3Layout {
    pub fn new(s: usize) -> Self {
        let mut c = Cursor::new();
        let w_xi = c.take(s);
        let w_hi = c.take(s * s);
        let w_ci = c.take(s);
        let b_i = c.take(s);
        let w_xt1 = c.take(s);
        let w_t1 = c.take(s);
        let b_t1 = c.take(s);
        let w_xt2 = c.take(s);
        let w_t2 = c.take(s);
        let b_t2 = c.take(s);
        let w_xg1 = c.take(s);
        let w_hg1 = c.take(s * s);
        let b_g1 = c.take(s);
        let w_xg2 = c.take(s);
        let w_hg2 = c.take(s * s);
        let b_g2 = c.take(s);
        let w_xo = c.take(s);
        let w_do = c.take(s);
        let w_ho = c.take(s * s);
        let w_co = c.take(s);
        let b_o = c.take(s);
        Tl3Layout {
            w_xi,
            w_hi,
            w_ci,
            b_i,
            w_xt1,
            w_t1,
            b_t1,
            w_xt2,
            w_t2,
            b_t2,
            w_xg1,
            w_hg1,
            b_g1,
            w_xg2,
            w_hg2,
            b_g2,
            w_xo,
            w_do,
            w_ho,
            w_co,
            b_o,
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        vec![
            Region { name: "w_xi", range: self.w_xi.clone(), bias: false },
            Region { name: "w_hi", range: self.w_hi.clone(), bias: false },
            Region { name: "w_ci", range: self.w_ci.clone(), bias: false },
            Region { name: "b_i", range: self.b_i.clone(), bias: true },
            Region { name: "w_xt1", range: self.w_xt1.clone(), bias: false },
            Region { name: "w_t1", range: self.w_t1.clone(), bias: false },
            Region { name: "b_t1", range: self.b_t1.clone(), bias: true },
            Region { name: "w_xt2", range: self.w_xt2.clone(), bias: false },
            Region { name: "w_t2", range: self.w_t2.clone(), bias: false },
            Region { name: "b_t2", range: self.b_t2.clone(), bias: true },
            Region { name: "w_xg1", range: self.w_xg1.clone(), bias: false },
            Region { name: "w_hg1", range: self.w_hg1.clone(), bias: false },
            Region { name: "b_g1", range: self.b_g1.clone(), bias: true },
            Region { name: "w_xg2", range: self.w_xg2.clone(), bias: false },
            Region { name: "w_hg2", range: self.w_hg2.clone(), bias: false },
            Region { name: "b_g2", range: self.b_g2.clone(), bias: true },
            Region { name: "w_xo", range: self.w_xo.clone(), bias: false },
            Region { name: "w_do", range: self.w_do.clone(), bias: false },
            Region { name: "w_ho", range: self.w_ho.clone(), bias: false },
            Region { name: "w_co", range: self.w_co.clone(), bias: false },
            Region { name: "b_o", range: self.b_o.clone(), bias: true },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Tl3Cache {
    x: f64,
    dt: f64,
    h_prev: Vec<f64>,
    c_in: Vec<f64>,
    i: Vec<f64>,
    s1: Vec<f64>,
    t1: Vec<f64>,
    s2: Vec<f64>,
    t2: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    c_tilde: Vec<f64>,
    o: Vec<f64>,
    th: Vec<f64>,
}

pub(super) fn tl3_forward(
    p: &[f64],
    x: f64,
    dt: f64,
    h_prev: &[f64],
    c_in: &[f64],
) -> (CellOut, Tl3Cache) {
    let s = h_prev.len();
    let l = Tl3Layout::new(s);

    let mut i = vec![0.0; s];
    axpy(&mut i, x, &p[l.w_xi.clone()]);
    matvec_into(&p[l.w_hi.clone()], s, s, h_prev, &mut i);
    hadamard_acc(&mut i, &p[l.w_ci.clone()], c_in);
    addv(&mut i, &p[l.b_i.clone()]);
    sigmoid_in(&mut i);

    let s1: Vec<f64> = p[l.w_t1.clone()].iter().map(|w| sigmoid(dt * w)).collect();
    let mut t1 = s1.clone();
    axpy(&mut t1, x, &p[l.w_xt1.clone()]);
    addv(&mut t1, &p[l.b_t1.clone()]);
    sigmoid_in(&mut t1);

    let s2: Vec<f64> = p[l.w_t2.clone()].iter().map(|w| sigmoid(dt * w)).collect();
    let mut t2 = s2.clone();
    axpy(&mut t2, x, &p[l.w_xt2.clone()]);
    addv(&mut t2, &p[l.b_t2.clone()]);
    sigmoid_in(&mut t2);

    let mut g1 = vec![0.0; s];
    axpy(&mut g1, x, &p[l.w_xg1.clone()]);
    matvec_into(&p[l.w_hg1.clone()], s, s, h_prev, &mut g1);
    addv(&mut g1, &p[l.b_g1.clone()]);
    tanh_in(&mut g1);

    let mut g2 = vec![0.0; s];
    axpy(&mut g2, x, &p[l.w_xg2.clone()]);
    matvec_into(&p[l.w_hg2.clone()], s, s, h_prev, &mut g2);
    addv(&mut g2, &p[l.b_g2.clone()]);
    tanh_in(&mut g2);

    let mut c_tilde = vec![0.0; s];
    let mut c_new = vec![0.0; s];
    for k in 0..s {
        let gate = i[k] * t1[k];
        c_tilde[k] = (1.0 - gate) * c_in[k] + gate * g1[k];
        c_new[k] = (1.0 - i[k]) * c_in[k] + i[k] * t2[k] * g2[k];
    }

    let mut o = vec![0.0; s];
    axpy(&mut o, x, &p[l.w_xo.clone()]);
    axpy(&mut o, dt, &p[l.w_do.clone()]);
    matvec_into(&p[l.w_ho.clone()], s, s, h_prev, &mut o);
    hadamard_acc(&mut o, &p[l.w_co.clone()], &c_tilde);
    addv(&mut o, &p[l.b_o.clone()]);
    sigmoid_in(&mut o);

    let th: Vec<f64> = c_tilde.iter().map(|c| c.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&th).map(|(o, t)| o * t).collect();

    let cache = Tl3Cache {
        x,
        dt,
        h_prev: h_prev.to_vec(),
        c_in: c_in.to_vec(),
        i,
        s1,
        t1,
        s2,
        t2,
        g1,
        g2,
        c_tilde: c_tilde.clone(),
        o,
        th,
    };
    (CellOut { h, c: c_new }, cache)
}

pub(super) fn tl3_backward(p: &[f64], cc: &Tl3Cache, dh: &[f64], dc: &[f64], g: &mut [f64]) {
    let s = cc.h_prev.len();
    let l = Tl3Layout::new(s);

    let mut da_o = vec![0.0; s];
    let mut dct = vec![0.0; s];
    for k in 0..s {
        let do_ = dh[k] * cc.th[k];
        da_o[k] = do_ * cc.o[k] * (1.0 - cc.o[k]);
        dct[k] = dh[k] * cc.o[k] * (1.0 - cc.th[k] * cc.th[k]) + da_o[k] * p[l.w_co.clone()][k];
    }

    axpy(&mut g[l.w_xo.clone()], cc.x, &da_o);
    axpy(&mut g[l.w_do.clone()], cc.dt, &da_o);
    outer_acc(&mut g[l.w_ho.clone()], &da_o, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_co.clone()], &da_o, &cc.c_tilde);
    addv(&mut g[l.b_o.clone()], &da_o);

    let mut di = vec![0.0; s];
    let mut dt1 = vec![0.0; s];
    let mut dt2 = vec![0.0; s];
    let mut dg1 = vec![0.0; s];
    let mut dg2 = vec![0.0; s];
    for k in 0..s {
        di[k] = dc[k] * (cc.t2[k] * cc.g2[k] - cc.c_in[k])
            + dct[k] * cc.t1[k] * (cc.g1[k] - cc.c_in[k]);
        dt2[k] = dc[k] * cc.i[k] * cc.g2[k];
        dg2[k] = dc[k] * cc.i[k] * cc.t2[k];
        dt1[k] = dct[k] * cc.i[k] * (cc.g1[k] - cc.c_in[k]);
        dg1[k] = dct[k] * cc.i[k] * cc.t1[k];
    }

    let mut da_g1 = vec![0.0; s];
    let mut da_g2 = vec![0.0; s];
    for k in 0..s {
        da_g1[k] = dg1[k] * (1.0 - cc.g1[k] * cc.g1[k]);
        da_g2[k] = dg2[k] * (1.0 - cc.g2[k] * cc.g2[k]);
    }
    axpy(&mut g[l.w_xg1.clone()], cc.x, &da_g1);
    outer_acc(&mut g[l.w_hg1.clone()], &da_g1, &cc.h_prev, 1.0);
    addv(&mut g[l.b_g1.clone()], &da_g1);
    axpy(&mut g[l.w_xg2.clone()], cc.x, &da_g2);
    outer_acc(&mut g[l.w_hg2.clone()], &da_g2, &cc.h_prev, 1.0);
    addv(&mut g[l.b_g2.clone()], &da_g2);

    for k in 0..s {
        let da_t1 = dt1[k] * cc.t1[k] * (1.0 - cc.t1[k]);
        g[l.w_xt1.clone()][k] += cc.x * da_t1;
        g[l.b_t1.clone()][k] += da_t1;
        let du1 = da_t1 * cc.s1[k] * (1.0 - cc.s1[k]);
        g[l.w_t1.clone()][k] += cc.dt * du1;

        let da_t2 = dt2[k] * cc.t2[k] * (1.0 - cc.t2[k]);
        g[l.w_xt2.clone()][k] += cc.x * da_t2;
        g[l.b_t2.clone()][k] += da_t2;
        let du2 = da_t2 * cc.s2[k] * (1.0 - cc.s2[k]);
        g[l.w_t2.clone()][k] += cc.dt * du2;
    }

    let mut da_i = vec![0.0; s];
    for k in 0..s {
        da_i[k] = di[k] * cc.i[k] * (1.0 - cc.i[k]);
    }
    axpy(&mut g[l.w_xi.clone()], cc.x, &da_i);
    outer_acc(&mut g[l.w_hi.clone()], &da_i, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_ci.clone()], &da_i, &cc.c_in);
    addv(&mut g[l.b_i.clone()], &da_i);
}

pub(super) struct Tl2Layout {
    pub w_xi: Range<usize>,
    pub w_hi: Range<usize>,
    pub w_ci: Range<usize>,
    pub b_i: Range<usize>,
    pub w_xf: Range<usize>,
    pub w_hf: Range<usize>,
    pub w_cf: Range<usize>,
    pub b_f: Range<usize>,
    pub w_xt1: Range<usize>,
    pub w_t1: Range<usize>,
    pub b_t1: Range<usize>,
    pub w_xt2: Range<usize>,
    pub w_t2: Range<usize>,
    pub b_t2: Range<usize>,
    pub w_xg1: Range<usize>,
    pub w_hg1: Range<usize>,
    pub b_g1: Range<usize>,
    pub w_xg2: Range<usize>,
    pub w_hg2: Range<usize>,
    pub b_g2: Range<usize>,
    pub w_xo: Range<usize>,
    pub w_do: Range<usize>,
    pub w_ho: Range<usize>,
    pub w_co: Range<usize>,
    pub b_o: Range<usize>,
}

impl Tl2Layout {
    pub fn new(s: usize) -> Self {
        let mut c = Cursor::new();
        let w_xi = c.take(s);
        let w_hi = c.take(s * s);
        let w_ci = c.take(s);
        let b_i = c.take(s);
        let w_xf = c.take(s);
        let w_hf = c.take(s * s);
        let w_cf = c.take(s);
        let b_f = c.take(s);
        let w_xt1 = c.take(s);
        let w_t1 = c.take(s);
        let b_t1 = c.take(s);
        let w_xt2 = c.take(s);
        let w_t2 = c.take(s);
        let b_t2 = c.take(s);
        let w_xg1 = c.take(s);
        let w_hg1 = c.take(s * s);
        let b_g1 = c.take(s);
        let w_xg2 = c.take(s);
        let w_hg2 = c.take(s * s);
        let b_g2 = c.take(s);
        let w_xo = c.take(s);
        let w_do = c.take(s);
        let w_ho = c.take(s * s);
        let w_co = c.take(s);
        let b_o = c.take(s);
        Tl2Layout {
            w_xi,
            w_hi,
            w_ci,
            b_i,
            w_xf,
            w_hf,
            w_cf,
            b_f,
            w_xt1,
            w_t1,
            b_t1,
            w_xt2,
            w_t2,
            b_t2,
            w_xg1,
            w_hg1,
            b_g1,
            w_xg2,
            w_hg2,
            b_g2,
            w_xo,
            w_do,
            w_ho,
            w_co,
            b_o,
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        vec![
            Region { name: "w_xi", range: self.w_xi.clone(), bias: false },
            Region { name: "w_hi", range: self.w_hi.clone(), bias: false },
            Region { name: "w_ci", range: self.w_ci.clone(), bias: false },
            Region { name: "b_i", range: self.b_i.clone(), bias: true },
            Region { name: "w_xf", range: self.w_xf.clone(), bias: false },
            Region { name: "w_hf", range: self.w_hf.clone(), bias: false },
            Region { name: "w_cf", range: self.w_cf.clone(), bias: false },
            Region { name: "b_f", range: self.b_f.clone(), bias: true },
            Region { name: "w_xt1", range: self.w_xt1.clone(), bias: false },
            Region { name: "w_t1", range: self.w_t1.clone(), bias: false },
            Region { name: "b_t1", range: self.b_t1.clone(), bias: true },
            Region { name: "w_xt2", range: self.w_xt2.clone(), bias: false },
            Region { name: "w_t2", range: self.w_t2.clone(), bias: false },
            Region { name: "b_t2", range: self.b_t2.clone(), bias: true },
            Region { name: "w_xg1", range: self.w_xg1.clone(), bias: false },
            Region { name: "w_hg1", range: self.w_hg1.clone(), bias: false },
            Region { name: "b_g1", range: self.b_g1.clone(), bias: true },
            Region { name: "w_xg2", range: self.w_xg2.clone(), bias: false },
            Region { name: "w_hg2", range: self.w_hg2.clone(), bias: false },
            Region { name: "b_g2", range: self.b_g2.clone(), bias: true },
            Region { name: "w_xo", range: self.w_xo.clone(), bias: false },
            Region { name: "w_do", range: self.w_do.clone(), bias: false },
            Region { name: "w_ho", range: self.w_ho.clone(), bias: false },
            Region { name: "w_co", range: self.w_co.clone(), bias: false },
            Region { name: "b_o", range: self.b_o.clone(), bias: true },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Tl2Cache {
    x: f64,
    dt: f64,
    h_prev: Vec<f64>,
    c_in: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    s1: Vec<f64>,
    t1: Vec<f64>,
    s2: Vec<f64>,
    t2: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    c_tilde: Vec<f64>,
    o: Vec<f64>,
    th: Vec<f64>,
}

pub(super) fn tl2_forward(
    p: &[f64],
    x: f64,
    dt: f64,
    h_prev: &[f64],
    c_in: &[f64],
) -> (CellOut, Tl2Cache) {
    let s = h_prev.len();
    let l = Tl2Layout::new(s);

    let mut i = vec![0.0; s];
    axpy(&mut i, x, &p[l.w_xi.clone()]);
    matvec_into(&p[l.w_hi.clone()], s, s, h_prev, &mut i);
    hadamard_acc(&mut i, &p[l.w_ci.clone()], c_in);
    addv(&mut i, &p[l.b_i.clone()]);
    sigmoid_in(&mut i);

    let mut f = vec![0.0; s];
    axpy(&mut f, x, &p[l.w_xf.clone()]);
    matvec_into(&p[l.w_hf.clone()], s, s, h_prev, &mut f);
    hadamard_acc(&mut f, &p[l.w_cf.clone()], c_in);
    addv(&mut f, &p[l.b_f.clone()]);
    sigmoid_in(&mut f);

    let s1: Vec<f64> = p[l.w_t1.clone()].iter().map(|w| sigmoid(dt * w)).collect();
    let mut t1 = s1.clone();
    axpy(&mut t1, x, &p[l.w_xt1.clone()]);
    addv(&mut t1, &p[l.b_t1.clone()]);
    sigmoid_in(&mut t1);

    let s2: Vec<f64> = p[l.w_t2.clone()].iter().map(|w| sigmoid(dt * w)).collect();
    let mut t2 = s2.clone();
    axpy(&mut t2, x, &p[l.w_xt2.clone()]);
    addv(&mut t2, &p[l.b_t2.clone()]);
    sigmoid_in(&mut t2);

    let mut g1 = vec![0.0; s];
    axpy(&mut g1, x, &p[l.w_xg1.clone()]);
    matvec_into(&p[l.w_hg1.clone()], s, s, h_prev, &mut g1);
    addv(&mut g1, &p[l.b_g1.clone()]);
    tanh_in(&mut g1);

    let mut g2 = vec![0.0; s];
    axpy(&mut g2, x, &p[l.w_xg2.clone()]);
    matvec_into(&p[l.w_hg2.clone()], s, s, h_prev, &mut g2);
    addv(&mut g2, &p[l.b_g2.clone()]);
    tanh_in(&mut g2);

    let mut c_tilde = vec![0.0; s];
    let mut c_new = vec![0.0; s];
    for k in 0..s {
        c_tilde[k] = f[k] * c_in[k] + i[k] * t1[k] * g1[k];
        c_new[k] = f[k] * c_in[k] + i[k] * t2[k] * g2[k];
    }

    let mut o = vec![0.0; s];
    axpy(&mut o, x, &p[l.w_xo.clone()]);
    axpy(&mut o, dt, &p[l.w_do.clone()]);
    matvec_into(&p[l.w_ho.clone()], s, s, h_prev, &mut o);
    hadamard_acc(&mut o, &p[l.w_co.clone()], &c_tilde);
    addv(&mut o, &p[l.b_o.clone()]);
    sigmoid_in(&mut o);

    let th: Vec<f64> = c_tilde.iter().map(|c| c.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&th).map(|(o, t)| o * t).collect();

    let cache = Tl2Cache {
        x,
        dt,
        h_prev: h_prev.to_vec(),
        c_in: c_in.to_vec(),
        i,
        f,
        s1,
        t1,
        s2,
        t2,
        g1,
        g2,
        c_tilde: c_tilde.clone(),
        o,
        th,
    };
    (CellOut { h, c: c_new }, cache)
}

pub(super) fn tl2_backward(p: &[f64], cc: &Tl2Cache, dh: &[f64], dc: &[f64], g: &mut [f64]) {
    let s = cc.h_prev.len();
    let l = Tl2Layout::new(s);

    let mut da_o = vec![0.0; s];
    let mut dct = vec![0.0; s];
    for k in 0..s {
        let do_ = dh[k] * cc.th[k];
        da_o[k] = do_ * cc.o[k] * (1.0 - cc.o[k]);
        dct[k] = dh[k] * cc.o[k] * (1.0 - cc.th[k] * cc.th[k]) + da_o[k] * p[l.w_co.clone()][k];
    }

    axpy(&mut g[l.w_xo.clone()], cc.x, &da_o);
    axpy(&mut g[l.w_do.clone()], cc.dt, &da_o);
    outer_acc(&mut g[l.w_ho.clone()], &da_o, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_co.clone()], &da_o, &cc.c_tilde);
    addv(&mut g[l.b_o.clone()], &da_o);

    let mut di = vec![0.0; s];
    let mut df = vec![0.0; s];
    let mut dt1 = vec![0.0; s];
    let mut dt2 = vec![0.0; s];
    let mut da_g1 = vec![0.0; s];
    let mut da_g2 = vec![0.0; s];
    for k in 0..s {
        df[k] = (dc[k] + dct[k]) * cc.c_in[k];
        di[k] = dc[k] * cc.t2[k] * cc.g2[k] + dct[k] * cc.t1[k] * cc.g1[k];
        dt2[k] = dc[k] * cc.i[k] * cc.g2[k];
        dt1[k] = dct[k] * cc.i[k] * cc.g1[k];
        da_g2[k] = dc[k] * cc.i[k] * cc.t2[k] * (1.0 - cc.g2[k] * cc.g2[k]);
        da_g1[k] = dct[k] * cc.i[k] * cc.t1[k] * (1.0 - cc.g1[k] * cc.g1[k]);
    }

    axpy(&mut g[l.w_xg1.clone()], cc.x, &da_g1);
    outer_acc(&mut g[l.w_hg1.clone()], &da_g1, &cc.h_prev, 1.0);
    addv(&mut g[l.b_g1.clone()], &da_g1);
    axpy(&mut g[l.w_xg2.clone()], cc.x, &da_g2);
    outer_acc(&mut g[l.w_hg2.clone()], &da_g2, &cc.h_prev, 1.0);
    addv(&mut g[l.b_g2.clone()], &da_g2);

    for k in 0..s {
        let da_t1 = dt1[k] * cc.t1[k] * (1.0 - cc.t1[k]);
        g[l.w_xt1.clone()][k] += cc.x * da_t1;
        g[l.b_t1.clone()][k] += da_t1;
        let du1 = da_t1 * cc.s1[k] * (1.0 - cc.s1[k]);
        g[l.w_t1.clone()][k] += cc.dt * du1;

        let da_t2 = dt2[k] * cc.t2[k] * (1.0 - cc.t2[k]);
        g[l.w_xt2.clone()][k] += cc.x * da_t2;
        g[l.b_t2.clone()][k] += da_t2;
        let du2 = da_t2 * cc.s2[k] * (1.0 - cc.s2[k]);
        g[l.w_t2.clone()][k] += cc.dt * du2;
    }

    let mut da_i = vec![0.0; s];
    let mut da_f = vec![0.0; s];
    for k in 0..s {
        da_i[k] = di[k] * cc.i[k] * (1.0 - cc.i[k]);
        da_f[k] = df[k] * cc.f[k] * (1.0 - cc.f[k]);
    }
    axpy(&mut g[l.w_xi.clone()], cc.x, &da_i);
    outer_acc(&mut g[l.w_hi.clone()], &da_i, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_ci.clone()], &da_i, &cc.c_in);
    addv(&mut g[l.b_i.clone()], &da_i);
    axpy(&mut g[l.w_xf.clone()], cc.x, &da_f);
    outer_acc(&mut g[l.w_hf.clone()], &da_f, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_cf.clone()], &da_f, &cc.c_in);
    addv(&mut g[l.b_f.clone()], &da_f);
}

pub(super) struct Tl1Layout {
    pub w_xi: Range<usize>,
    pub w_hi: Range<usize>,
    pub w_ci: Range<usize>,
    pub b_i: Range<usize>,
    pub w_xf: Range<usize>,
    pub w_hf: Range<usize>,
    pub w_cf: Range<usize>,
    pub b_f: Range<usize>,
    pub w_xt1: Range<usize>,
    pub w_t1: Range<usize>,
    pub b_t1: Range<usize>,
    pub w_xg: Range<usize>,
    pub w_hg: Range<usize>,
    pub b_g: Range<usize>,
    pub w_xo: Range<usize>,
    pub w_do: Range<usize>,
    pub w_ho: Range<usize>,
    pub w_co: Range<usize>,
    pub b_o: Range<usize>,
}

impl Tl1Layout {
    pub fn new(s: usize) -> Self {
        let mut c = Cursor::new();
        let w_xi = c.take(s);
        let w_hi = c.take(s * s);
        let w_ci = c.take(s);
        let b_i = c.take(s);
        let w_xf = c.take(s);
        let w_hf = c.take(s * s);
        let w_cf = c.take(s);
        let b_f = c.take(s);
        let w_xt1 = c.take(s);
        let w_t1 = c.take(s);
        let b_t1 = c.take(s);
        let w_xg = c.take(s);
        let w_hg = c.take(s * s);
        let b_g = c.take(s);
        let w_xo = c.take(s);
        let w_do = c.take(s);
        let w_ho = c.take(s * s);
        let w_co = c.take(s);
        let b_o = c.take(s);
        Tl1Layout {
            w_xi,
            w_hi,
            w_ci,
            b_i,
            w_xf,
            w_hf,
            w_cf,
            b_f,
            w_xt1,
            w_t1,
            b_t1,
            w_xg,
            w_hg,
            b_g,
            w_xo,
            w_do,
            w_ho,
            w_co,
            b_o,
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        vec![
            Region { name: "w_xi", range: self.w_xi.clone(), bias: false },
            Region { name: "w_hi", range: self.w_hi.clone(), bias: false },
            Region { name: "w_ci", range: self.w_ci.clone(), bias: false },
            Region { name: "b_i", range: self.b_i.clone(), bias: true },
            Region { name: "w_xf", range: self.w_xf.clone(), bias: false },
            Region { name: "w_hf", range: self.w_hf.clone(), bias: false },
            Region { name: "w_cf", range: self.w_cf.clone(), bias: false },
            Region { name: "b_f", range: self.b_f.clone(), bias: true },
            Region { name: "w_xt1", range: self.w_xt1.clone(), bias: false },
            Region { name: "w_t1", range: self.w_t1.clone(), bias: false },
            Region { name: "b_t1", range: self.b_t1.clone(), bias: true },
            Region { name: "w_xg", range: self.w_xg.clone(), bias: false },
            Region { name: "w_hg", range: self.w_hg.clone(), bias: false },
            Region { name: "b_g", range: self.b_g.clone(), bias: true },
            Region { name: "w_xo", range: self.w_xo.clone(), bias: false },
            Region { name: "w_do", range: self.w_do.clone(), bias: false },
            Region { name: "w_ho", range: self.w_ho.clone(), bias: false },
            Region { name: "w_co", range: self.w_co.clone(), bias: false },
            Region { name: "b_o", range: self.b_o.clone(), bias: true },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Tl1Cache {
    x: f64,
    dt: f64,
    h_prev: Vec<f64>,
    c_in: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    s1: Vec<f64>,
    t1: Vec<f64>,
    g: Vec<f64>,
    c_tilde: Vec<f64>,
    o: Vec<f64>,
    th: Vec<f64>,
}

pub(super) fn tl1_forward(
    p: &[f64],
    x: f64,
    dt: f64,
    h_prev: &[f64],
    c_in: &[f64],
) -> (CellOut, Tl1Cache) {
    let s = h_prev.len();
    let l = Tl1Layout::new(s);

    let mut i = vec![0.0; s];
    axpy(&mut i, x, &p[l.w_xi.clone()]);
    matvec_into(&p[l.w_hi.clone()], s, s, h_prev, &mut i);
    hadamard_acc(&mut i, &p[l.w_ci.clone()], c_in);
    addv(&mut i, &p[l.b_i.clone()]);
    sigmoid_in(&mut i);

    let mut f = vec![0.0; s];
    axpy(&mut f, x, &p[l.w_xf.clone()]);
    matvec_into(&p[l.w_hf.clone()], s, s, h_prev, &mut f);
    hadamard_acc(&mut f, &p[l.w_cf.clone()], c_in);
    addv(&mut f, &p[l.b_f.clone()]);
    sigmoid_in(&mut f);

    let s1: Vec<f64> = p[l.w_t1.clone()].iter().map(|w| sigmoid(dt * w)).collect();
    let mut t1 = s1.clone();
    axpy(&mut t1, x, &p[l.w_xt1.clone()]);
    addv(&mut t1, &p[l.b_t1.clone()]);
    sigmoid_in(&mut t1);

    let mut gc = vec![0.0; s];
    axpy(&mut gc, x, &p[l.w_xg.clone()]);
    matvec_into(&p[l.w_hg.clone()], s, s, h_prev, &mut gc);
    addv(&mut gc, &p[l.b_g.clone()]);
    tanh_in(&mut gc);

    let mut c_tilde = vec![0.0; s];
    for k in 0..s {
        c_tilde[k] = f[k] * c_in[k] + i[k] * t1[k] * gc[k];
    }

    let mut o = vec![0.0; s];
    axpy(&mut o, x, &p[l.w_xo.clone()]);
    axpy(&mut o, dt, &p[l.w_do.clone()]);
    matvec_into(&p[l.w_ho.clone()], s, s, h_prev, &mut o);
    hadamard_acc(&mut o, &p[l.w_co.clone()], &c_tilde);
    addv(&mut o, &p[l.b_o.clone()]);
    sigmoid_in(&mut o);

    let th: Vec<f64> = c_tilde.iter().map(|c| c.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&th).map(|(o, t)| o * t).collect();

    let cache = Tl1Cache {
        x,
        dt,
        h_prev: h_prev.to_vec(),
        c_in: c_in.to_vec(),
        i,
        f,
        s1,
        t1,
        g: gc,
        c_tilde: c_tilde.clone(),
        o,
        th,
    };
    (CellOut { h, c: c_tilde }, cache)
}

pub(super) fn tl1_backward(p: &[f64], cc: &Tl1Cache, dh: &[f64], dc: &[f64], g: &mut [f64]) {
    let s = cc.h_prev.len();
    let l = Tl1Layout::new(s);

    let mut da_o = vec![0.0; s];
    let mut dct = vec![0.0; s];
    for k in 0..s {
        let do_ = dh[k] * cc.th[k];
        da_o[k] = do_ * cc.o[k] * (1.0 - cc.o[k]);
        dct[k] = dc[k]
            + dh[k] * cc.o[k] * (1.0 - cc.th[k] * cc.th[k])
            + da_o[k] * p[l.w_co.clone()][k];
    }

    axpy(&mut g[l.w_xo.clone()], cc.x, &da_o);
    axpy(&mut g[l.w_do.clone()], cc.dt, &da_o);
    outer_acc(&mut g[l.w_ho.clone()], &da_o, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_co.clone()], &da_o, &cc.c_tilde);
    addv(&mut g[l.b_o.clone()], &da_o);

    let mut da_i = vec![0.0; s];
    let mut da_f = vec![0.0; s];
    let mut da_g = vec![0.0; s];
    for k in 0..s {
        let di = dct[k] * cc.t1[k] * cc.g[k];
        let df = dct[k] * cc.c_in[k];
        let dgc = dct[k] * cc.i[k] * cc.t1[k];
        da_i[k] = di * cc.i[k] * (1.0 - cc.i[k]);
        da_f[k] = df * cc.f[k] * (1.0 - cc.f[k]);
        da_g[k] = dgc * (1.0 - cc.g[k] * cc.g[k]);

        let dt1 = dct[k] * cc.i[k] * cc.g[k];
        let da_t1 = dt1 * cc.t1[k] * (1.0 - cc.t1[k]);
        g[l.w_xt1.clone()][k] += cc.x * da_t1;
        g[l.b_t1.clone()][k] += da_t1;
        let du1 = da_t1 * cc.s1[k] * (1.0 - cc.s1[k]);
        g[l.w_t1.clone()][k] += cc.dt * du1;
    }

    axpy(&mut g[l.w_xg.clone()], cc.x, &da_g);
    outer_acc(&mut g[l.w_hg.clone()], &da_g, &cc.h_prev, 1.0);
    addv(&mut g[l.b_g.clone()], &da_g);

    axpy(&mut g[l.w_xi.clone()], cc.x, &da_i);
    outer_acc(&mut g[l.w_hi.clone()], &da_i, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_ci.clone()], &da_i, &cc.c_in);
    addv(&mut g[l.b_i.clone()], &da_i);
    axpy(&mut g[l.w_xf.clone()], cc.x, &da_f);
    outer_acc(&mut g[l.w_hf.clone()], &da_f, &cc.h_prev, 1.0);
    hadamard_acc(&mut g[l.w_cf.clone()], &da_f, &cc.c_in);
    addv(&mut g[l.b_f.clone()], &da_f);
}
