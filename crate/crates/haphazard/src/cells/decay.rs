//! Standard LSTM cells, with and without hidden-state decay.
//!
//! The decay variant shrinks the previous hidden state by
//! `exp(-max(0, dt * w + b))` before any gate reads it, so a feature that
//! has been absent for a long stretch contributes little of its stale
//! state. The vanilla variant is the same cell with the decay fixed at 1.
//! Neither uses peepholes or a direct time term in the output gate, and the
//! hidden state reads the freshly updated memory.

use std::ops::Range;

use super::ops::{addv, axpy, sigmoid_in, tanh_in, Cursor};
use super::{CellOut, Region};
use crate::numerics::{matvec_into, matvec_t_into, outer_acc};

pub(super) struct DecayLayout {
    pub w_decay: Range<usize>,
    pub b_decay: Range<usize>,
    pub w_xi: Range<usize>,
    pub w_hi: Range<usize>,
    pub b_i: Range<usize>,
    pub w_xf: Range<usize>,
    pub w_hf: Range<usize>,
    pub b_f: Range<usize>,
    pub w_xc: Range<usize>,
    pub w_hc: Range<usize>,
    pub b_c: Range<usize>,
    pub w_xo: Range<usize>,
    pub w_ho: Range<usize>,
    pub b_o: Range<usize>,
}

impl DecayLayout {
    pub fn new(s: usize) -> Self {
        let mut c = Cursor::new();
        DecayLayout {
            w_decay: c.take(s),
            b_decay: c.take(s),
            w_xi: c.take(s),
            w_hi: c.take(s * s),
            b_i: c.take(s),
            w_xf: c.take(s),
            w_hf: c.take(s * s),
            b_f: c.take(s),
            w_xc: c.take(s),
            w_hc: c.take(s * s),
            b_c: c.take(s),
            w_xo: c.take(s),
            w_ho: c.take(s * s),
            b_o: c.take(s),
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        vec![
            Region { name: "w_decay", range: self.w_decay.clone(), bias: false },
            Region { name: "b_decay", range: self.b_decay.clone(), bias: true },
            Region { name: "w_xi", range: self.w_xi.clone(), bias: false },
            Region { name: "w_hi", range: self.w_hi.clone(), bias: false },
            Region { name: "b_i", range: self.b_i.clone(), bias: true },
            Region { name: "w_xf", range: self.w_xf.clone(), bias: false },
            Region { name: "w_hf", range: self.w_hf.clone(), bias: false },
            Region { name: "b_f", range: self.b_f.clone(), bias: true },
            Region { name: "w_xc", range: self.w_xc.clone(), bias: false },
            Region { name: "w_hc", range: self.w_hc.clone(), bias: false },
            Region { name: "b_c", range: self.b_c.clone(), bias: true },
            Region { name: "w_xo", range: self.w_xo.clone(), bias: false },
            Region { name: "w_ho", range: self.w_ho.clone(), bias: false },
            Region { name: "b_o", range: self.b_o.clone(), bias: true },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DecayCache {
    x: f64,
    dt: f64,
    h_prev: Vec<f64>,
    c_in: Vec<f64>,
    /// Decay pre-activation `dt * w + b`, kept for the hinge gradient.
    z: Vec<f64>,
    pub(super) gamma: Vec<f64>,
    h_eff: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
}

pub(super) fn decay_forward(
    p: &[f64],
    x: f64,
    dt: f64,
    h_prev: &[f64],
    c_in: &[f64],
) -> (CellOut, DecayCache) {
    let s = h_prev.len();
    let l = DecayLayout::new(s);

    let z: Vec<f64> = p[l.w_decay.clone()]
        .iter()
        .zip(&p[l.b_decay.clone()])
        .map(|(w, b)| dt * w + b)
        .collect();
    let gamma: Vec<f64> = z.iter().map(|z| (-z.max(0.0)).exp()).collect();
    let h_eff: Vec<f64> = gamma.iter().zip(h_prev).map(|(g, h)| g * h).collect();

    let (out, core) = lstm_core(
        p, &l, x, &h_eff, c_in,
    );
    let cache = DecayCache {
        x,
        dt,
        h_prev: h_prev.to_vec(),
        c_in: c_in.to_vec(),
        z,
        gamma,
        h_eff,
        i: core.i,
        f: core.f,
        g: core.g,
        o: core.o,
        tc: core.tc,
    };
    (out, cache)
}

pub(super) fn decay_backward(p: &[f64], cc: &DecayCache, dh: &[f64], dc: &[f64], g: &mut [f64]) {
    let s = cc.h_prev.len();
    let l = DecayLayout::new(s);
    let core = CoreCache { i: &cc.i, f: &cc.f, g: &cc.g, o: &cc.o, tc: &cc.tc };
    let dh_eff = lstm_core_backward(p, &l, cc.x, &cc.h_eff, &cc.c_in, &core, dh, dc, g, true);

    for k in 0..s {
        let dgamma = dh_eff[k] * cc.h_prev[k];
        if cc.z[k] > 0.0 {
            let dz = -dgamma * cc.gamma[k];
            g[l.w_decay.clone()][k] += cc.dt * dz;
            g[l.b_decay.clone()][k] += dz;
        }
    }
}

pub(super) struct VanillaLayout {
    pub w_xi: Range<usize>,
    pub w_hi: Range<usize>,
    pub b_i: Range<usize>,
    pub w_xf: Range<usize>,
    pub w_hf: Range<usize>,
    pub b_f: Range<usize>,
    pub w_xc: Range<usize>,
    pub w_hc: Range<usize>,
    pub b_c: Range<usize>,
    pub w_xo: Range<usize>,
    pub w_ho: Range<usize>,
    pub b_o: Range<usize>,
}

impl VanillaLayout {
    pub fn new(s: usize) -> Self {
        let mut c = Cursor::new();
        VanillaLayout {
            w_xi: c.take(s),
            w_hi: c.take(s * s),
            b_i: c.take(s),
            w_xf: c.take(s),
            w_hf: c.take(s * s),
            b_f: c.take(s),
            w_xc: c.take(s),
            w_hc: c.take(s * s),
            b_c: c.take(s),
            w_xo: c.take(s),
            w_ho: c.take(s * s),
            b_o: c.take(s),
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        vec![
            Region { name: "w_xi", range: self.w_xi.clone(), bias: false },
            Region { name: "w_hi", range: self.w_hi.clone(), bias: false },
            Region { name: "b_i", range: self.b_i.clone(), bias: true },
            Region { name: "w_xf", range: self.w_xf.clone(), bias: false },
            Region { name: "w_hf", range: self.w_hf.clone(), bias: false },
            Region { name: "b_f", range: self.b_f.clone(), bias: true },
            Region { name: "w_xc", range: self.w_xc.clone(), bias: false },
            Region { name: "w_hc", range: self.w_hc.clone(), bias: false },
            Region { name: "b_c", range: self.b_c.clone(), bias: true },
            Region { name: "w_xo", range: self.w_xo.clone(), bias: false },
            Region { name: "w_ho", range: self.w_ho.clone(), bias: false },
            Region { name: "b_o", range: self.b_o.clone(), bias: true },
        ]
    }

    fn as_gate_layout(&self) -> DecayLayout {
        DecayLayout {
            w_decay: 0..0,
            b_decay: 0..0,
            w_xi: self.w_xi.clone(),
            w_hi: self.w_hi.clone(),
            b_i: self.b_i.clone(),
            w_xf: self.w_xf.clone(),
            w_hf: self.w_hf.clone(),
            b_f: self.b_f.clone(),
            w_xc: self.w_xc.clone(),
            w_hc: self.w_hc.clone(),
            b_c: self.b_c.clone(),
            w_xo: self.w_xo.clone(),
            w_ho: self.w_ho.clone(),
            b_o: self.b_o.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VanillaCache {
    x: f64,
    h_prev: Vec<f64>,
    c_in: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
}

pub(super) fn vanilla_forward(
    p: &[f64],
    x: f64,
    h_prev: &[f64],
    c_in: &[f64],
) -> (CellOut, VanillaCache) {
    let s = h_prev.len();
    let l = VanillaLayout::new(s).as_gate_layout();
    let (out, core) = lstm_core(p, &l, x, h_prev, c_in);
    let cache = VanillaCache {
        x,
        h_prev: h_prev.to_vec(),
        c_in: c_in.to_vec(),
        i: core.i,
        f: core.f,
        g: core.g,
        o: core.o,
        tc: core.tc,
    };
    (out, cache)
}

pub(super) fn vanilla_backward(p: &[f64], cc: &VanillaCache, dh: &[f64], dc: &[f64], g: &mut [f64]) {
    let s = cc.h_prev.len();
    let l = VanillaLayout::new(s).as_gate_layout();
    let core = CoreCache { i: &cc.i, f: &cc.f, g: &cc.g, o: &cc.o, tc: &cc.tc };
    lstm_core_backward(p, &l, cc.x, &cc.h_prev, &cc.c_in, &core, dh, dc, g, false);
}

struct CoreOut {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
}

struct CoreCache<'a> {
    i: &'a [f64],
    f: &'a [f64],
    g: &'a [f64],
    o: &'a [f64],
    tc: &'a [f64],
}

/// Gate/memory body shared by the decay and vanilla variants. `h_eff` is the
/// (possibly decayed) previous hidden state every gate reads.
fn lstm_core(p: &[f64], l: &DecayLayout, x: f64, h_eff: &[f64], c_in: &[f64]) -> (CellOut, CoreOut) {
    let s = h_eff.len();

    let mut i = vec![0.0; s];
    axpy(&mut i, x, &p[l.w_xi.clone()]);
    matvec_into(&p[l.w_hi.clone()], s, s, h_eff, &mut i);
    addv(&mut i, &p[l.b_i.clone()]);
    sigmoid_in(&mut i);

    let mut f = vec![0.0; s];
    axpy(&mut f, x, &p[l.w_xf.clone()]);
    matvec_into(&p[l.w_hf.clone()], s, s, h_eff, &mut f);
    addv(&mut f, &p[l.b_f.clone()]);
    sigmoid_in(&mut f);

    let mut g = vec![0.0; s];
    axpy(&mut g, x, &p[l.w_xc.clone()]);
    matvec_into(&p[l.w_hc.clone()], s, s, h_eff, &mut g);
    addv(&mut g, &p[l.b_c.clone()]);
    tanh_in(&mut g);

    let mut o = vec![0.0; s];
    axpy(&mut o, x, &p[l.w_xo.clone()]);
    matvec_into(&p[l.w_ho.clone()], s, s, h_eff, &mut o);
    addv(&mut o, &p[l.b_o.clone()]);
    sigmoid_in(&mut o);

    let c_new: Vec<f64> = (0..s).map(|k| f[k] * c_in[k] + i[k] * g[k]).collect();
    let tc: Vec<f64> = c_new.iter().map(|c| c.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tc).map(|(o, t)| o * t).collect();

    (CellOut { h, c: c_new }, CoreOut { i, f, g, o, tc })
}

/// Backward of [`lstm_core`]. Returns the gradient with respect to `h_eff`
/// when `need_dh_eff` is set (the decay path needs it; the vanilla path
/// treats its previous hidden state as a constant).
#[allow(clippy::too_many_arguments)]
fn lstm_core_backward(
    p: &[f64],
    l: &DecayLayout,
    x: f64,
    h_eff: &[f64],
    c_in: &[f64],
    cc: &CoreCache<'_>,
    dh: &[f64],
    dc: &[f64],
    grads: &mut [f64],
    need_dh_eff: bool,
) -> Vec<f64> {
    let s = h_eff.len();

    let mut da_i = vec![0.0; s];
    let mut da_f = vec![0.0; s];
    let mut da_c = vec![0.0; s];
    let mut da_o = vec![0.0; s];
    for k in 0..s {
        let do_ = dh[k] * cc.tc[k];
        da_o[k] = do_ * cc.o[k] * (1.0 - cc.o[k]);
        let dc_total = dc[k] + dh[k] * cc.o[k] * (1.0 - cc.tc[k] * cc.tc[k]);
        let di = dc_total * cc.g[k];
        let df = dc_total * c_in[k];
        let dg = dc_total * cc.i[k];
        da_i[k] = di * cc.i[k] * (1.0 - cc.i[k]);
        da_f[k] = df * cc.f[k] * (1.0 - cc.f[k]);
        da_c[k] = dg * (1.0 - cc.g[k] * cc.g[k]);
    }

    axpy(&mut grads[l.w_xi.clone()], x, &da_i);
    outer_acc(&mut grads[l.w_hi.clone()], &da_i, h_eff, 1.0);
    addv(&mut grads[l.b_i.clone()], &da_i);
    axpy(&mut grads[l.w_xf.clone()], x, &da_f);
    outer_acc(&mut grads[l.w_hf.clone()], &da_f, h_eff, 1.0);
    addv(&mut grads[l.b_f.clone()], &da_f);
    axpy(&mut grads[l.w_xc.clone()], x, &da_c);
    outer_acc(&mut grads[l.w_hc.clone()], &da_c, h_eff, 1.0);
    addv(&mut grads[l.b_c.clone()], &da_c);
    axpy(&mut grads[l.w_xo.clone()], x, &da_o);
    outer_acc(&mut grads[l.w_ho.clone()], &da_o, h_eff, 1.0);
    addv(&mut grads[l.b_o.clone()], &da_o);

    let mut dh_eff = vec![0.0; s];
    if need_dh_eff {
        matvec_t_into(&p[l.w_hi.clone()], s, s, &da_i, &mut dh_eff);
        matvec_t_into(&p[l.w_hf.clone()], s, s, &da_f, &mut dh_eff);
        matvec_t_into(&p[l.w_hc.clone()], s, s, &da_c, &mut dh_eff);
        matvec_t_into(&p[l.w_ho.clone()], s, s, &da_o, &mut dh_eff);
    }
    dh_eff
}
