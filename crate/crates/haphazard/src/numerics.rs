//! Dense numeric kernels shared by the cells, the pool head, and the
//! baselines: matrix-vector products, activations, a softmax cross-entropy
//! head, AdamW, fan-in scaled initialization, and central finite differences
//! for gradient checking.
//!
//! Everything is `f64`. Shapes are validated with assertions: a mismatch is a
//! programming error in this crate, not a recoverable condition.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-major dense matrix of `f64`.
///
/// Invariant: `data.len() == rows * cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length must be rows*cols");
        Mat64 { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        matvec_into(&self.data, self.rows, self.cols, x, &mut out);
        out
    }
}

/// `out += w * x` where `w` is row-major `rows x cols`.
pub fn matvec_into(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    assert_eq!(w.len(), rows * cols, "weight slice length must be rows*cols");
    assert_eq!(x.len(), cols, "input length must match matrix columns");
    assert_eq!(out.len(), rows, "output length must match matrix rows");
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o += acc;
    }
}

/// `out += w^T * y` where `w` is row-major `rows x cols`; propagates a
/// gradient back through a matrix-vector product.
pub fn matvec_t_into(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    assert_eq!(w.len(), rows * cols, "weight slice length must be rows*cols");
    assert_eq!(y.len(), rows, "input length must match matrix rows");
    assert_eq!(out.len(), cols, "output length must match matrix columns");
    for (r, yv) in y.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += wv * yv;
        }
    }
}

/// `w += scale * outer(y, x)`, accumulating the gradient of a matrix used as
/// `y = w * x`.
pub fn outer_acc(w: &mut [f64], y: &[f64], x: &[f64], scale: f64) {
    assert_eq!(w.len(), y.len() * x.len(), "weight slice length must be rows*cols");
    for (r, yv) in y.iter().enumerate() {
        let row = &mut w[r * x.len()..(r + 1) * x.len()];
        for (wv, xv) in row.iter_mut().zip(x) {
            *wv += scale * yv * xv;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Numerically stable softmax followed by cross-entropy against `label`.
///
/// Returns `(loss, probs, dlogits)` where `dlogits = probs - onehot(label)`
/// is the gradient of the loss with respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range for {} logits", logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let loss = sum.ln() + max - logits[label];
    let mut dlogits = probs.clone();
    dlogits[label] -= 1.0;
    (loss, probs, dlogits)
}

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First/second moment buffers plus the step counter for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One AdamW update: moments with bias correction, then the decoupled decay
/// term `lr * weight_decay * theta` subtracted separately from the adaptive
/// step.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "gradient length must match parameters");
    assert_eq!(params.len(), state.m.len(), "optimizer state length must match parameters");
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
    }
}

/// Fills `params` with draws from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform(params: &mut [f64], fan_in: usize, rng: &mut SeedRng) {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = 1.0 / (fan_in as f64).sqrt();
    for p in params.iter_mut() {
        *p = rng.uniform(-bound, bound);
    }
}

/// Central-difference gradient of `f` at `params`, one coordinate at a time,
/// with a step of `eps * (1 + |theta_i|)`.
pub fn finite_diff_grad<F>(params: &mut [f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        let h = eps * (1.0 + orig.abs());
        params[i] = orig + h;
        let up = f(params);
        params[i] = orig - h;
        let down = f(params);
        params[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Checks one analytic/numeric gradient pair: passes when
/// `|a - n| <= abs_floor + rel_tol * max(|a|, |n|)`.
pub fn grad_close(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
    (analytic - numeric).abs() <= abs_floor + rel_tol * analytic.abs().max(numeric.abs())
}

/// Deterministic, platform-stable generator (ChaCha8) behind the few draws
/// this crate needs.
#[derive(Debug, Clone)]
pub struct SeedRng(ChaCha8Rng);

impl SeedRng {
    pub fn from_seed(seed: u64) -> Self {
        SeedRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Same seed, independent stream: deterministic derivation of unrelated
    /// generators (model init vs. masking vs. data shuffling) from one run
    /// seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut forked = ChaCha8Rng::from_seed(self.0.get_seed());
        forked.set_stream(stream);
        SeedRng(forked)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    /// Uniform draw in `[0, 1)`, the shape masking and sampling decisions use.
    pub fn unit(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Serializable position: (seed, stream, word position).
    pub fn state(&self) -> ([u8; 32], u64, u128) {
        (self.0.get_seed(), self.0.get_stream(), self.0.get_word_pos())
    }

    pub fn restore(seed: [u8; 32], stream: u64, word_pos: u128) -> Self {
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        SeedRng(rng)
    }
}
