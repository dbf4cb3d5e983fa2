//! The fixed-width comparison model: one LSTM over the full feature
//! vector, fed by online imputation.
//!
//! Unlike the pool, this model needs every feature on every instance, so
//! absent values are filled in from each feature's own history — its last
//! observed value, or the mean of its last few observations. Only real
//! observations enter that history; imputed values never feed back. The
//! model itself is a standard vanilla LSTM with vector input, trained with
//! the same truncated one-step backward and AdamW as the pool.

use std::collections::{BTreeMap, VecDeque};
use std::ops::Range;

use crate::eval::{OnlineModel, StepOutcome, TrainError};
use crate::numerics::{
    adamw_step, init_uniform, matvec_into, outer_acc, sigmoid, softmax_xent, AdamConfig,
    AdamState, SeedRng,
};
use crate::pool::{head_backward_raw, head_forward_raw, head_init, head_len, HeadCache};
use crate::streams::{FeatureId, Instance};

pub const DEFAULT_SINGLE_HIDDEN: usize = 32;
pub const ROLLING_WINDOW: usize = 5;

/// How an absent feature's value is filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImputeMethod {
    /// Last observed value.
    Ffill,
    /// Mean of the last few observed values.
    RollingMean,
}

impl ImputeMethod {
    pub fn name(self) -> &'static str {
        match self {
            ImputeMethod::Ffill => "ffill",
            ImputeMethod::RollingMean => "rolling_mean",
        }
    }

    pub fn parse(name: &str) -> Option<ImputeMethod> {
        match name {
            "ffill" => Some(ImputeMethod::Ffill),
            "rolling_mean" => Some(ImputeMethod::RollingMean),
            _ => None,
        }
    }
}

/// Per-feature observation history: the last value and a bounded window
/// of recent values. Holds only genuinely observed values — fills are
/// never recorded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputerState {
    last: BTreeMap<FeatureId, f64>,
    window: BTreeMap<FeatureId, VecDeque<f64>>,
}

impl ImputerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Densifies one instance to width `n`: present features pass through
    /// and update the history, absent ones are filled from it, and a
    /// feature never observed fills with 0.
    pub fn impute(&mut self, inst: &Instance, n: usize, method: ImputeMethod) -> Vec<f64> {
        let mut dense = vec![0.0; n];
        let mut present = vec![false; n];
        for &(id, x) in &inst.feats {
            let j = id as usize;
            assert!(j < n, "feature {id} outside fixed width {n}");
            dense[j] = x;
            present[j] = true;
            self.last.insert(id, x);
            let window = self.window.entry(id).or_default();
            window.push_back(x);
            if window.len() > ROLLING_WINDOW {
                window.pop_front();
            }
        }
        for j in 0..n {
            if present[j] {
                continue;
            }
            let id = j as FeatureId;
            dense[j] = match method {
                ImputeMethod::Ffill => self.last.get(&id).copied().unwrap_or(0.0),
                ImputeMethod::RollingMean => match self.window.get(&id) {
                    Some(w) if !w.is_empty() => w.iter().sum::<f64>() / w.len() as f64,
                    _ => 0.0,
                },
            };
        }
        dense
    }
}

struct GateLayout {
    w_x: Range<usize>,
    w_h: Range<usize>,
    b: Range<usize>,
}

struct DenseLayout {
    i: GateLayout,
    f: GateLayout,
    g: GateLayout,
    o: GateLayout,
}

impl DenseLayout {
    fn new(n: usize, s: usize) -> Self {
        let mut at = 0;
        let mut gate = || {
            let w_x = at..at + s * n;
            let w_h = w_x.end..w_x.end + s * s;
            let b = w_h.end..w_h.end + s;
            at = b.end;
            GateLayout { w_x, w_h, b }
        };
        DenseLayout { i: gate(), f: gate(), g: gate(), o: gate() }
    }

    fn len(n: usize, s: usize) -> usize {
        4 * (s * n + s * s + s)
    }
}

struct DenseCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    th: Vec<f64>,
}

fn gate_preact(params: &[f64], l: &GateLayout, s: usize, n: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut a = params[l.b.clone()].to_vec();
    matvec_into(&params[l.w_x.clone()], s, n, x, &mut a);
    matvec_into(&params[l.w_h.clone()], s, s, h, &mut a);
    a
}

fn gate_backward(
    grads: &mut [f64],
    l: &GateLayout,
    da: &[f64],
    x: &[f64],
    h_prev: &[f64],
) {
    outer_acc(&mut grads[l.w_x.clone()], da, x, 1.0);
    outer_acc(&mut grads[l.w_h.clone()], da, h_prev, 1.0);
    for (g, &d) in grads[l.b.clone()].iter_mut().zip(da) {
        *g += d;
    }
}

struct SingleComputation {
    loss: f64,
    probs: Vec<f64>,
    h_new: Vec<f64>,
    c_new: Vec<f64>,
    lstm_grads: Vec<f64>,
    head_grads: Vec<f64>,
}

/// A vanilla LSTM over the full fixed-width feature vector plus a
/// two-layer prediction head, trained one truncated step at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleModel {
    pub n_features: usize,
    pub hidden: usize,
    pub classes: usize,
    pub adam: AdamConfig,
    pub params: Vec<f64>,
    pub opt: AdamState,
    pub head: Vec<f64>,
    pub head_opt: AdamState,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub t: u64,
}

impl SingleModel {
    pub fn new(n_features: usize, hidden: usize, classes: usize, adam: AdamConfig, seed: u64) -> Self {
        assert!(n_features > 0 && hidden > 0 && classes >= 2);
        let l = DenseLayout::new(n_features, hidden);
        let mut params = vec![0.0; DenseLayout::len(n_features, hidden)];
        let mut rng = SeedRng::from_seed(seed).fork(0);
        for gate in [&l.i, &l.f, &l.g, &l.o] {
            init_uniform(&mut params[gate.w_x.clone()], n_features, &mut rng);
            init_uniform(&mut params[gate.w_h.clone()], hidden, &mut rng);
        }
        let mut head = vec![0.0; head_len(hidden, hidden, classes)];
        let mut head_rng = SeedRng::from_seed(seed).fork(1);
        head_init(&mut head, hidden, hidden, classes, &mut head_rng);
        SingleModel {
            n_features,
            hidden,
            classes,
            adam,
            opt: AdamState::new(params.len()),
            params,
            head_opt: AdamState::new(head.len()),
            head,
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
            t: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len() + self.head.len()
    }

    fn lstm_forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, DenseCache) {
        let (n, s) = (self.n_features, self.hidden);
        assert_eq!(x.len(), n, "input width mismatch");
        let l = DenseLayout::new(n, s);
        let mut i = gate_preact(&self.params, &l.i, s, n, x, &self.h);
        let mut f = gate_preact(&self.params, &l.f, s, n, x, &self.h);
        let mut g = gate_preact(&self.params, &l.g, s, n, x, &self.h);
        let mut o = gate_preact(&self.params, &l.o, s, n, x, &self.h);
        for e in 0..s {
            i[e] = sigmoid(i[e]);
            f[e] = sigmoid(f[e]);
            g[e] = g[e].tanh();
            o[e] = sigmoid(o[e]);
        }
        let c_new: Vec<f64> =
            (0..s).map(|e| f[e] * self.c[e] + i[e] * g[e]).collect();
        let th: Vec<f64> = c_new.iter().map(|&v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..s).map(|e| o[e] * th[e]).collect();
        let cache = DenseCache {
            x: x.to_vec(),
            h_prev: self.h.clone(),
            c_prev: self.c.clone(),
            i,
            f,
            g,
            o,
            th,
        };
        (h_new, c_new, cache)
    }

    fn lstm_backward(&self, cache: &DenseCache, dh: &[f64], grads: &mut [f64]) {
        let (n, s) = (self.n_features, self.hidden);
        let l = DenseLayout::new(n, s);
        let mut da_i = vec![0.0; s];
        let mut da_f = vec![0.0; s];
        let mut da_g = vec![0.0; s];
        let mut da_o = vec![0.0; s];
        for e in 0..s {
            let o = cache.o[e];
            let th = cache.th[e];
            da_o[e] = dh[e] * th * o * (1.0 - o);
            let dc = dh[e] * o * (1.0 - th * th);
            let i = cache.i[e];
            let f = cache.f[e];
            let g = cache.g[e];
            da_i[e] = dc * g * i * (1.0 - i);
            da_f[e] = dc * cache.c_prev[e] * f * (1.0 - f);
            da_g[e] = dc * i * (1.0 - g * g);
        }
        gate_backward(grads, &l.i, &da_i, &cache.x, &cache.h_prev);
        gate_backward(grads, &l.f, &da_f, &cache.x, &cache.h_prev);
        gate_backward(grads, &l.g, &da_g, &cache.x, &cache.h_prev);
        gate_backward(grads, &l.o, &da_o, &cache.x, &cache.h_prev);
    }

    fn head_forward(&self, input: Vec<f64>) -> (Vec<f64>, HeadCache) {
        head_forward_raw(&self.head, self.hidden, self.hidden, self.classes, input)
    }

    /// Pure loss-and-gradients computation for one dense input; no state
    /// changes.
    fn compute_step(&self, x: &[f64], label: u8) -> SingleComputation {
        let (h_new, c_new, cache) = self.lstm_forward(x);
        let (logits, head_cache) = self.head_forward(h_new.clone());
        let (loss, probs, dlogits) = softmax_xent(&logits, label as usize);
        let mut head_grads = vec![0.0; self.head.len()];
        let mut dh = vec![0.0; self.hidden];
        head_backward_raw(
            &self.head,
            self.hidden,
            self.hidden,
            self.classes,
            &head_cache,
            &dlogits,
            &mut head_grads,
            &mut dh,
        );
        let mut lstm_grads = vec![0.0; self.params.len()];
        self.lstm_backward(&cache, &dh, &mut lstm_grads);
        SingleComputation { loss, probs, h_new, c_new, lstm_grads, head_grads }
    }

    /// One online step on an already-imputed dense vector: predict,
    /// backpropagate one truncated step, update with AdamW, carry the
    /// recurrent state forward. The returned probabilities are the
    /// pre-update prediction.
    pub fn train_step(&mut self, x: &[f64], label: u8) -> Result<(f64, Vec<f64>), TrainError> {
        assert!((label as usize) < self.classes, "label {label} out of range");
        let comp = self.compute_step(x, label);
        if !comp.loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { t: self.t, loss: comp.loss });
        }
        let adam = self.adam;
        adamw_step(&mut self.params, &comp.lstm_grads, &mut self.opt, &adam);
        adamw_step(&mut self.head, &comp.head_grads, &mut self.head_opt, &adam);
        self.h = comp.h_new;
        self.c = comp.c_new;
        self.t += 1;
        Ok((comp.loss, comp.probs))
    }
}

/// The full baseline pipeline: impute to a dense vector, then one step of
/// the fixed-width model. Normalization, when wanted, wraps this from the
/// outside so imputation happens in normalized space.
pub struct ImputingSingle {
    pub imputer: ImputerState,
    pub method: ImputeMethod,
    pub model: SingleModel,
}

impl ImputingSingle {
    pub fn new(model: SingleModel, method: ImputeMethod) -> Self {
        ImputingSingle { imputer: ImputerState::new(), method, model }
    }
}

impl OnlineModel for ImputingSingle {
    fn step(&mut self, inst: &Instance) -> Result<StepOutcome, TrainError> {
        let dense = self.imputer.impute(inst, self.model.n_features, self.method);
        let (_, probs) = self.model.train_step(&dense, inst.label)?;
        Ok(StepOutcome::from_probs(&probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, grad_close};
    use crate::streams::{mask_bernoulli, DenseRecord};
    use approx::assert_relative_eq;

    fn inst(t: u64, feats: Vec<(FeatureId, f64)>) -> Instance {
        Instance::new(t, feats, 0)
    }

    #[test]
    fn impute_hand_cases() {
        let mut state = ImputerState::new();
        state.impute(&inst(0, vec![(0, 5.0)]), 3, ImputeMethod::Ffill);
        let dense = state.impute(&inst(1, vec![(2, 1.0)]), 3, ImputeMethod::Ffill);
        assert_eq!(dense, vec![5.0, 0.0, 1.0]);

        let mut state = ImputerState::new();
        for (t, v) in [1.0, 2.0, 3.0].iter().enumerate() {
            state.impute(&inst(t as u64, vec![(0, *v)]), 2, ImputeMethod::RollingMean);
        }
        let dense = state.impute(&inst(3, vec![]), 2, ImputeMethod::RollingMean);
        assert_relative_eq!(dense[0], 2.0, max_relative = 1e-12);
        assert_eq!(dense[1], 0.0, "never observed fills with zero");
    }

    #[test]
    fn rolling_window_keeps_last_five() {
        let mut state = ImputerState::new();
        for t in 0..7 {
            state.impute(&inst(t, vec![(0, t as f64)]), 1, ImputeMethod::RollingMean);
        }
        let dense = state.impute(&inst(7, vec![]), 1, ImputeMethod::RollingMean);
        assert_relative_eq!(dense[0], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn imputed_values_never_enter_history() {
        let mut state = ImputerState::new();
        state.impute(&inst(0, vec![(0, 2.0)]), 1, ImputeMethod::RollingMean);
        state.impute(&inst(1, vec![]), 1, ImputeMethod::RollingMean);
        state.impute(&inst(2, vec![]), 1, ImputeMethod::RollingMean);
        let dense = state.impute(&inst(3, vec![]), 1, ImputeMethod::RollingMean);
        assert_eq!(dense[0], 2.0, "window still holds the single real observation");
        assert_eq!(state.window[&0].len(), 1);
        assert_eq!(state.last[&0], 2.0);
    }

    #[test]
    fn full_masking_probability_makes_methods_identical() {
        let records: Vec<DenseRecord> = (0..30)
            .map(|t| DenseRecord {
                values: (0..4).map(|j| (t * 4 + j) as f64 * 0.1).collect(),
                label: (t % 2) as u8,
            })
            .collect();
        let stream = mask_bernoulli(&records, 1.0, 3);
        let mut a = ImputerState::new();
        let mut b = ImputerState::new();
        for i in &stream {
            let da = a.impute(i, 4, ImputeMethod::Ffill);
            let db = b.impute(i, 4, ImputeMethod::RollingMean);
            assert_eq!(da, db);
        }
    }

    #[test]
    fn zeroed_head_gives_ln2_loss() {
        let mut model = SingleModel::new(4, 5, 2, AdamConfig::with_lr(0.01), 3);
        model.head.iter_mut().for_each(|p| *p = 0.0);
        let (loss, probs) = model.train_step(&[0.5, -0.5, 0.1, 0.9], 1).unwrap();
        assert_relative_eq!(loss, 0.6931471805599453, max_relative = 1e-15);
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn recurrent_state_carries_across_instances() {
        let mut model = SingleModel::new(3, 5, 2, AdamConfig::with_lr(0.01), 9);
        assert!(model.h.iter().all(|&v| v == 0.0));
        model.train_step(&[0.5, 0.2, -0.1], 0).unwrap();
        assert!(model.h.iter().any(|&v| v != 0.0));
        let h_after_one = model.h.clone();
        model.train_step(&[0.1, -0.6, 0.4], 1).unwrap();
        assert_ne!(model.h, h_after_one);
        assert_eq!(model.t, 2);
        assert_eq!(model.opt.step, 2);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = SingleModel::new(4, 5, 2, AdamConfig::with_lr(0.01), 30);
        model.train_step(&[0.3, -0.2, 0.8, 0.05], 0).unwrap();
        model.train_step(&[-0.4, 0.6, 0.0, 0.35], 1).unwrap();
        let x = [0.25, -0.75, 0.5, -0.1];
        let label = 1u8;
        let comp = model.compute_step(&x, label);

        let mut params = std::mem::take(&mut model.params);
        let numeric = finite_diff_grad(&mut params, 1e-5, |p| {
            model.params = p.to_vec();
            let loss = model.compute_step(&x, label).loss;
            model.params = Vec::new();
            loss
        });
        model.params = params;
        for (idx, (&a, &n)) in comp.lstm_grads.iter().zip(&numeric).enumerate() {
            assert!(grad_close(a, n, 1e-4, 1e-7), "lstm grad {idx}: {a} vs {n}");
        }

        let mut head = std::mem::take(&mut model.head);
        let numeric = finite_diff_grad(&mut head, 1e-5, |p| {
            model.head = p.to_vec();
            let loss = model.compute_step(&x, label).loss;
            model.head = Vec::new();
            loss
        });
        model.head = head;
        for (idx, (&a, &n)) in comp.head_grads.iter().zip(&numeric).enumerate() {
            assert!(grad_close(a, n, 1e-4, 1e-7), "head grad {idx}: {a} vs {n}");
        }
    }

    #[test]
    fn pipeline_is_deterministic_per_seed() {
        let records: Vec<DenseRecord> = (0..40)
            .map(|t| DenseRecord {
                values: (0..5).map(|j| ((t + j) % 7) as f64 - 3.0).collect(),
                label: ((t * 3) % 2) as u8,
            })
            .collect();
        let stream = mask_bernoulli(&records, 0.6, 8);
        let run = |seed| {
            let model = SingleModel::new(5, 6, 2, AdamConfig::with_lr(0.01), seed);
            let mut pipe = ImputingSingle::new(model, ImputeMethod::Ffill);
            stream
                .iter()
                .map(|i| pipe.step(i).unwrap().score.to_bits())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn census_matches_closed_form() {
        let model = SingleModel::new(10, 32, 2, AdamConfig::default(), 0);
        let lstm = 4 * (32 * 10 + 32 * 32 + 32);
        let head = 32 * 32 + 32 + 32 * 2 + 2;
        assert_eq!(model.param_count(), lstm + head);
    }
}
