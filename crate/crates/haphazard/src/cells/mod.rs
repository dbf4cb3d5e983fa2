//! Per-feature recurrent cells.
//!
//! Each observed feature owns one cell. A cell consumes the feature's scalar
//! value `x`, the elapsed time `dt` since the feature was last observed, the
//! cell's own previous hidden state, and the shared long-term memory carried
//! over from the previous instance. It emits a fresh hidden state `h` and a
//! fresh long-term memory `c`.
//!
//! Seven kinds are supported. The three time-gated LSTMs consume `dt`
//! through sigmoid time gates, the decay LSTM through an exponential decay
//! on the previous hidden state, and the remaining kinds ignore `dt`. The
//! GRU and plain RNN keep no long-term memory; they report their hidden
//! state as both outputs so the pool can aggregate them uniformly.
//!
//! Training is truncated to depth one: the previous hidden state and the
//! carried-in memory are constants in the backward pass, so
//! [`cell_backward`] produces parameter gradients only.
//!
//! Parameters for a cell live in one flat `Vec<f64>`; each kind defines a
//! fixed region layout (see the per-kind `Layout` types). Every weight
//! region is initialized from `U(-1/sqrt(s), 1/sqrt(s))` where `s` is the
//! hidden width, and every bias region starts at zero.

mod decay;
mod ops;
mod simple;
mod time;

use std::fmt;
use std::ops::Range;

use crate::numerics::{finite_diff_grad, grad_close, init_uniform, SeedRng};

/// Which recurrent cell runs inside each feature slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    /// Time-gated LSTM with two time gates and separate short/long-term
    /// memory updates; the hidden state reads the short-term memory.
    TimeLstm3,
    /// Like [`CellKind::TimeLstm3`] plus an explicit forget gate in both
    /// memory updates.
    TimeLstm2,
    /// Single time gate, single candidate; short- and long-term memory
    /// coincide.
    TimeLstm1,
    /// Standard LSTM whose previous hidden state is shrunk by
    /// `exp(-max(0, dt*w + b))` before the gates read it.
    DecayLstm,
    /// Standard LSTM; ignores `dt`.
    VanillaLstm,
    /// Gated recurrent unit; no long-term memory, ignores `dt`.
    Gru,
    /// Plain tanh recurrence; no gates, no long-term memory, ignores `dt`.
    Rnn,
}

/// All kinds, in the order used by reports and exhaustive checks.
pub const ALL_KINDS: [CellKind; 7] = [
    CellKind::TimeLstm3,
    CellKind::TimeLstm2,
    CellKind::TimeLstm1,
    CellKind::DecayLstm,
    CellKind::VanillaLstm,
    CellKind::Gru,
    CellKind::Rnn,
];

impl CellKind {
    /// Stable identifier used in config files and reports.
    pub fn name(self) -> &'static str {
        match self {
            CellKind::TimeLstm3 => "time_lstm3",
            CellKind::TimeLstm2 => "time_lstm2",
            CellKind::TimeLstm1 => "time_lstm1",
            CellKind::DecayLstm => "decay_lstm",
            CellKind::VanillaLstm => "vanilla_lstm",
            CellKind::Gru => "gru",
            CellKind::Rnn => "rnn",
        }
    }

    pub fn parse(name: &str) -> Option<CellKind> {
        ALL_KINDS.iter().copied().find(|k| k.name() == name)
    }

    /// Whether the cell keeps a long-term memory distinct from its hidden
    /// state. When false the pool aggregates the hidden state in both roles.
    pub fn has_memory(self) -> bool {
        !matches!(self, CellKind::Gru | CellKind::Rnn)
    }

    /// Whether the cell consumes the elapsed time since the feature was
    /// last observed.
    pub fn uses_time_gap(self) -> bool {
        matches!(
            self,
            CellKind::TimeLstm3 | CellKind::TimeLstm2 | CellKind::TimeLstm1 | CellKind::DecayLstm
        )
    }

    /// Number of parameters for hidden width `s`.
    pub fn param_count(self, s: usize) -> usize {
        regions(self, s).iter().map(|r| r.range.len()).sum()
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One named span of a cell's flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: &'static str,
    pub range: Range<usize>,
    pub bias: bool,
}

/// The parameter map of `kind` at hidden width `s`, in layout order.
pub fn regions(kind: CellKind, s: usize) -> Vec<Region> {
    match kind {
        CellKind::TimeLstm3 => time::Tl3Layout::new(s).regions(),
        CellKind::TimeLstm2 => time::Tl2Layout::new(s).regions(),
        CellKind::TimeLstm1 => time::Tl1Layout::new(s).regions(),
        CellKind::DecayLstm => decay::DecayLayout::new(s).regions(),
        CellKind::VanillaLstm => decay::VanillaLayout::new(s).regions(),
        CellKind::Gru => simple::GruLayout::new(s).regions(),
        CellKind::Rnn => simple::RnnLayout::new(s).regions(),
    }
}

/// Fresh parameters: weights `U(-1/sqrt(s), 1/sqrt(s))`, biases zero.
pub fn init_cell(kind: CellKind, s: usize, rng: &mut SeedRng) -> Vec<f64> {
    let mut params = vec![0.0; kind.param_count(s)];
    for region in regions(kind, s) {
        if !region.bias {
            init_uniform(&mut params[region.range], s, rng);
        }
    }
    params
}

/// Outputs of one cell step. For kinds without a long-term memory `c` is a
/// copy of `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOut {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Saved intermediates from a forward step, consumed by [`cell_backward`].
#[derive(Debug, Clone)]
pub enum CellCache {
    Tl3(time::Tl3Cache),
    Tl2(time::Tl2Cache),
    Tl1(time::Tl1Cache),
    Decay(decay::DecayCache),
    Vanilla(decay::VanillaCache),
    Gru(simple::GruCache),
    Rnn(simple::RnnCache),
}

/// Runs one cell step.
///
/// `x` is the normalized feature value, `dt` the elapsed time since this
/// feature was last observed (0.0 on first observation), `h_prev` the cell's
/// stored hidden state, and `c_in` the shared long-term memory from the
/// previous instance. `h_prev` and `c_in` must both have length `s`;
/// `params` must have exactly `kind.param_count(s)` entries.
pub fn cell_forward(
    kind: CellKind,
    params: &[f64],
    x: f64,
    dt: f64,
    h_prev: &[f64],
    c_in: &[f64],
) -> (CellOut, CellCache) {
    let s = h_prev.len();
    assert_eq!(c_in.len(), s, "c_in length must match hidden width");
    assert_eq!(
        params.len(),
        kind.param_count(s),
        "parameter vector length must match {kind} at width {s}"
    );
    match kind {
        CellKind::TimeLstm3 => {
            let (out, cache) = time::tl3_forward(params, x, dt, h_prev, c_in);
            (out, CellCache::Tl3(cache))
        }
        CellKind::TimeLstm2 => {
            let (out, cache) = time::tl2_forward(params, x, dt, h_prev, c_in);
            (out, CellCache::Tl2(cache))
        }
        CellKind::TimeLstm1 => {
            let (out, cache) = time::tl1_forward(params, x, dt, h_prev, c_in);
            (out, CellCache::Tl1(cache))
        }
        CellKind::DecayLstm => {
            let (out, cache) = decay::decay_forward(params, x, dt, h_prev, c_in);
            (out, CellCache::Decay(cache))
        }
        CellKind::VanillaLstm => {
            let (out, cache) = decay::vanilla_forward(params, x, h_prev, c_in);
            (out, CellCache::Vanilla(cache))
        }
        CellKind::Gru => {
            let (out, cache) = simple::gru_forward(params, x, h_prev);
            (out, CellCache::Gru(cache))
        }
        CellKind::Rnn => {
            let (out, cache) = simple::rnn_forward(params, x, h_prev);
            (out, CellCache::Rnn(cache))
        }
    }
}

/// Accumulates parameter gradients for one cell step into `grads`.
///
/// `dh` and `dc` are the loss gradients with respect to the step's two
/// outputs. Inputs from earlier instances (`h_prev`, `c_in`) are constants
/// under depth-one truncation, so no input gradients are produced. For
/// kinds without a long-term memory the two output gradients are summed,
/// mirroring the forward copy.
pub fn cell_backward(
    kind: CellKind,
    params: &[f64],
    cache: &CellCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut [f64],
) {
    assert_eq!(params.len(), grads.len(), "gradient buffer must match parameters");
    match (kind, cache) {
        (CellKind::TimeLstm3, CellCache::Tl3(cache)) => {
            time::tl3_backward(params, cache, dh, dc, grads)
        }
        (CellKind::TimeLstm2, CellCache::Tl2(cache)) => {
            time::tl2_backward(params, cache, dh, dc, grads)
        }
        (CellKind::TimeLstm1, CellCache::Tl1(cache)) => {
            time::tl1_backward(params, cache, dh, dc, grads)
        }
        (CellKind::DecayLstm, CellCache::Decay(cache)) => {
            decay::decay_backward(params, cache, dh, dc, grads)
        }
        (CellKind::VanillaLstm, CellCache::Vanilla(cache)) => {
            decay::vanilla_backward(params, cache, dh, dc, grads)
        }
        (CellKind::Gru, CellCache::Gru(cache)) => simple::gru_backward(params, cache, dh, dc, grads),
        (CellKind::Rnn, CellCache::Rnn(cache)) => simple::rnn_backward(params, cache, dh, dc, grads),
        _ => panic!("cache kind does not match cell kind {kind}"),
    }
}

/// Worst observed gradient deviation across a randomized battery.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub kind: CellKind,
    pub draws: usize,
    pub params_checked: usize,
    /// Largest `|analytic - numeric|` seen.
    pub max_abs_err: f64,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` among
    /// coordinates above the absolute floor.
    pub max_rel_err: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} draws, {} coordinates, max abs err {:.3e}, max rel err {:.3e}, {} failures",
            self.kind, self.draws, self.params_checked, self.max_abs_err, self.max_rel_err,
            self.failures
        )
    }
}

/// Compares analytic cell gradients against central finite differences.
///
/// Each draw samples fresh parameters, inputs, and a random linear
/// readout of the two outputs; the analytic gradient of that scalar loss is
/// checked coordinate-wise with tolerance
/// `abs_floor + rel_tol * max(|analytic|, |numeric|)`.
///
/// For the decay kind, `dt` is redrawn while any decay pre-activation sits
/// within 1e-3 of its hinge: finite differences are meaningless across a
/// non-differentiable point.
pub fn gradient_check(
    kind: CellKind,
    s: usize,
    draws: usize,
    seed: u64,
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheckReport {
    let mut rng = SeedRng::from_seed(seed);
    let n = kind.param_count(s);
    let mut report = GradCheckReport {
        kind,
        draws,
        params_checked: 0,
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        failures: 0,
    };
    for _ in 0..draws {
        let mut params = init_cell(kind, s, &mut rng);
        for region in regions(kind, s) {
            if region.bias {
                init_uniform(&mut params[region.range], s, &mut rng);
            }
        }
        let x = rng.uniform(-2.0, 2.0);
        let h_prev: Vec<f64> = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let c_in: Vec<f64> = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut dt = rng.uniform(0.0, 5.0);
        if kind == CellKind::DecayLstm {
            let decay_region = regions(kind, s)
                .into_iter()
                .find(|r| r.name == "w_decay")
                .expect("decay layout exposes w_decay");
            let bias_region = regions(kind, s)
                .into_iter()
                .find(|r| r.name == "b_decay")
                .expect("decay layout exposes b_decay");
            loop {
                let near_hinge = params[decay_region.range.clone()]
                    .iter()
                    .zip(&params[bias_region.range.clone()])
                    .any(|(w, b)| (dt * w + b).abs() < 1e-3);
                if !near_hinge {
                    break;
                }
                dt = rng.uniform(0.0, 5.0);
            }
        }
        let read_h: Vec<f64> = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let read_c: Vec<f64> = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let loss = |p: &[f64]| -> f64 {
            let (out, _) = cell_forward(kind, p, x, dt, &h_prev, &c_in);
            out.h.iter().zip(&read_h).map(|(a, b)| a * b).sum::<f64>()
                + out.c.iter().zip(&read_c).map(|(a, b)| a * b).sum::<f64>()
        };

        let (_, cache) = cell_forward(kind, &params, x, dt, &h_prev, &c_in);
        let mut analytic = vec![0.0; n];
        cell_backward(kind, &params, &cache, &read_h, &read_c, &mut analytic);
        let numeric = finite_diff_grad(&mut params, 1e-5, loss);

        for (a, g) in analytic.iter().zip(&numeric) {
            report.params_checked += 1;
            let abs_err = (a - g).abs();
            report.max_abs_err = report.max_abs_err.max(abs_err);
            if abs_err > abs_floor {
                let rel = abs_err / a.abs().max(g.abs());
                report.max_rel_err = report.max_rel_err.max(rel);
            }
            if !grad_close(*a, *g, rel_tol, abs_floor) {
                report.failures += 1;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cell(kind: CellKind, s: usize) -> Vec<f64> {
        vec![0.0; kind.param_count(s)]
    }

    #[test]
    fn census_matches_closed_forms_at_64() {
        let s = 64;
        assert_eq!(CellKind::TimeLstm3.param_count(s), 4 * s * s + 17 * s);
        assert_eq!(CellKind::TimeLstm3.param_count(s), 17_472);
        assert_eq!(CellKind::TimeLstm2.param_count(s), 5 * s * s + 20 * s);
        assert_eq!(CellKind::TimeLstm1.param_count(s), 4 * s * s + 15 * s);
        assert_eq!(CellKind::DecayLstm.param_count(s), 4 * s * s + 10 * s);
        assert_eq!(CellKind::VanillaLstm.param_count(s), 4 * s * s + 8 * s);
        assert_eq!(CellKind::Gru.param_count(s), 3 * s * s + 6 * s);
        assert_eq!(CellKind::Rnn.param_count(s), s * s + 2 * s);
    }

    #[test]
    fn regions_tile_the_parameter_vector_exactly() {
        for kind in ALL_KINDS {
            for s in [1, 2, 5, 16] {
                let regions = regions(kind, s);
                let mut expected_start = 0;
                for r in &regions {
                    assert_eq!(r.range.start, expected_start, "{kind} region {} misaligned", r.name);
                    expected_start = r.range.end;
                }
                assert_eq!(expected_start, kind.param_count(s), "{kind} regions must tile");
            }
        }
    }

    #[test]
    fn init_zeroes_biases_and_bounds_weights() {
        let mut rng = SeedRng::from_seed(11);
        for kind in ALL_KINDS {
            let s = 8;
            let params = init_cell(kind, s, &mut rng);
            let bound = 1.0 / (s as f64).sqrt();
            for region in regions(kind, s) {
                let slice = &params[region.range];
                if region.bias {
                    assert!(slice.iter().all(|&p| p == 0.0), "{kind} bias {} not zero", region.name);
                } else {
                    assert!(
                        slice.iter().all(|&p| p.abs() < bound),
                        "{kind} weight {} out of bound",
                        region.name
                    );
                }
            }
        }
    }

    #[test]
    fn tl3_zero_params_unit_memory_hand_case() {
        let s = 3;
        let params = zero_cell(CellKind::TimeLstm3, s);
        let (out, _) =
            cell_forward(CellKind::TimeLstm3, &params, 0.0, 0.0, &vec![0.0; s], &vec![1.0; s]);
        for k in 0..s {
            assert!((out.c[k] - 0.5).abs() < 1e-15);
            assert!((out.h[k] - 0.2985957304324856).abs() < 1e-12, "h = {}", out.h[k]);
        }
    }

    #[test]
    fn tl2_zero_params_unit_memory_hand_case() {
        let s = 2;
        let params = zero_cell(CellKind::TimeLstm2, s);
        let (out, _) =
            cell_forward(CellKind::TimeLstm2, &params, 0.0, 0.0, &vec![0.0; s], &vec![1.0; s]);
        for k in 0..s {
            assert!((out.c[k] - 0.5).abs() < 1e-15);
            assert!((out.h[k] - 0.23105857863000487).abs() < 1e-12);
        }
    }

    #[test]
    fn tl1_zero_params_unit_memory_hand_case() {
        let s = 2;
        let params = zero_cell(CellKind::TimeLstm1, s);
        let (out, _) =
            cell_forward(CellKind::TimeLstm1, &params, 0.0, 0.0, &vec![0.0; s], &vec![1.0; s]);
        for k in 0..s {
            assert!((out.c[k] - 0.5).abs() < 1e-15);
            assert!((out.h[k] - 0.23105857863000487).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_and_vanilla_zero_params_hand_case() {
        for kind in [CellKind::DecayLstm, CellKind::VanillaLstm] {
            let s = 2;
            let params = zero_cell(kind, s);
            let (out, _) = cell_forward(kind, &params, 0.0, 3.0, &vec![0.0; s], &vec![1.0; s]);
            for k in 0..s {
                assert!((out.c[k] - 0.5).abs() < 1e-15, "{kind}");
                assert!((out.h[k] - 0.23105857863000487).abs() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn decay_shrinks_previous_hidden_state_exponentially() {
        let s = 2;
        let mut params = zero_cell(CellKind::DecayLstm, s);
        let regions = regions(CellKind::DecayLstm, s);
        let b_decay = regions.iter().find(|r| r.name == "b_decay").unwrap();
        for p in &mut params[b_decay.range.clone()] {
            *p = 1.0;
        }
        let (_, cache) = cell_forward(CellKind::DecayLstm, &params, 0.0, 0.0, &[1.0; 2], &[0.0; 2]);
        match cache {
            CellCache::Decay(c) => {
                for g in &c.gamma {
                    assert!((g - 0.36787944117144233).abs() < 1e-15);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn vanilla_ignores_time_gap() {
        let s = 4;
        let mut rng = SeedRng::from_seed(3);
        let params = init_cell(CellKind::VanillaLstm, s, &mut rng);
        let h_prev: Vec<f64> = (0..s).map(|_| 0.3).collect();
        let c_in: Vec<f64> = (0..s).map(|_| -0.2).collect();
        let (a, _) = cell_forward(CellKind::VanillaLstm, &params, 0.7, 0.0, &h_prev, &c_in);
        let (b, _) = cell_forward(CellKind::VanillaLstm, &params, 0.7, 99.0, &h_prev, &c_in);
        assert_eq!(a, b);
    }

    #[test]
    fn gru_zero_params_keeps_half_of_previous_state() {
        let s = 3;
        let params = zero_cell(CellKind::Gru, s);
        let (out, _) = cell_forward(CellKind::Gru, &params, 0.0, 0.0, &vec![1.0; s], &vec![0.0; s]);
        for k in 0..s {
            assert!((out.h[k] - 0.5).abs() < 1e-15);
        }
        assert_eq!(out.c, out.h, "memoryless kinds report h as c");
    }

    #[test]
    fn rnn_is_a_tanh_readout() {
        let s = 1;
        let mut params = zero_cell(CellKind::Rnn, s);
        params[0] = 0.5;
        let (out, _) = cell_forward(CellKind::Rnn, &params, 1.0, 0.0, &[0.0], &[0.0]);
        assert!((out.h[0] - 0.46211715726000974).abs() < 1e-15);
        assert_eq!(out.c, out.h);
    }

    #[test]
    fn gradients_match_finite_differences_for_every_kind() {
        for kind in ALL_KINDS {
            let report = gradient_check(kind, 6, 5, 20_000 + kind as u64, 1e-4, 1e-7);
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn memoryless_kinds_fold_both_output_gradients_into_h() {
        let s = 4;
        let mut rng = SeedRng::from_seed(17);
        for kind in [CellKind::Gru, CellKind::Rnn] {
            let params = init_cell(kind, s, &mut rng);
            let h_prev: Vec<f64> = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (_, cache) = cell_forward(kind, &params, 0.4, 0.0, &h_prev, &vec![0.0; s]);
            let dh: Vec<f64> = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let dc: Vec<f64> = (0..s).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let zeros = vec![0.0; s];
            let mut split = vec![0.0; params.len()];
            cell_backward(kind, &params, &cache, &dh, &dc, &mut split);
            let summed: Vec<f64> = dh.iter().zip(&dc).map(|(a, b)| a + b).collect();
            let mut folded = vec![0.0; params.len()];
            cell_backward(kind, &params, &cache, &summed, &zeros, &mut folded);
            for (a, b) in split.iter().zip(&folded) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
