//! The per-feature cell pool: one recurrent cell per feature, a shared
//! long-term memory aggregated across whichever cells fired, and a small
//! prediction head.
//!
//! Each observed feature owns a slot holding its cell parameters, its
//! private hidden state, and bookkeeping for the time gap since its last
//! appearance. An instance activates only the slots of its present
//! features; every active cell reads the shared long-term memory from the
//! previous instance and the fresh outputs are folded back together with a
//! dimension-invariant aggregator, so the model is indifferent to how many
//! features arrive or in what order. Training is one truncated
//! backpropagation step per instance: memories stored from earlier
//! instances enter the backward pass as constants.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::cells::{
    cell_backward, cell_forward, init_cell, CellCache, CellKind, CellOut, GradCheckReport,
};
use crate::eval::{OnlineModel, StepOutcome, TrainError};
use crate::numerics::{
    adamw_step, finite_diff_grad, grad_close, init_uniform, matvec_into, matvec_t_into, outer_acc,
    softmax, softmax_xent, AdamConfig, AdamState, SeedRng,
};
use crate::streams::{FeatureId, Instance};

/// Dimension-invariant reduction over a set of equal-length vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    Mean,
    Sum,
    Min,
    Max,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Sum => "sum",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
        }
    }

    pub fn parse(name: &str) -> Option<Aggregator> {
        match name {
            "mean" => Some(Aggregator::Mean),
            "sum" => Some(Aggregator::Sum),
            "min" => Some(Aggregator::Min),
            "max" => Some(Aggregator::Max),
            _ => None,
        }
    }
}

/// Which hidden states feed the prediction: only the cells that fired on
/// this instance, or every slot ever created (inactive slots contribute
/// their stored state).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatSpace {
    Current,
    Universal,
}

impl FeatSpace {
    pub fn name(self) -> &'static str {
        match self {
            FeatSpace::Current => "current",
            FeatSpace::Universal => "universal",
        }
    }

    pub fn parse(name: &str) -> Option<FeatSpace> {
        match name {
            "current" => Some(FeatSpace::Current),
            "universal" => Some(FeatSpace::Universal),
            _ => None,
        }
    }
}

/// What the prediction head sees: the long-term memory, the aggregated
/// hidden state, or both concatenated (memory first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConcatMode {
    Both,
    OnlyLtm,
    OnlyStm,
}

impl ConcatMode {
    pub fn name(self) -> &'static str {
        match self {
            ConcatMode::Both => "both",
            ConcatMode::OnlyLtm => "only_ltm",
            ConcatMode::OnlyStm => "only_stm",
        }
    }

    pub fn parse(name: &str) -> Option<ConcatMode> {
        match name {
            "both" => Some(ConcatMode::Both),
            "only_ltm" => Some(ConcatMode::OnlyLtm),
            "only_stm" => Some(ConcatMode::OnlyStm),
            _ => None,
        }
    }
}

/// Caps the pool size: when slot creation pushes the count past
/// `max_slots`, slots seen at least `min_seen` times become candidates for
/// removal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropPolicy {
    pub max_slots: usize,
    pub min_seen: u64,
}

/// Everything that defines a pool model apart from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub agg: Aggregator,
    pub feat_space: FeatSpace,
    pub concat: ConcatMode,
    pub adam: AdamConfig,
    pub classes: usize,
    pub drop: Option<DropPolicy>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            cell: CellKind::TimeLstm3,
            hidden: 64,
            agg: Aggregator::Max,
            feat_space: FeatSpace::Current,
            concat: ConcatMode::Both,
            adam: AdamConfig::default(),
            classes: 2,
            drop: None,
        }
    }
}

impl PoolConfig {
    /// Width of the prediction head's input under the concat mode.
    pub fn head_in_dim(&self) -> usize {
        match self.concat {
            ConcatMode::Both => 2 * self.hidden,
            ConcatMode::OnlyLtm | ConcatMode::OnlyStm => self.hidden,
        }
    }

    /// Scalar parameters in the two-layer head.
    pub fn head_param_count(&self) -> usize {
        head_len(self.head_in_dim(), self.hidden, self.classes)
    }

    /// A stable textual form of every field, used to fingerprint
    /// checkpoints against the configuration that wrote them.
    pub fn canonical(&self) -> String {
        let drop = match self.drop {
            Some(d) => format!("{}/{}", d.max_slots, d.min_seen),
            None => "none".to_string(),
        };
        format!(
            "cell={};hidden={};agg={};feat={};concat={};lr={};b1={};b2={};eps={};wd={};classes={};drop={}",
            self.cell.name(),
            self.hidden,
            self.agg.name(),
            self.feat_space.name(),
            self.concat.name(),
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.adam.weight_decay,
            self.classes,
            drop
        )
    }

    fn validate(&self) {
        assert!(self.hidden > 0, "hidden size must be positive");
        assert!(self.classes >= 2, "need at least two classes");
        if let Some(d) = self.drop {
            assert!(d.max_slots > 0, "drop policy slot cap must be positive");
            assert!(d.min_seen > 0, "drop policy maturity threshold must be positive");
        }
    }
}

/// Element-wise mean / sum / min / max over a nonempty set of
/// equal-length vectors.
pub fn aggregate(vectors: &[&[f64]], op: Aggregator) -> Vec<f64> {
    aggregate_tracked(vectors, op).0
}

/// Aggregation that also reports, for min/max, which input supplied each
/// output element. Inputs are scanned in order and only a strict
/// improvement changes the winner, so ties go to the earliest input.
fn aggregate_tracked(vectors: &[&[f64]], op: Aggregator) -> (Vec<f64>, Option<Vec<usize>>) {
    assert!(!vectors.is_empty(), "aggregation needs at least one vector");
    let s = vectors[0].len();
    assert!(vectors.iter().all(|v| v.len() == s), "aggregated vectors must share a length");
    match op {
        Aggregator::Mean | Aggregator::Sum => {
            let mut out = vec![0.0; s];
            for v in vectors {
                for e in 0..s {
                    out[e] += v[e];
                }
            }
            if op == Aggregator::Mean {
                let n = vectors.len() as f64;
                for o in &mut out {
                    *o /= n;
                }
            }
            (out, None)
        }
        Aggregator::Min | Aggregator::Max => {
            let mut out = vectors[0].to_vec();
            let mut winners = vec![0usize; s];
            for (k, v) in vectors.iter().enumerate().skip(1) {
                for e in 0..s {
                    let better = match op {
                        Aggregator::Max => v[e] > out[e],
                        _ => v[e] < out[e],
                    };
                    if better {
                        out[e] = v[e];
                        winners[e] = k;
                    }
                }
            }
            (out, Some(winners))
        }
    }
}

/// Routes the aggregated-output gradient back to participant `k` of `n`:
/// mean splits it evenly, sum copies it, min/max give each element to its
/// winner alone.
fn participant_grad(
    dout: &[f64],
    k: usize,
    n: usize,
    op: Aggregator,
    winners: Option<&[usize]>,
    out: &mut [f64],
) {
    match op {
        Aggregator::Mean => {
            let scale = 1.0 / n as f64;
            for e in 0..dout.len() {
                out[e] += scale * dout[e];
            }
        }
        Aggregator::Sum => {
            for e in 0..dout.len() {
                out[e] += dout[e];
            }
        }
        Aggregator::Min | Aggregator::Max => {
            let winners = winners.expect("min/max aggregation must track winners");
            for e in 0..dout.len() {
                if winners[e] == k {
                    out[e] += dout[e];
                }
            }
        }
    }
}

/// Kullback-Leibler divergence between two memory vectors after mapping
/// each through softmax.
pub fn kl_softmax(p_raw: &[f64], q_raw: &[f64]) -> f64 {
    let lp = log_softmax(p_raw);
    let lq = log_softmax(q_raw);
    lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum()
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|&x| x - max - lse).collect()
}

/// One feature's cell: parameters, optimizer state, stored hidden state,
/// and appearance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSlot {
    pub params: Vec<f64>,
    pub opt: AdamState,
    pub h: Vec<f64>,
    pub last_seen: Option<u64>,
    pub seen_count: u64,
}

/// One active cell's contribution to a forward pass.
#[derive(Debug, Clone)]
pub struct ActiveCell {
    pub id: FeatureId,
    pub dt: f64,
    pub out: CellOut,
}

/// Who supplied a vector to the hidden-state aggregation: an active cell
/// (index into the active list) or an inactive slot's stored state, which
/// is a constant in the backward pass.
#[derive(Debug, Clone, Copy)]
enum HParticipant {
    Active(usize),
    Stored,
}

pub(crate) struct HeadCache {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
}

/// Results of one forward pass, kept immutable until the commit phase of
/// the train step.
pub struct ForwardPass {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub active: Vec<ActiveCell>,
    pub c_new: Vec<f64>,
    pub h_pred: Vec<f64>,
    caches: Vec<CellCache>,
    c_winners: Option<Vec<usize>>,
    h_winners: Option<Vec<usize>>,
    h_parts: Vec<HParticipant>,
    head_cache: HeadCache,
}

struct StepComputation {
    pass: ForwardPass,
    loss: f64,
    head_grads: Vec<f64>,
    cell_grads: Vec<(FeatureId, Vec<f64>)>,
}

struct HeadOffsets {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

fn head_offsets(in_dim: usize, s: usize, classes: usize) -> HeadOffsets {
    let w1 = 0..in_dim * s;
    let b1 = w1.end..w1.end + s;
    let w2 = b1.end..b1.end + s * classes;
    let b2 = w2.end..w2.end + classes;
    HeadOffsets { w1, b1, w2, b2 }
}

pub(crate) fn head_len(in_dim: usize, s: usize, classes: usize) -> usize {
    in_dim * s + s + s * classes + classes
}

/// Seeds the two weight matrices of an affine-relu-affine head; biases
/// stay zero.
pub(crate) fn head_init(
    params: &mut [f64],
    in_dim: usize,
    s: usize,
    classes: usize,
    rng: &mut SeedRng,
) {
    let o = head_offsets(in_dim, s, classes);
    init_uniform(&mut params[o.w1], in_dim, rng);
    init_uniform(&mut params[o.w2], s, rng);
}

pub(crate) fn head_forward_raw(
    params: &[f64],
    in_dim: usize,
    s: usize,
    classes: usize,
    input: Vec<f64>,
) -> (Vec<f64>, HeadCache) {
    assert_eq!(input.len(), in_dim, "head input width mismatch");
    let o = head_offsets(in_dim, s, classes);
    let mut z1 = params[o.b1].to_vec();
    matvec_into(&params[o.w1], s, in_dim, &input, &mut z1);
    let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
    let mut logits = params[o.b2].to_vec();
    matvec_into(&params[o.w2], classes, s, &a1, &mut logits);
    (logits, HeadCache { input, z1, a1 })
}

pub(crate) fn head_backward_raw(
    params: &[f64],
    in_dim: usize,
    s: usize,
    classes: usize,
    cache: &HeadCache,
    dlogits: &[f64],
    grads: &mut [f64],
    dinput: &mut [f64],
) {
    let o = head_offsets(in_dim, s, classes);
    outer_acc(&mut grads[o.w2.clone()], dlogits, &cache.a1, 1.0);
    for (g, &d) in grads[o.b2.clone()].iter_mut().zip(dlogits) {
        *g += d;
    }
    let mut da1 = vec![0.0; s];
    matvec_t_into(&params[o.w2], classes, s, dlogits, &mut da1);
    let dz1: Vec<f64> =
        da1.iter().zip(&cache.z1).map(|(&d, &z)| if z > 0.0 { d } else { 0.0 }).collect();
    outer_acc(&mut grads[o.w1.clone()], &dz1, &cache.input, 1.0);
    for (g, &d) in grads[o.b1.clone()].iter_mut().zip(&dz1) {
        *g += d;
    }
    matvec_t_into(&params[o.w1], s, in_dim, &dz1, dinput);
}

/// The online model: a growing pool of per-feature slots, the shared
/// long-term memory `c`, the last aggregated hidden state `h`, and the
/// prediction head. Slot parameters are seeded from (run seed, feature
/// id), so a slot's initialization does not depend on arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolModel {
    pub cfg: PoolConfig,
    pub seed: u64,
    pub slots: BTreeMap<FeatureId, FeatureSlot>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub head: Vec<f64>,
    pub head_opt: AdamState,
    pub t: u64,
    pub dropped: Vec<(u64, FeatureId)>,
    pub over_capacity_events: u64,
}

impl PoolModel {
    pub fn new(cfg: PoolConfig, seed: u64) -> Self {
        cfg.validate();
        let s = cfg.hidden;
        let mut head = vec![0.0; cfg.head_param_count()];
        let mut rng = SeedRng::from_seed(seed).fork(0);
        head_init(&mut head, cfg.head_in_dim(), s, cfg.classes, &mut rng);
        let head_opt = AdamState::new(head.len());
        PoolModel {
            cfg,
            seed,
            slots: BTreeMap::new(),
            c: vec![0.0; s],
            h: vec![0.0; s],
            head,
            head_opt,
            t: 0,
            dropped: Vec::new(),
            over_capacity_events: 0,
        }
    }

    /// Total scalar parameters currently alive (all slots plus the head).
    pub fn param_count(&self) -> usize {
        self.slots.len() * self.cfg.cell.param_count(self.cfg.hidden) + self.head.len()
    }

    /// Returns the slot for a feature, creating it on first sight with
    /// seeded parameters, zero hidden state, and no appearance history
    /// (its first step will use a time gap of 0).
    pub fn ensure_slot(&mut self, id: FeatureId) -> &mut FeatureSlot {
        if !self.slots.contains_key(&id) {
            self.create_slot(id);
        }
        self.slots.get_mut(&id).unwrap()
    }

    fn create_slot(&mut self, id: FeatureId) {
        let mut rng = SeedRng::from_seed(self.seed).fork(1 + id as u64);
        let params = init_cell(self.cfg.cell, self.cfg.hidden, &mut rng);
        let slot = FeatureSlot {
            opt: AdamState::new(params.len()),
            params,
            h: vec![0.0; self.cfg.hidden],
            last_seen: None,
            seen_count: 0,
        };
        self.slots.insert(id, slot);
    }

    /// Creates slots for the instance's features, then enforces the drop
    /// policy; the instance's own features are never drop candidates
    /// while being processed.
    fn prepare_slots(&mut self, inst: &Instance) {
        let mut created = false;
        for &(id, _) in &inst.feats {
            if !self.slots.contains_key(&id) {
                self.create_slot(id);
                created = true;
            }
        }
        if created && self.cfg.drop.is_some() {
            let protected: Vec<FeatureId> = inst.feats.iter().map(|f| f.0).collect();
            self.drop_slots_protected(&protected);
        }
    }

    /// Enforces the slot cap now: repeatedly removes the candidate whose
    /// stored hidden state diverges least from the shared memory (so the
    /// pool keeps its most distinctive cells). Returns the dropped ids.
    pub fn drop_slots(&mut self) -> Vec<FeatureId> {
        self.drop_slots_protected(&[])
    }

    fn drop_slots_protected(&mut self, protected: &[FeatureId]) -> Vec<FeatureId> {
        let Some(policy) = self.cfg.drop else {
            return Vec::new();
        };
        let mut removed = Vec::new();
        while self.slots.len() > policy.max_slots {
            let mut best: Option<(f64, FeatureId)> = None;
            for (&id, slot) in &self.slots {
                if slot.seen_count < policy.min_seen || protected.contains(&id) {
                    continue;
                }
                let div = kl_softmax(&slot.h, &self.c);
                if best.is_none_or(|(b, _)| div < b) {
                    best = Some((div, id));
                }
            }
            match best {
                Some((_, id)) => {
                    self.slots.remove(&id);
                    self.dropped.push((self.t, id));
                    removed.push(id);
                }
                None => {
                    self.over_capacity_events += 1;
                    break;
                }
            }
        }
        removed
    }

    fn head_forward(&self, input: Vec<f64>) -> (Vec<f64>, HeadCache) {
        head_forward_raw(&self.head, self.cfg.head_in_dim(), self.cfg.hidden, self.cfg.classes, input)
    }

    fn head_backward(
        &self,
        cache: &HeadCache,
        dlogits: &[f64],
        grads: &mut [f64],
        dinput: &mut [f64],
    ) {
        head_backward_raw(
            &self.head,
            self.cfg.head_in_dim(),
            self.cfg.hidden,
            self.cfg.classes,
            cache,
            dlogits,
            grads,
            dinput,
        );
    }

    fn head_input(&self, c: &[f64], h: &[f64]) -> Vec<f64> {
        match self.cfg.concat {
            ConcatMode::Both => c.iter().chain(h.iter()).cloned().collect(),
            ConcatMode::OnlyLtm => c.to_vec(),
            ConcatMode::OnlyStm => h.to_vec(),
        }
    }

    /// Pure forward pass over one instance; every present feature must
    /// already have a slot. An empty instance predicts straight from the
    /// stored memories without any cell step.
    fn forward_pass(&self, inst: &Instance) -> ForwardPass {
        if inst.is_empty() {
            let (logits, head_cache) = self.head_forward(self.head_input(&self.c, &self.h));
            return ForwardPass {
                probs: softmax(&logits),
                logits,
                active: Vec::new(),
                c_new: self.c.clone(),
                h_pred: self.h.clone(),
                caches: Vec::new(),
                c_winners: None,
                h_winners: None,
                h_parts: Vec::new(),
                head_cache,
            };
        }
        let mut active = Vec::with_capacity(inst.feats.len());
        let mut caches = Vec::with_capacity(inst.feats.len());
        for &(id, x) in &inst.feats {
            let slot = self
                .slots
                .get(&id)
                .unwrap_or_else(|| panic!("feature {id} has no slot; ensure slots before forward"));
            let dt = slot.last_seen.map_or(0.0, |seen| (self.t - seen) as f64);
            let (out, cache) = cell_forward(self.cfg.cell, &slot.params, x, dt, &slot.h, &self.c);
            active.push(ActiveCell { id, dt, out });
            caches.push(cache);
        }
        let c_refs: Vec<&[f64]> = active.iter().map(|a| a.out.c.as_slice()).collect();
        let (c_new, c_winners) = aggregate_tracked(&c_refs, self.cfg.agg);
        let mut h_parts = Vec::new();
        let mut h_refs: Vec<&[f64]> = Vec::new();
        match self.cfg.feat_space {
            FeatSpace::Current => {
                for (k, a) in active.iter().enumerate() {
                    h_parts.push(HParticipant::Active(k));
                    h_refs.push(a.out.h.as_slice());
                }
            }
            FeatSpace::Universal => {
                let mut next_active = 0;
                for (&id, slot) in &self.slots {
                    if next_active < active.len() && active[next_active].id == id {
                        h_parts.push(HParticipant::Active(next_active));
                        h_refs.push(active[next_active].out.h.as_slice());
                        next_active += 1;
                    } else {
                        h_parts.push(HParticipant::Stored);
                        h_refs.push(slot.h.as_slice());
                    }
                }
            }
        }
        let (h_pred, h_winners) = aggregate_tracked(&h_refs, self.cfg.agg);
        let (logits, head_cache) = self.head_forward(self.head_input(&c_new, &h_pred));
        ForwardPass {
            probs: softmax(&logits),
            logits,
            active,
            c_new,
            h_pred,
            caches,
            c_winners,
            h_winners,
            h_parts,
            head_cache,
        }
    }

    /// Forward pass through the live model, creating slots for unseen
    /// features (and applying the drop policy) first.
    pub fn forward(&mut self, inst: &Instance) -> ForwardPass {
        self.prepare_slots(inst);
        self.forward_pass(inst)
    }

    /// Pure loss-and-gradients computation: forward, cross-entropy, head
    /// backward, aggregation routing, and one backward step through each
    /// active cell. No state changes.
    fn compute_step(&self, inst: &Instance) -> StepComputation {
        let s = self.cfg.hidden;
        let pass = self.forward_pass(inst);
        let (loss, _, dlogits) = softmax_xent(&pass.logits, inst.label as usize);
        let mut head_grads = vec![0.0; self.head.len()];
        let mut dinput = vec![0.0; self.cfg.head_in_dim()];
        self.head_backward(&pass.head_cache, &dlogits, &mut head_grads, &mut dinput);
        let (dc_agg, dh_agg) = match self.cfg.concat {
            ConcatMode::Both => (dinput[..s].to_vec(), dinput[s..].to_vec()),
            ConcatMode::OnlyLtm => (dinput, vec![0.0; s]),
            ConcatMode::OnlyStm => (vec![0.0; s], dinput),
        };
        let mut cell_grads = Vec::with_capacity(pass.active.len());
        if !pass.active.is_empty() {
            let n_active = pass.active.len();
            let mut dh_cells = vec![vec![0.0; s]; n_active];
            let mut dc_cells = vec![vec![0.0; s]; n_active];
            for (k, dc) in dc_cells.iter_mut().enumerate() {
                participant_grad(&dc_agg, k, n_active, self.cfg.agg, pass.c_winners.as_deref(), dc);
            }
            let n_h = pass.h_parts.len();
            for (k, part) in pass.h_parts.iter().enumerate() {
                if let HParticipant::Active(ai) = part {
                    participant_grad(
                        &dh_agg,
                        k,
                        n_h,
                        self.cfg.agg,
                        pass.h_winners.as_deref(),
                        &mut dh_cells[*ai],
                    );
                }
            }
            for (k, a) in pass.active.iter().enumerate() {
                let slot = &self.slots[&a.id];
                let mut grads = vec![0.0; slot.params.len()];
                cell_backward(
                    self.cfg.cell,
                    &slot.params,
                    &pass.caches[k],
                    &dh_cells[k],
                    &dc_cells[k],
                    &mut grads,
                );
                cell_grads.push((a.id, grads));
            }
        }
        StepComputation { pass, loss, head_grads, cell_grads }
    }

    /// One online step: predict, reveal the label, backpropagate one
    /// truncated step, update head and active cells with AdamW, then
    /// commit the fresh memories and advance the clock. An empty instance
    /// updates only the head. The returned probabilities are the
    /// pre-update prediction.
    pub fn train_step(&mut self, inst: &Instance) -> Result<(f64, Vec<f64>), TrainError> {
        assert!(
            (inst.label as usize) < self.cfg.classes,
            "label {} out of range for {} classes",
            inst.label,
            self.cfg.classes
        );
        self.prepare_slots(inst);
        let comp = self.compute_step(inst);
        if !comp.loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { t: self.t, loss: comp.loss });
        }
        let adam = self.cfg.adam;
        for (id, grads) in &comp.cell_grads {
            let slot = self.slots.get_mut(id).unwrap();
            adamw_step(&mut slot.params, grads, &mut slot.opt, &adam);
        }
        adamw_step(&mut self.head, &comp.head_grads, &mut self.head_opt, &adam);
        let now = self.t;
        for a in &comp.pass.active {
            let slot = self.slots.get_mut(&a.id).unwrap();
            slot.h.copy_from_slice(&a.out.h);
            slot.last_seen = Some(now);
            slot.seen_count += 1;
        }
        self.c = comp.pass.c_new;
        self.h = comp.pass.h_pred;
        self.t += 1;
        Ok((comp.loss, comp.pass.probs))
    }

    /// Discards all learned state and restarts from a fresh seed: no
    /// slots, zero memories, reseeded head, clock at zero. Used by the
    /// retrain-at-each-interval comparison.
    pub fn reinitialize(&mut self, seed: u64) {
        *self = PoolModel::new(self.cfg.clone(), seed);
    }
}

impl OnlineModel for PoolModel {
    fn step(&mut self, inst: &Instance) -> Result<StepOutcome, TrainError> {
        let (_, probs) = self.train_step(inst)?;
        Ok(StepOutcome::from_probs(&probs))
    }
}

/// Finite-difference check of the fully composed model under one
/// configuration: three warm-up steps grow a small pool, then the analytic
/// head and cell gradients of a probe step are compared coordinate-wise
/// against central differences of the probe loss. Stored memories stay
/// constant throughout, matching the truncated backward pass under test.
pub fn composed_gradient_check(
    cfg: PoolConfig,
    seed: u64,
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheckReport {
    let kind = cfg.cell;
    let mut model = PoolModel::new(cfg, seed);
    model.train_step(&Instance::new(0, vec![(0, 0.4), (1, -0.6)], 0)).expect("warm-up step");
    model.train_step(&Instance::new(1, vec![(0, -0.2), (2, 0.8)], 1)).expect("warm-up step");
    model.train_step(&Instance::new(2, vec![(1, 0.5), (2, -0.9)], 0)).expect("warm-up step");
    let probe = Instance::new(3, vec![(0, 0.35), (2, -0.45)], 1);
    let label = probe.label as usize;

    let comp = model.compute_step(&probe);
    let mut report = GradCheckReport {
        kind,
        draws: 1,
        params_checked: 0,
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        failures: 0,
    };
    let tally = |analytic: &[f64], numeric: &[f64], report: &mut GradCheckReport| {
        for (&a, &n) in analytic.iter().zip(numeric) {
            report.params_checked += 1;
            let abs = (a - n).abs();
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs > abs_floor {
                report.max_rel_err = report.max_rel_err.max(abs / a.abs().max(n.abs()));
            }
            if !grad_close(a, n, rel_tol, abs_floor) {
                report.failures += 1;
            }
        }
    };

    let mut head = std::mem::take(&mut model.head);
    let numeric = finite_diff_grad(&mut head, 1e-5, |p| {
        model.head = p.to_vec();
        let loss = softmax_xent(&model.forward_pass(&probe).logits, label).0;
        model.head = Vec::new();
        loss
    });
    model.head = head;
    tally(&comp.head_grads, &numeric, &mut report);

    for (id, analytic) in &comp.cell_grads {
        let mut params = std::mem::take(&mut model.slots.get_mut(id).unwrap().params);
        let numeric = finite_diff_grad(&mut params, 1e-5, |p| {
            model.slots.get_mut(id).unwrap().params = p.to_vec();
            let loss = softmax_xent(&model.forward_pass(&probe).logits, label).0;
            model.slots.get_mut(id).unwrap().params = Vec::new();
            loss
        });
        model.slots.get_mut(id).unwrap().params = params;
        tally(analytic, &numeric, &mut report);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cfg(cell: CellKind) -> PoolConfig {
        PoolConfig { cell, hidden: 6, adam: AdamConfig::with_lr(0.01), ..PoolConfig::default() }
    }

    fn inst(t: u64, feats: Vec<(FeatureId, f64)>, label: u8) -> Instance {
        Instance::new(t, feats, label)
    }

    #[test]
    fn aggregate_hand_cases() {
        let a = [1.0, -2.0];
        let b = [0.0, 3.0];
        assert_eq!(aggregate(&[&a, &b], Aggregator::Max), vec![1.0, 3.0]);
        assert_eq!(aggregate(&[&a, &b], Aggregator::Min), vec![0.0, -2.0]);
        assert_eq!(aggregate(&[&a, &b], Aggregator::Sum), vec![1.0, 1.0]);
        let c = [2.0, 4.0];
        let d = [4.0, 8.0];
        assert_eq!(aggregate(&[&c, &d], Aggregator::Mean), vec![3.0, 6.0]);
    }

    #[test]
    fn aggregate_singleton_is_identity_for_every_op() {
        let v = [0.5, -1.25, 3.0];
        for op in [Aggregator::Mean, Aggregator::Sum, Aggregator::Min, Aggregator::Max] {
            assert_eq!(aggregate(&[&v], op), v.to_vec());
        }
    }

    #[test]
    #[should_panic(expected = "at least one vector")]
    fn aggregate_rejects_empty_set() {
        aggregate(&[], Aggregator::Mean);
    }

    #[test]
    fn minmax_ties_go_to_first_input() {
        let a = [1.0, 5.0];
        let b = [1.0, 7.0];
        let (out, winners) = aggregate_tracked(&[&a, &b], Aggregator::Max);
        assert_eq!(out, vec![1.0, 7.0]);
        assert_eq!(winners.unwrap(), vec![0, 1]);
    }

    #[test]
    fn kl_softmax_properties() {
        let v = [0.3, -0.7, 1.1];
        assert_eq!(kl_softmax(&v, &v), 0.0);
        let p = [0.0, 2f64.ln()];
        let q = [0.0, 0.0];
        let expected = 5.0 / 3.0 * 2f64.ln() - 3f64.ln();
        assert_relative_eq!(kl_softmax(&p, &q), expected, max_relative = 1e-12);
        assert!(kl_softmax(&q, &p) > 0.0);
    }

    #[test]
    fn zeroed_head_gives_uniform_probs_and_ln2_loss() {
        let mut model = PoolModel::new(small_cfg(CellKind::TimeLstm3), 5);
        model.head.iter_mut().for_each(|p| *p = 0.0);
        let pass = model.forward(&inst(0, vec![(0, 0.7), (3, -0.2)], 1));
        assert_eq!(pass.logits, vec![0.0, 0.0]);
        assert_eq!(pass.probs, vec![0.5, 0.5]);
        let mut model = PoolModel::new(small_cfg(CellKind::TimeLstm3), 5);
        model.head.iter_mut().for_each(|p| *p = 0.0);
        let (loss, probs) = model.train_step(&inst(0, vec![(0, 0.7)], 1)).unwrap();
        assert_relative_eq!(loss, 0.6931471805599453, max_relative = 1e-15);
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn fresh_model_on_empty_instance_predicts_uniform() {
        let mut model = PoolModel::new(small_cfg(CellKind::TimeLstm3), 11);
        let (loss, probs) = model.train_step(&inst(0, vec![], 0)).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
        assert_relative_eq!(loss, 0.6931471805599453, max_relative = 1e-15);
        assert!(model.slots.is_empty());
        assert_eq!(model.head_opt.step, 1);
        assert_eq!(model.t, 1);
    }

    #[test]
    fn bookkeeping_and_time_gaps() {
        let mut model = PoolModel::new(small_cfg(CellKind::TimeLstm3), 7);
        for t in 0..4 {
            model.train_step(&inst(t, vec![(0, 0.1)], 0)).unwrap();
        }
        let pass = model.forward(&inst(4, vec![(0, 0.1), (1, 0.4)], 1));
        let by_id: BTreeMap<FeatureId, f64> = pass.active.iter().map(|a| (a.id, a.dt)).collect();
        assert_eq!(by_id[&0], 1.0);
        assert_eq!(by_id[&1], 0.0, "first appearance uses a zero gap");
        model.train_step(&inst(4, vec![(0, 0.1), (1, 0.4)], 1)).unwrap();
        let slot1 = &model.slots[&1];
        assert_eq!(slot1.last_seen, Some(4));
        assert_eq!(slot1.seen_count, 1);
        for t in 5..9 {
            model.train_step(&inst(t, vec![(0, 0.1)], 0)).unwrap();
        }
        let pass = model.forward(&inst(9, vec![(1, 0.4)], 1));
        assert_eq!(pass.active[0].dt, 5.0, "seen at 4, now 9");
    }

    #[test]
    fn singleton_instance_copies_cell_memory_for_every_aggregator() {
        for agg in [Aggregator::Mean, Aggregator::Sum, Aggregator::Min, Aggregator::Max] {
            let cfg = PoolConfig { agg, ..small_cfg(CellKind::TimeLstm3) };
            let mut model = PoolModel::new(cfg, 3);
            let pass = model.forward(&inst(0, vec![(2, 0.9)], 1));
            assert_eq!(pass.c_new, pass.active[0].out.c);
            assert_eq!(pass.h_pred, pass.active[0].out.h);
        }
    }

    #[test]
    fn feature_order_cannot_matter() {
        let cfg = small_cfg(CellKind::TimeLstm3);
        let mut a = PoolModel::new(cfg.clone(), 13);
        let mut b = PoolModel::new(cfg, 13);
        let fwd = inst(0, vec![(0, 0.3), (4, -0.8), (9, 1.2)], 1);
        let rev = inst(0, vec![(9, 1.2), (4, -0.8), (0, 0.3)], 1);
        let (la, pa) = a.train_step(&fwd).unwrap();
        let (lb, pb) = b.train_step(&rev).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(pa, pb);
        assert_eq!(a.c, b.c);
        assert_eq!(a.head, b.head);
    }

    #[test]
    fn activation_sparsity_of_optimizer_updates() {
        let mut model = PoolModel::new(small_cfg(CellKind::TimeLstm3), 21);
        model.train_step(&inst(0, vec![(0, 0.5), (1, -0.5), (2, 0.25)], 0)).unwrap();
        let frozen_params = model.slots[&0].params.clone();
        let frozen_h = model.slots[&0].h.clone();
        model.train_step(&inst(1, vec![(1, 0.9)], 1)).unwrap();
        assert_eq!(model.slots[&0].opt.step, 1, "inactive slot optimizer untouched");
        assert_eq!(model.slots[&2].opt.step, 1);
        assert_eq!(model.slots[&1].opt.step, 2);
        assert_eq!(model.head_opt.step, 2);
        assert_eq!(model.slots[&0].params, frozen_params);
        assert_eq!(model.slots[&0].h, frozen_h);
        assert_eq!(model.slots[&0].last_seen, Some(0));
    }

    #[test]
    fn pool_grows_monotonically_without_drop_policy() {
        let mut model = PoolModel::new(small_cfg(CellKind::Gru), 2);
        let mut seen = std::collections::BTreeSet::new();
        let mut rng = SeedRng::from_seed(99);
        for t in 0..60 {
            let feats: Vec<(FeatureId, f64)> = (0..8)
                .filter_map(|j| (rng.unit() < 0.4).then(|| (j, rng.uniform(-1.0, 1.0))))
                .collect();
            for &(id, _) in &feats {
                seen.insert(id);
            }
            let before = model.slots.len();
            model.train_step(&inst(t, feats, (t % 2) as u8)).unwrap();
            assert!(model.slots.len() >= before);
            assert_eq!(model.slots.len(), seen.len());
        }
    }

    fn warmed_model(cfg: PoolConfig, seed: u64) -> PoolModel {
        let mut model = PoolModel::new(cfg, seed);
        model.train_step(&inst(0, vec![(0, 0.4), (1, -0.6)], 0)).unwrap();
        model.train_step(&inst(1, vec![(0, -0.2), (2, 0.8)], 1)).unwrap();
        model.train_step(&inst(2, vec![(1, 0.5), (2, -0.9)], 0)).unwrap();
        model
    }

    #[test]
    fn composed_gradients_match_finite_differences() {
        let mut combos = Vec::new();
        for agg in [Aggregator::Mean, Aggregator::Max] {
            for feat_space in [FeatSpace::Current, FeatSpace::Universal] {
                for concat in [ConcatMode::Both, ConcatMode::OnlyLtm, ConcatMode::OnlyStm] {
                    combos.push((CellKind::TimeLstm3, agg, feat_space, concat));
                }
            }
        }
        combos.push((CellKind::Gru, Aggregator::Max, FeatSpace::Universal, ConcatMode::Both));
        combos.push((CellKind::DecayLstm, Aggregator::Mean, FeatSpace::Current, ConcatMode::Both));
        for (round, &(cell, agg, feat_space, concat)) in combos.iter().enumerate() {
            let cfg = PoolConfig { agg, feat_space, concat, ..small_cfg(cell) };
            let report = composed_gradient_check(cfg, 300 + round as u64, 1e-4, 1e-7);
            assert!(report.passed(), "combo {round}: {report}");
            assert!(report.params_checked > 0);
        }
    }

    #[test]
    fn stored_memories_are_constants_in_backward() {
        let cfg = PoolConfig {
            feat_space: FeatSpace::Universal,
            agg: Aggregator::Mean,
            ..small_cfg(CellKind::TimeLstm3)
        };
        let mut model = warmed_model(cfg, 17);
        let probe = inst(3, vec![(0, 0.3), (2, 0.6)], 1);
        let comp = model.compute_step(&probe);
        let grad_ids: Vec<FeatureId> = comp.cell_grads.iter().map(|(id, _)| *id).collect();
        assert_eq!(grad_ids, vec![0, 2], "only active cells receive gradients");
        let loss_before = comp.loss;
        model.slots.get_mut(&1).unwrap().h[0] += 0.25;
        let comp = model.compute_step(&probe);
        assert_ne!(comp.loss, loss_before, "stored state still shapes the loss");
        let grad_ids: Vec<FeatureId> = comp.cell_grads.iter().map(|(id, _)| *id).collect();
        assert_eq!(grad_ids, vec![0, 2], "inactive slots never receive gradients");
    }

    #[test]
    fn drop_policy_trivial_and_forced_cases() {
        let cfg = PoolConfig {
            drop: Some(DropPolicy { max_slots: 2, min_seen: 1 }),
            ..small_cfg(CellKind::TimeLstm3)
        };
        let mut model = PoolModel::new(cfg, 9);
        model.ensure_slot(0);
        model.ensure_slot(1);
        assert!(model.drop_slots().is_empty(), "at or under the cap");
        assert_eq!(model.slots.len(), 2);

        model.ensure_slot(2);
        model.slots.get_mut(&1).unwrap().seen_count = 3;
        let dropped = model.drop_slots();
        assert_eq!(dropped, vec![1], "only eligible slot goes regardless of divergence");
        assert_eq!(model.dropped, vec![(0, 1)]);
    }

    #[test]
    fn drop_policy_removes_lowest_divergence() {
        let cfg = PoolConfig {
            drop: Some(DropPolicy { max_slots: 2, min_seen: 1 }),
            ..small_cfg(CellKind::TimeLstm3)
        };
        let mut model = PoolModel::new(cfg, 9);
        model.c = vec![0.5, -0.5, 0.25, 0.0, 1.0, -1.0];
        for id in 0..3 {
            let slot = model.ensure_slot(id);
            slot.seen_count = 5;
            slot.h = vec![id as f64; 6];
        }
        model.slots.get_mut(&2).unwrap().h = model.c.clone();
        let dropped = model.drop_slots();
        assert_eq!(dropped, vec![2], "zero divergence drops first");
    }

    #[test]
    fn drop_policy_with_no_candidate_logs_and_exceeds() {
        let cfg = PoolConfig {
            drop: Some(DropPolicy { max_slots: 1, min_seen: 4 }),
            ..small_cfg(CellKind::TimeLstm3)
        };
        let mut model = PoolModel::new(cfg, 9);
        model.ensure_slot(0);
        model.ensure_slot(1);
        model.ensure_slot(2);
        assert!(model.drop_slots().is_empty());
        assert_eq!(model.slots.len(), 3, "pool exceeds the cap when nothing is mature");
        assert_eq!(model.over_capacity_events, 1);
    }

    #[test]
    fn dropped_feature_returns_fresh() {
        let cfg = PoolConfig {
            drop: Some(DropPolicy { max_slots: 2, min_seen: 1 }),
            ..small_cfg(CellKind::TimeLstm3)
        };
        let mut model = PoolModel::new(cfg, 41);
        model.train_step(&inst(0, vec![(0, 0.5)], 0)).unwrap();
        model.train_step(&inst(1, vec![(1, -0.5)], 1)).unwrap();
        model.train_step(&inst(2, vec![(2, 0.25)], 0)).unwrap();
        assert_eq!(model.slots.len(), 2, "creating a third slot forces a drop");
        let victim = model.dropped[0].1;
        assert_ne!(victim, 2, "the instance's own feature is protected");
        let pass = model.forward(&inst(3, vec![(victim, 0.1)], 0));
        assert_eq!(pass.active[0].dt, 0.0, "a re-arriving dropped feature starts fresh");
        assert_eq!(model.slots[&victim].seen_count, 0);
        assert!(model.slots[&victim].h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reinitialize_resets_and_is_deterministic() {
        let cfg = small_cfg(CellKind::TimeLstm3);
        let mut a = warmed_model(cfg.clone(), 1);
        let mut b = warmed_model(cfg, 2);
        a.reinitialize(77);
        b.reinitialize(77);
        assert_eq!(a.t, 0);
        assert!(a.slots.is_empty());
        assert!(a.c.iter().all(|&v| v == 0.0));
        assert_eq!(a.head, b.head, "same seed, same fresh head");
        let stream: Vec<Instance> = (0..10)
            .map(|t| inst(t, vec![(0, t as f64 / 10.0), (1, -1.0)], (t % 2) as u8))
            .collect();
        for i in &stream {
            let (la, pa) = a.train_step(i).unwrap();
            let (lb, pb) = b.train_step(i).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn census_matches_closed_forms() {
        let cfg = PoolConfig::default();
        assert_eq!(cfg.head_param_count(), 2 * 64 * 64 + 3 * 64 + 2);
        let mut model = PoolModel::new(cfg, 0);
        for id in 0..10 {
            model.ensure_slot(id);
        }
        assert_eq!(model.param_count(), 183_106);
        let claimed = 183_170.0;
        assert!((model.param_count() as f64 - claimed).abs() / claimed < 0.01);
        let narrow = PoolConfig { concat: ConcatMode::OnlyStm, ..PoolConfig::default() };
        assert_eq!(narrow.head_param_count(), 64 * 64 + 3 * 64 + 2);
    }

    #[test]
    fn online_model_step_reports_score_and_pred() {
        let mut model = PoolModel::new(small_cfg(CellKind::TimeLstm3), 15);
        let out = model.step(&inst(0, vec![(0, 0.4)], 1)).unwrap();
        assert!(out.score > 0.0 && out.score < 1.0);
        assert!(out.pred <= 1);
        assert_eq!(model.t, 1);
    }
}
