//! Prequential evaluation: the predict-then-train loop, per-instance
//! records, and threshold-free metrics.
//!
//! Every instance is scored before its label is revealed, so the metric
//! record doubles as an honest test log. Ranking metrics (area under the
//! ROC and precision-recall curves) use tie-aware closed forms that are
//! cross-checked against brute-force oracles in the tests.

use std::time::Instant;

use thiserror::Error;

use crate::normalize::{normalize_instance, NormKind, StreamStats};
use crate::streams::{interval_of, Instance};

/// Training failed mid-stream; evaluation stops and keeps the records
/// gathered so far.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at instance {t}")]
    NonFiniteLoss { t: u64, loss: f64 },
}

/// One prediction: the positive-class score and the arg-max label (ties
/// resolve to class 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub score: f64,
    pub pred: u8,
}

impl StepOutcome {
    /// Reads a class-probability vector: the score is the positive-class
    /// probability, the prediction the arg max with ties going to the
    /// lowest class.
    pub fn from_probs(probs: &[f64]) -> Self {
        let mut pred = 0usize;
        for (k, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[pred] {
                pred = k;
            }
        }
        StepOutcome { score: probs[1], pred: pred as u8 }
    }
}

/// A model that predicts on an instance and then trains on its label.
pub trait OnlineModel {
    fn step(&mut self, inst: &Instance) -> Result<StepOutcome, TrainError>;
}

/// The outcome of scoring one instance, written before the next arrives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub t: u64,
    pub score: f64,
    pub pred: u8,
    pub label: u8,
    pub interval: u32,
    pub empty: bool,
}

/// One line of the score log: `t,score,pred,label,interval,empty`.
pub fn format_score_line(r: &MetricRecord) -> String {
    format!("{},{},{},{},{},{}", r.t, r.score, r.pred, r.label, r.interval, r.empty as u8)
}

/// Everything a prequential pass produced: the per-instance records, the
/// error that stopped it early (if any), and the wall time.
#[derive(Debug)]
pub struct PrequentialRun {
    pub records: Vec<MetricRecord>,
    pub error: Option<TrainError>,
    pub wall_secs: f64,
}

/// Runs the predict-then-train loop over `stream[start..]`, assigning
/// intervals by position within the full stream. `on_boundary` fires with
/// the new interval id whenever the interval changes between consecutive
/// instances, before the first instance of the new interval is processed.
/// A training error aborts the pass but keeps the partial record.
pub fn run_prequential<M: OnlineModel>(
    model: &mut M,
    stream: &[Instance],
    start: usize,
    intervals: u32,
    mut on_boundary: impl FnMut(&mut M, u32),
) -> PrequentialRun {
    let total = stream.len() as u64;
    let clock = Instant::now();
    let mut records = Vec::with_capacity(stream.len() - start);
    let mut error = None;
    let mut prev_interval = if start == 0 { 1 } else { interval_of(start as u64 - 1, total, intervals) };
    for (pos, inst) in stream.iter().enumerate().skip(start) {
        let interval = interval_of(pos as u64, total, intervals);
        if interval != prev_interval {
            on_boundary(model, interval);
            prev_interval = interval;
        }
        match model.step(inst) {
            Ok(out) => records.push(MetricRecord {
                t: inst.t,
                score: out.score,
                pred: out.pred,
                label: inst.label,
                interval,
                empty: inst.is_empty(),
            }),
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    PrequentialRun { records, error, wall_secs: clock.elapsed().as_secs_f64() }
}

/// A model together with the online normalizer feeding it: statistics
/// update and values transform before each inner step.
pub struct NormalizedModel<M> {
    pub inner: M,
    pub stats: StreamStats,
    pub kind: NormKind,
}

impl<M> NormalizedModel<M> {
    pub fn new(inner: M, kind: NormKind) -> Self {
        NormalizedModel { inner, stats: StreamStats::new(), kind }
    }
}

impl<M: OnlineModel> OnlineModel for NormalizedModel<M> {
    fn step(&mut self, inst: &Instance) -> Result<StepOutcome, TrainError> {
        let normalized = normalize_instance(&mut self.stats, inst, self.kind);
        self.inner.step(&normalized)
    }
}

/// Balanced accuracy: mean of sensitivity and specificity. Undefined
/// unless both classes appear.
pub fn balanced_accuracy(preds: &[u8], labels: &[u8]) -> Option<f64> {
    assert_eq!(preds.len(), labels.len());
    let (mut tp, mut tn, mut pos, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &y) in preds.iter().zip(labels) {
        if y == 1 {
            pos += 1;
            tp += (p == 1) as u64;
        } else {
            neg += 1;
            tn += (p == 0) as u64;
        }
    }
    (pos > 0 && neg > 0).then(|| (tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

/// Ranks with ties averaged (1-based), the standard Mann-Whitney
/// treatment.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the rank-sum identity; tied scores count
/// half. Undefined unless both classes appear.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 =
        ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Some(u / (n_pos * n_neg))
}

/// Area under the precision-recall curve as average precision: cutoffs
/// walk the distinct scores in descending order, each contributing its
/// precision weighted by the recall it adds. Undefined with no positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    if n_pos == 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut ap = 0.0;
    let mut seen = 0.0;
    let mut hits = 0.0;
    let mut recall_prev = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            seen += 1.0;
            hits += (labels[idx] == 1) as u64 as f64;
        }
        let precision = hits / seen;
        let recall = hits / n_pos;
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j + 1;
    }
    Some(ap)
}

/// Summary of one prequential pass; rate metrics are fractions in [0,1]
/// and render scaled to percentage points with two decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub instances: u64,
    pub errors: u64,
    pub accuracy: f64,
    pub balanced_accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub wall_secs: f64,
    pub interval_bacc: Vec<Option<f64>>,
}

/// Percentage with two decimals, or `n/a` when the metric is undefined.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "n/a".to_string(),
    }
}

/// Mean and sample standard deviation (undefined below two values).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean, std)
}

/// `mean ± std` over percentage-scaled values, two decimals each.
pub fn fmt_mean_std(values: &[f64]) -> String {
    let (mean, std) = mean_std(values);
    match std {
        Some(s) => format!("{:.2} ± {:.2}", mean * 100.0, s * 100.0),
        None => format!("{:.2}", mean * 100.0),
    }
}

/// Builds the summary for a pass: error count, accuracy, balanced
/// accuracy, ranking metrics, and balanced accuracy per interval (an
/// interval nobody landed in reports as undefined).
pub fn metric_report(records: &[MetricRecord], intervals: u32, wall_secs: f64) -> MetricReport {
    let preds: Vec<u8> = records.iter().map(|r| r.pred).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let errors = records.iter().filter(|r| r.pred != r.label).count() as u64;
    let interval_bacc = (1..=intervals)
        .map(|k| {
            let (p, l): (Vec<u8>, Vec<u8>) = records
                .iter()
                .filter(|r| r.interval == k)
                .map(|r| (r.pred, r.label))
                .unzip();
            if p.is_empty() {
                None
            } else {
                balanced_accuracy(&p, &l)
            }
        })
        .collect();
    MetricReport {
        instances: records.len() as u64,
        errors,
        accuracy: if records.is_empty() {
            0.0
        } else {
            1.0 - errors as f64 / records.len() as f64
        },
        balanced_accuracy: balanced_accuracy(&preds, &labels),
        auroc: auroc(&scores, &labels),
        auprc: average_precision(&scores, &labels),
        wall_secs,
        interval_bacc,
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "instances: {}", self.instances)?;
        writeln!(f, "errors: {}", self.errors)?;
        writeln!(f, "accuracy: {}", fmt_metric(Some(self.accuracy)))?;
        writeln!(f, "balanced_accuracy: {}", fmt_metric(self.balanced_accuracy))?;
        writeln!(f, "auroc: {}", fmt_metric(self.auroc))?;
        writeln!(f, "auprc: {}", fmt_metric(self.auprc))?;
        writeln!(f, "wall_secs: {:.3}", self.wall_secs)?;
        let per_interval: Vec<String> =
            self.interval_bacc.iter().map(|b| fmt_metric(*b)).collect();
        writeln!(f, "interval_balanced_accuracy: {}", per_interval.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedRng;
    use approx::assert_relative_eq;

    /// Counts concordant pairs one by one; the quadratic oracle.
    fn auroc_oracle(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 1)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 0)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        Some(wins / (pos.len() * neg.len()) as f64)
    }

    /// Recomputes precision and recall from scratch at every distinct
    /// threshold; the quadratic oracle.
    fn ap_oracle(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        if n_pos == 0.0 {
            return None;
        }
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut ap = 0.0;
        let mut recall_prev = 0.0;
        for &th in &thresholds {
            let kept: Vec<usize> =
                (0..scores.len()).filter(|&i| scores[i] >= th).collect();
            let hits = kept.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let precision = hits / kept.len() as f64;
            let recall = hits / n_pos;
            ap += (recall - recall_prev) * precision;
            recall_prev = recall;
        }
        Some(ap)
    }

    #[test]
    fn tie_heavy_ranking_case() {
        let scores = [0.9, 0.9, 0.8, 0.5, 0.5, 0.5, 0.3, 0.2, 0.2, 0.1];
        let labels = [1, 0, 1, 1, 0, 0, 1, 0, 1, 0];
        assert_relative_eq!(auroc(&scores, &labels).unwrap(), 0.6, max_relative = 1e-14);
        assert_relative_eq!(
            average_precision(&scores, &labels).unwrap(),
            0.5587301587301587,
            max_relative = 1e-14
        );
    }

    #[test]
    fn small_ranking_cases() {
        assert_relative_eq!(
            auroc(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap(),
            0.5,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            average_precision(&[0.9, 0.8], &[0, 1]).unwrap(),
            0.5,
            max_relative = 1e-14
        );
        assert_eq!(auroc(&[0.9, 0.1], &[1, 0]), Some(1.0));
        assert_eq!(average_precision(&[0.9, 0.1], &[1, 0]), Some(1.0));
        assert_eq!(average_precision(&[0.2, 0.7], &[1, 1]), Some(1.0));
        assert_eq!(auroc(&[0.2, 0.7], &[1, 1]), None);
        assert_eq!(auroc(&[0.2, 0.7], &[0, 0]), None);
        assert_eq!(average_precision(&[0.2, 0.7], &[0, 0]), None);
    }

    #[test]
    fn ranking_matches_oracles_with_ties() {
        let mut rng = SeedRng::from_seed(404);
        for round in 0..6 {
            let n = 500;
            let grid = [10.0, 7.0, 4.0, 100.0][round % 4];
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.unit() * grid).floor() / grid).collect();
            let labels: Vec<u8> = (0..n).map(|_| (rng.unit() < 0.4) as u8).collect();
            assert_relative_eq!(
                auroc(&scores, &labels).unwrap(),
                auroc_oracle(&scores, &labels).unwrap(),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                average_precision(&scores, &labels).unwrap(),
                ap_oracle(&scores, &labels).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn balanced_accuracy_hand_cases() {
        assert_relative_eq!(
            balanced_accuracy(&[1, 1, 1, 0], &[1, 1, 0, 0]).unwrap(),
            0.75,
            max_relative = 1e-14
        );
        assert_eq!(balanced_accuracy(&[1, 1], &[1, 0]), Some(0.5));
        assert_eq!(balanced_accuracy(&[1, 1], &[1, 1]), None);
        assert_eq!(balanced_accuracy(&[0, 0], &[0, 0]), None);
    }

    #[test]
    fn mean_std_frozen_case() {
        let (mean, std) = mean_std(&[68.2, 68.4]);
        assert_relative_eq!(mean, 68.3, max_relative = 1e-12);
        assert_relative_eq!(std.unwrap(), 0.14142135623731153, max_relative = 1e-12);
        assert_eq!(mean_std(&[5.0]).1, None);
        assert_eq!(fmt_mean_std(&[0.682, 0.684]), "68.30 ± 0.14");
        assert_eq!(fmt_mean_std(&[0.682]), "68.20");
    }

    #[test]
    fn metric_formatting() {
        assert_eq!(fmt_metric(Some(0.71364)), "71.36");
        assert_eq!(fmt_metric(None), "n/a");
        let r = MetricRecord { t: 3, score: 0.25, pred: 0, label: 1, interval: 2, empty: true };
        assert_eq!(format_score_line(&r), "3,0.25,0,1,2,1");
        assert_eq!(StepOutcome::from_probs(&[0.5, 0.5]), StepOutcome { score: 0.5, pred: 0 });
        assert_eq!(StepOutcome::from_probs(&[0.3, 0.7]), StepOutcome { score: 0.7, pred: 1 });
    }

    struct Stub {
        fail_at: Option<u64>,
        steps: Vec<u64>,
    }

    impl OnlineModel for Stub {
        fn step(&mut self, inst: &Instance) -> Result<StepOutcome, TrainError> {
            if self.fail_at == Some(inst.t) {
                return Err(TrainError::NonFiniteLoss { t: inst.t, loss: f64::NAN });
            }
            self.steps.push(inst.t);
            let pred = inst.label;
            Ok(StepOutcome { score: if pred == 1 { 0.9 } else { 0.1 }, pred })
        }
    }

    fn toy_stream(n: usize) -> Vec<Instance> {
        (0..n)
            .map(|t| Instance::new(t as u64, vec![(0, t as f64)], (t % 2) as u8))
            .collect()
    }

    #[test]
    fn prequential_records_every_instance() {
        let mut model = Stub { fail_at: None, steps: vec![] };
        let run = run_prequential(&mut model, &toy_stream(10), 0, 5, |_, _| {});
        assert!(run.error.is_none());
        assert_eq!(run.records.len(), 10);
        assert_eq!(model.steps, (0..10).collect::<Vec<u64>>());
        let intervals: Vec<u32> = run.records.iter().map(|r| r.interval).collect();
        assert_eq!(intervals, vec![1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        let report = metric_report(&run.records, 5, run.wall_secs);
        assert_eq!(report.errors, 0);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.balanced_accuracy, Some(1.0));
        assert!(report.interval_bacc.iter().all(|b| *b == Some(1.0)));
    }

    #[test]
    fn prequential_aborts_on_error_and_keeps_partial_records() {
        let mut model = Stub { fail_at: Some(6), steps: vec![] };
        let run = run_prequential(&mut model, &toy_stream(10), 0, 5, |_, _| {});
        match run.error {
            Some(TrainError::NonFiniteLoss { t: 6, loss }) => assert!(loss.is_nan()),
            ref other => panic!("expected abort at instance 6, got {other:?}"),
        }
        assert!(run.error.as_ref().unwrap().to_string().contains("instance 6"));
        assert_eq!(run.records.len(), 6);
        assert_eq!(run.records.last().unwrap().t, 5);
    }

    #[test]
    fn boundary_callback_fires_once_per_transition() {
        let mut model = Stub { fail_at: None, steps: vec![] };
        let mut boundaries = Vec::new();
        run_prequential(&mut model, &toy_stream(10), 0, 5, |_, k| boundaries.push(k));
        assert_eq!(boundaries, vec![2, 3, 4, 5]);
    }

    #[test]
    fn prequential_resumes_mid_stream() {
        let stream = toy_stream(10);
        let mut model = Stub { fail_at: None, steps: vec![] };
        let run = run_prequential(&mut model, &stream, 7, 5, |_, _| {});
        assert_eq!(model.steps, vec![7, 8, 9]);
        assert_eq!(run.records[0].interval, 4);
        let mut boundaries = Vec::new();
        let mut model = Stub { fail_at: None, steps: vec![] };
        run_prequential(&mut model, &stream, 7, 5, |_, k| boundaries.push(k));
        assert_eq!(boundaries, vec![5], "only the transition inside the tail fires");
    }

    #[test]
    fn empty_interval_reports_missing() {
        let records = vec![
            MetricRecord { t: 0, score: 0.9, pred: 1, label: 1, interval: 1, empty: false },
            MetricRecord { t: 1, score: 0.2, pred: 0, label: 0, interval: 1, empty: false },
        ];
        let report = metric_report(&records, 3, 0.0);
        assert_eq!(report.interval_bacc, vec![Some(1.0), None, None]);
    }

    #[test]
    fn normalized_model_feeds_transformed_values() {
        struct Capture(Vec<f64>);
        impl OnlineModel for Capture {
            fn step(&mut self, inst: &Instance) -> Result<StepOutcome, TrainError> {
                self.0.extend(inst.feats.iter().map(|f| f.1));
                Ok(StepOutcome { score: 0.5, pred: 0 })
            }
        }
        let mut model = NormalizedModel::new(Capture(vec![]), NormKind::Decimal(2));
        let stream = vec![Instance::new(0, vec![(0, 250.0)], 1)];
        run_prequential(&mut model, &stream, 0, 1, |_, _| {});
        assert_eq!(model.inner.0, vec![2.5]);
        assert_eq!(model.stats.feature(0).unwrap().max, 250.0, "stats see raw values");
    }

    proptest::proptest! {
        #[test]
        fn ranking_is_monotone_invariant(
            raw in proptest::collection::vec((1u32..6, 0u8..2), 4..60)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, y)| *y).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
            match (auroc(&scores, &labels), auroc(&mapped, &labels)) {
                (Some(a), Some(b)) => proptest::prop_assert!((a - b).abs() < 1e-12),
                (a, b) => proptest::prop_assert_eq!(a, b),
            }
            match (average_precision(&scores, &labels), average_precision(&mapped, &labels)) {
                (Some(a), Some(b)) => proptest::prop_assert!((a - b).abs() < 1e-12),
                (a, b) => proptest::prop_assert_eq!(a, b),
            }
        }
    }
}
