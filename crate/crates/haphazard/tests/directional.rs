//! Directional behavior on synthetic streams: the orderings the engine is
//! built to produce, checked on data generated inside the test so they run
//! everywhere. The acceptance suite scores the same orderings on the real
//! benchmark datasets; these margins are calibrated on the generators
//! below and are deliberately conservative.

use haphazard::baselines::{ImputeMethod, ImputingSingle, SingleModel};
use haphazard::cells::CellKind;
use haphazard::eval::{metric_report, run_prequential, MetricReport, NormalizedModel};
use haphazard::normalize::NormKind;
use haphazard::numerics::{AdamConfig, SeedRng};
use haphazard::pool::{PoolConfig, PoolModel};
use haphazard::streams::{mask_bernoulli, schedule_reappearing, DenseRecord, Instance};

const INTERVALS: u32 = 5;

/// Two-class records where every feature carries the class in its sign:
/// label 1 pushes all features up, label 0 down, before per-feature
/// scaling and noise.
fn signed_records(n: usize, width: usize, sep: f64, seed: u64) -> Vec<DenseRecord> {
    let mut rng = SeedRng::from_seed(seed);
    let scales = [3.0, 0.5, 1.0, 20.0, 0.1, 7.0];
    (0..n)
        .map(|_| {
            let label = (rng.unit() < 0.5) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let values = (0..width)
                .map(|j| scales[j % scales.len()] * (sign * sep + rng.uniform(-1.0, 1.0)))
                .collect();
            DenseRecord { values, label }
        })
        .collect()
}

/// Two-class records where the class lives in a shared magnitude factor:
/// all features are positive and move together, so dividing an instance by
/// its own norm cancels the signal exactly.
fn magnitude_records(n: usize, width: usize, seed: u64) -> Vec<DenseRecord> {
    let mut rng = SeedRng::from_seed(seed);
    let scales = [40.0, 1.0, 0.05, 6.0];
    (0..n)
        .map(|_| {
            let label = (rng.unit() < 0.5) as u8;
            let base = if label == 1 { 1.5 } else { 1.0 };
            let values = (0..width)
                .map(|j| scales[j % scales.len()] * (base + rng.uniform(-0.25, 0.25)))
                .collect();
            DenseRecord { values, label }
        })
        .collect()
}

fn pool_bacc(stream: &[Instance], cell: CellKind, norm: NormKind, seed: u64) -> f64 {
    let cfg = PoolConfig {
        cell,
        hidden: 8,
        adam: AdamConfig::with_lr(0.01),
        ..PoolConfig::default()
    };
    let mut model = NormalizedModel::new(PoolModel::new(cfg, seed), norm);
    let run = run_prequential(&mut model, stream, 0, INTERVALS, |_, _| {});
    assert!(run.error.is_none(), "pool run aborted: {:?}", run.error);
    metric_report(&run.records, INTERVALS, 0.0)
        .balanced_accuracy
        .expect("both classes appear")
        * 100.0
}

#[test]
fn pool_learns_a_masked_stream_well_above_chance() {
    let records = signed_records(800, 6, 0.8, 11);
    let stream = mask_bernoulli(&records, 0.5, 21);
    let bacc = pool_bacc(&stream, CellKind::TimeLstm3, NormKind::ZScore, 31);
    assert!(bacc > 70.0, "balanced accuracy {bacc:.2} not well above chance");
}

#[test]
fn zscore_preserves_magnitude_signal_that_unitvector_cancels() {
    let records = magnitude_records(1000, 6, 13);
    let stream = mask_bernoulli(&records, 0.5, 23);
    let zscore = pool_bacc(&stream, CellKind::TimeLstm3, NormKind::ZScore, 33);
    let unit = pool_bacc(&stream, CellKind::TimeLstm3, NormKind::UnitVector, 33);
    assert!(
        zscore - unit >= 10.0,
        "zscore {zscore:.2} vs unitvector {unit:.2}: per-feature normalization should keep \
         the magnitude signal that per-instance normalization divides away"
    );
}

#[test]
fn persistent_model_outscores_one_retrained_each_interval() {
    let records = signed_records(1500, 6, 0.8, 17);
    let stream = schedule_reappearing(&records, INTERVALS);
    let mut gaps = Vec::new();
    for seed in [41u64, 42] {
        let cfg = PoolConfig {
            cell: CellKind::TimeLstm3,
            hidden: 8,
            adam: AdamConfig::with_lr(0.01),
            ..PoolConfig::default()
        };
        let interval3 = |report: &MetricReport| {
            report.interval_bacc[2].expect("interval 3 holds both classes") * 100.0
        };
        let mut persistent = NormalizedModel::new(PoolModel::new(cfg.clone(), seed), NormKind::ZScore);
        let p_run = run_prequential(&mut persistent, &stream, 0, INTERVALS, |_, _| {});
        assert!(p_run.error.is_none());
        let p3 = interval3(&metric_report(&p_run.records, INTERVALS, 0.0));

        let mut retrained = NormalizedModel::new(PoolModel::new(cfg, seed), NormKind::ZScore);
        let r_run = run_prequential(&mut retrained, &stream, 0, INTERVALS, |m, _| {
            m.inner.reinitialize(seed)
        });
        assert!(r_run.error.is_none());
        let r3 = interval3(&metric_report(&r_run.records, INTERVALS, 0.0));
        gaps.push(p3 - r3);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(
        mean_gap > 0.0,
        "returning features should favor the model that kept their cells: gaps {gaps:?}"
    );
}

#[test]
fn pool_beats_imputing_single_model_under_heavy_masking() {
    let records = signed_records(1200, 6, 0.8, 19);
    let stream = mask_bernoulli(&records, 0.25, 29);
    let pool = pool_bacc(&stream, CellKind::TimeLstm3, NormKind::ZScore, 37);

    let single = SingleModel::new(6, 16, 2, AdamConfig::with_lr(0.01), 37);
    let mut model =
        NormalizedModel::new(ImputingSingle::new(single, ImputeMethod::Ffill), NormKind::ZScore);
    let run = run_prequential(&mut model, &stream, 0, INTERVALS, |_, _| {});
    assert!(run.error.is_none(), "baseline run aborted: {:?}", run.error);
    let single = metric_report(&run.records, INTERVALS, 0.0)
        .balanced_accuracy
        .expect("both classes appear")
        * 100.0;

    assert!(
        pool - single >= 5.0,
        "pool {pool:.2} vs imputing single model {single:.2}: stale fills of independent \
         labels should cost the fixed-width model well over five points"
    );
}
