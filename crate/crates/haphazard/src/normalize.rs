//! Online per-feature normalization.
//!
//! Statistics accumulate one observation at a time (Welford mean/variance
//! plus running min/max), so every instance is normalized using only data
//! seen so far: stats update first, then the fresh value is transformed.
//! A batch recomputation oracle cross-checks the streaming accumulator.

use std::collections::BTreeMap;

use crate::streams::{FeatureId, Instance};

/// Streaming moments for one feature: count, Welford mean and M2, and the
/// running extrema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for FeatureStats {
    fn default() -> Self {
        FeatureStats { count: 0, mean: 0.0, m2: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl FeatureStats {
    /// Folds one observation into the running moments.
    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    /// Sample variance (n-1 denominator); undefined below two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }

    /// The raw accumulator fields, for serialization.
    pub(crate) fn raw_parts(&self) -> (u64, f64, f64, f64, f64) {
        (self.count, self.mean, self.m2, self.min, self.max)
    }

    /// Rebuilds a statistics record from serialized accumulator fields.
    pub(crate) fn from_raw_parts(count: u64, mean: f64, m2: f64, min: f64, max: f64) -> Self {
        FeatureStats { count, mean, m2, min, max }
    }

    pub fn std(&self) -> Option<f64> {
        self.variance().map(f64::sqrt)
    }
}

/// Per-feature statistics for a whole stream, keyed by feature id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    pub features: BTreeMap<FeatureId, FeatureStats>,
}

impl StreamStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, id: FeatureId, x: f64) {
        self.features.entry(id).or_default().update(x);
    }

    pub fn feature(&self, id: FeatureId) -> Option<&FeatureStats> {
        self.features.get(&id)
    }
}

/// Normalization applied to each observed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// Values pass through unchanged (statistics still accumulate).
    None,
    /// (x - min) / (max - min) over the values seen so far.
    MinMax,
    /// x / 10^m with a fixed exponent for the whole run.
    Decimal(u32),
    /// (x - mean) / sample std over the values seen so far.
    ZScore,
    /// x - mean over the values seen so far.
    MeanNorm,
    /// x / L2 norm of the current instance's present values.
    UnitVector,
}

pub const DEFAULT_DECIMAL_EXPONENT: u32 = 3;

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::MinMax => "minmax",
            NormKind::Decimal(_) => "decimal",
            NormKind::ZScore => "zscore",
            NormKind::MeanNorm => "meannorm",
            NormKind::UnitVector => "unitvector",
        }
    }

    /// Parses a normalizer name; `decimal` takes its exponent from
    /// `decimal_m`.
    pub fn parse(name: &str, decimal_m: u32) -> Option<NormKind> {
        match name {
            "none" => Some(NormKind::None),
            "minmax" => Some(NormKind::MinMax),
            "decimal" => Some(NormKind::Decimal(decimal_m)),
            "zscore" => Some(NormKind::ZScore),
            "meannorm" => Some(NormKind::MeanNorm),
            "unitvector" => Some(NormKind::UnitVector),
            _ => None,
        }
    }
}

/// Updates the running statistics with the instance's raw values, then
/// returns the instance with each value normalized. Degenerate statistics
/// (too few observations, zero spread, zero instance norm) map to 0 so
/// early stream positions stay finite.
pub fn normalize_instance(stats: &mut StreamStats, inst: &Instance, kind: NormKind) -> Instance {
    for &(id, x) in &inst.feats {
        stats.update(id, x);
    }
    let inst_norm = match kind {
        NormKind::UnitVector => {
            inst.feats.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
        }
        _ => 0.0,
    };
    let feats = inst
        .feats
        .iter()
        .map(|&(id, x)| {
            let s = &stats.features[&id];
            let v = match kind {
                NormKind::None => x,
                NormKind::MinMax => {
                    let span = s.max - s.min;
                    if span > 0.0 { (x - s.min) / span } else { 0.0 }
                }
                NormKind::Decimal(m) => x / 10f64.powi(m as i32),
                NormKind::ZScore => match s.std() {
                    Some(sd) if sd > 0.0 => (x - s.mean) / sd,
                    _ => 0.0,
                },
                NormKind::MeanNorm => x - s.mean,
                NormKind::UnitVector => {
                    if inst_norm > 0.0 { x / inst_norm } else { 0.0 }
                }
            };
            (id, v)
        })
        .collect();
    Instance { t: inst.t, feats, label: inst.label }
}

/// Two-pass batch recomputation of one feature's statistics, the oracle
/// the streaming accumulator is checked against.
pub fn batch_stats(values: &[f64]) -> FeatureStats {
    if values.is_empty() {
        return FeatureStats::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    FeatureStats {
        count: values.len() as u64,
        mean,
        m2,
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 + 1e-6 * a.abs().max(b.abs())
}

/// Verifies the streaming statistics against a batch recomputation from
/// the raw per-feature history: counts must match exactly, moments and
/// extrema within a small relative tolerance (1e-6, floor 1e-9). Features
/// with empty histories are equivalent to absent ones.
pub fn stats_merge_check(stats: &StreamStats, history: &BTreeMap<FeatureId, Vec<f64>>) -> bool {
    let empty: Vec<f64> = Vec::new();
    let ids: std::collections::BTreeSet<FeatureId> =
        stats.features.keys().chain(history.keys()).cloned().collect();
    for id in ids {
        let values = history.get(&id).unwrap_or(&empty);
        let expected = batch_stats(values);
        let actual = stats.feature(id).cloned().unwrap_or_default();
        if actual.count != expected.count {
            return false;
        }
        if expected.count == 0 {
            continue;
        }
        if !close(actual.mean, expected.mean)
            || !close(actual.min, expected.min)
            || !close(actual.max, expected.max)
        {
            return false;
        }
        if let (Some(va), Some(ve)) = (actual.variance(), expected.variance()) {
            if !close(va, ve) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedRng;
    use approx::assert_relative_eq;

    fn inst(feats: Vec<(FeatureId, f64)>) -> Instance {
        Instance::new(0, feats, 0)
    }

    fn feed(stats: &mut StreamStats, id: FeatureId, values: &[f64]) {
        for &v in values {
            stats.update(id, v);
        }
    }

    #[test]
    fn zscore_hand_case() {
        let mut stats = StreamStats::new();
        feed(&mut stats, 0, &[1.0, 2.0]);
        let out = normalize_instance(&mut stats, &inst(vec![(0, 3.0)]), NormKind::ZScore);
        assert_relative_eq!(out.feats[0].1, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zscore_degenerate_first_observation_is_zero() {
        let mut stats = StreamStats::new();
        let out = normalize_instance(&mut stats, &inst(vec![(0, 7.5)]), NormKind::ZScore);
        assert_eq!(out.feats[0].1, 0.0);
        let out = normalize_instance(&mut stats, &inst(vec![(0, 7.5)]), NormKind::ZScore);
        assert_eq!(out.feats[0].1, 0.0, "zero spread still maps to 0");
    }

    #[test]
    fn minmax_hand_case() {
        let mut stats = StreamStats::new();
        feed(&mut stats, 3, &[4.0]);
        let out = normalize_instance(&mut stats, &inst(vec![(3, 10.0)]), NormKind::MinMax);
        assert_eq!(out.feats[0].1, 1.0);
        let out = normalize_instance(&mut stats, &inst(vec![(3, 7.0)]), NormKind::MinMax);
        assert_relative_eq!(out.feats[0].1, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn minmax_degenerate_is_zero() {
        let mut stats = StreamStats::new();
        let out = normalize_instance(&mut stats, &inst(vec![(0, 42.0)]), NormKind::MinMax);
        assert_eq!(out.feats[0].1, 0.0);
    }

    #[test]
    fn decimal_scaling_hand_case() {
        let mut stats = StreamStats::new();
        let out = normalize_instance(&mut stats, &inst(vec![(0, 334.18)]), NormKind::Decimal(3));
        assert_relative_eq!(out.feats[0].1, 0.33418, max_relative = 1e-12);
        let out = normalize_instance(&mut stats, &inst(vec![(0, 334.18)]), NormKind::Decimal(1));
        assert_relative_eq!(out.feats[0].1, 33.418, max_relative = 1e-12);
    }

    #[test]
    fn meannorm_subtracts_running_mean() {
        let mut stats = StreamStats::new();
        feed(&mut stats, 0, &[1.0, 0.0]);
        let out = normalize_instance(&mut stats, &inst(vec![(0, 5.0)]), NormKind::MeanNorm);
        assert_relative_eq!(out.feats[0].1, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn unitvector_divides_by_instance_norm() {
        let mut stats = StreamStats::new();
        let out =
            normalize_instance(&mut stats, &inst(vec![(0, 3.0), (5, 4.0)]), NormKind::UnitVector);
        assert_relative_eq!(out.feats[0].1, 0.6, max_relative = 1e-12);
        assert_relative_eq!(out.feats[1].1, 0.8, max_relative = 1e-12);
        let out = normalize_instance(&mut stats, &inst(vec![(0, 0.0), (5, 0.0)]), NormKind::UnitVector);
        assert!(out.feats.iter().all(|f| f.1 == 0.0));
    }

    #[test]
    fn none_passes_values_but_still_accumulates() {
        let mut stats = StreamStats::new();
        let out = normalize_instance(&mut stats, &inst(vec![(2, -1.5)]), NormKind::None);
        assert_eq!(out.feats[0].1, -1.5);
        assert_eq!(stats.feature(2).unwrap().count, 1);
    }

    #[test]
    fn empty_instance_is_untouched() {
        let mut stats = StreamStats::new();
        let out = normalize_instance(&mut stats, &inst(vec![]), NormKind::ZScore);
        assert!(out.is_empty());
        assert!(stats.features.is_empty());
    }

    #[test]
    fn welford_matches_batch_on_random_history() {
        let mut rng = SeedRng::from_seed(31);
        let mut stats = StreamStats::new();
        let mut history: BTreeMap<FeatureId, Vec<f64>> = BTreeMap::new();
        for _ in 0..10_000 {
            let id = (rng.next_u64() % 7) as FeatureId;
            let x = rng.uniform(-50.0, 50.0);
            stats.update(id, x);
            history.entry(id).or_default().push(x);
        }
        for (id, values) in &history {
            let expected = batch_stats(values);
            let actual = stats.feature(*id).unwrap();
            assert_eq!(actual.count, expected.count);
            assert_relative_eq!(actual.mean, expected.mean, max_relative = 1e-9);
            assert_relative_eq!(
                actual.variance().unwrap(),
                expected.variance().unwrap(),
                max_relative = 1e-9
            );
            assert_eq!(actual.min, expected.min);
            assert_eq!(actual.max, expected.max);
        }
        assert!(stats_merge_check(&stats, &history));
    }

    #[test]
    fn welford_survives_large_offset() {
        let values: Vec<f64> = [0.1, 0.2, 0.3, 0.4].iter().map(|d| 1e8 + d).collect();
        let mut stats = StreamStats::new();
        feed(&mut stats, 0, &values);
        let expected = batch_stats(&values);
        assert_relative_eq!(expected.mean, 100_000_000.25, max_relative = 1e-12);
        assert_relative_eq!(expected.variance().unwrap(), 0.016666667660077444, max_relative = 1e-6);
        let actual = stats.feature(0).unwrap();
        assert_relative_eq!(actual.variance().unwrap(), expected.variance().unwrap(), max_relative = 1e-6);
        let history = BTreeMap::from([(0, values)]);
        assert!(stats_merge_check(&stats, &history));
    }

    #[test]
    fn merge_check_accepts_empty_and_rejects_drift() {
        assert!(stats_merge_check(&StreamStats::new(), &BTreeMap::new()));
        let history = BTreeMap::from([(0, vec![] as Vec<f64>)]);
        assert!(stats_merge_check(&StreamStats::new(), &history));

        let mut stats = StreamStats::new();
        stats.update(0, 1.0);
        assert!(!stats_merge_check(&stats, &BTreeMap::new()), "extra feature");
        let history = BTreeMap::from([(0, vec![1.0])]);
        assert!(stats_merge_check(&stats, &history));
        let history = BTreeMap::from([(0, vec![2.0])]);
        assert!(!stats_merge_check(&stats, &history), "wrong value");
        let history = BTreeMap::from([(0, vec![1.0, 1.0])]);
        assert!(!stats_merge_check(&stats, &history), "wrong count");
    }

    #[test]
    fn normalizer_names_round_trip() {
        for kind in [
            NormKind::None,
            NormKind::MinMax,
            NormKind::Decimal(3),
            NormKind::ZScore,
            NormKind::MeanNorm,
            NormKind::UnitVector,
        ] {
            assert_eq!(NormKind::parse(kind.name(), 3), Some(kind));
        }
        assert_eq!(NormKind::parse("decimal", 5), Some(NormKind::Decimal(5)));
        assert_eq!(NormKind::parse("bogus", 3), None);
    }

    proptest::proptest! {
        #[test]
        fn minmax_stays_in_unit_interval(values in proptest::collection::vec(-100f64..100.0, 1..40)) {
            let mut stats = StreamStats::new();
            for (t, &v) in values.iter().enumerate() {
                let out = normalize_instance(
                    &mut stats,
                    &Instance::new(t as u64, vec![(0, v)], 0),
                    NormKind::MinMax,
                );
                let y = out.feats[0].1;
                proptest::prop_assert!((0.0..=1.0).contains(&y), "minmax output {} outside [0,1]", y);
            }
        }

        #[test]
        fn unitvector_output_has_unit_norm(values in proptest::collection::vec(0.1f64..10.0, 1..8)) {
            let mut stats = StreamStats::new();
            let feats: Vec<(FeatureId, f64)> =
                values.iter().enumerate().map(|(j, &v)| (j as FeatureId, v)).collect();
            let out = normalize_instance(&mut stats, &Instance::new(0, feats, 0), NormKind::UnitVector);
            let norm = out.feats.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
            proptest::prop_assert!((norm - 1.0).abs() < 1e-9, "norm {}", norm);
        }
    }
}
