//! Dataset ingestion and haphazard-stream construction.
//!
//! Readers load dense CSV or svmlight files (gzip-transparent). Generators
//! then turn dense records into haphazard instances: independent Bernoulli
//! masking per feature, interval schedules that grow, shrink, or alternate
//! the available feature set, and a masking variant whose keep probability
//! toggles on a fixed period. All generators preserve record order and
//! labels and are deterministic per seed.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use thiserror::Error;

use crate::numerics::SeedRng;

pub type FeatureId = u32;

/// One row of a dense dataset: a fixed-width feature vector plus a binary
/// label.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseRecord {
    pub values: Vec<f64>,
    pub label: u8,
}

/// One streaming instance: the features that happen to be present at
/// position `t`, sorted by feature id, plus the label revealed after
/// prediction. May be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub t: u64,
    pub feats: Vec<(FeatureId, f64)>,
    pub label: u8,
}

impl Instance {
    /// Builds an instance, sorting the features by id.
    ///
    /// Panics if two features share an id: an instance observes each
    /// feature at most once.
    pub fn new(t: u64, mut feats: Vec<(FeatureId, f64)>, label: u8) -> Self {
        feats.sort_by_key(|(id, _)| *id);
        for pair in feats.windows(2) {
            assert_ne!(pair[0].0, pair[1].0, "duplicate feature id {} at t={}", pair[0].0, t);
        }
        Instance { t, feats, label }
    }

    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }
}

/// How a dense dataset is turned into a haphazard stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Keep each feature of each record independently with probability `p`.
    Bernoulli { p: f64 },
    /// Feature set grows by roughly a fifth of the features per interval.
    Sudden,
    /// All features at first, then roughly a fifth retires per interval.
    Obsolete,
    /// First half of the features in odd intervals, second half in even.
    Reappearing,
    /// Bernoulli masking whose `p` toggles between two values every
    /// `period` instances, starting at `p_low`.
    Alternating { p_low: f64, p_high: f64, period: u64 },
}

pub const DEFAULT_INTERVALS: u32 = 5;

/// Interval id (1-based) of the instance at 0-based position `t` in a
/// stream of `total` instances split into `intervals` parts. The single
/// assignment rule shared by the schedule generators and the per-interval
/// metric report.
pub fn interval_of(t: u64, total: u64, intervals: u32) -> u32 {
    assert!(intervals > 0, "interval count must be positive");
    assert!(t < total, "instance index {t} out of range for {total} instances");
    let k = (intervals as u64 * t / total) as u32 + 1;
    k.min(intervals)
}

/// Nearest-integer feature count with halves rounding up (1.6 -> 2,
/// 3.2 -> 3, 10.5 -> 11).
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Ids `0..m` where `m` is the rounded share `num/den` of `n` features.
fn leading_features(n: usize, num: u32, den: u32) -> usize {
    round_half_up(n as f64 * num as f64 / den as f64)
}

/// Independent Bernoulli masking: every feature of every record is kept
/// with probability `p`, one draw per (record, feature) cell in order, so
/// the whole stream is reproducible from the seed.
pub fn mask_bernoulli(records: &[DenseRecord], p: f64, seed: u64) -> Vec<Instance> {
    assert!((0.0..=1.0).contains(&p), "keep probability must lie in [0,1]");
    let mut rng = SeedRng::from_seed(seed);
    records
        .iter()
        .enumerate()
        .map(|(t, rec)| {
            let feats = rec
                .values
                .iter()
                .enumerate()
                .filter_map(|(j, &v)| (rng.unit() < p).then_some((j as FeatureId, v)))
                .collect();
            Instance::new(t as u64, feats, rec.label)
        })
        .collect()
}

/// Masking whose keep probability toggles between `p_low` and `p_high`
/// every `period` instances, starting with `p_low`.
pub fn schedule_alternating(
    records: &[DenseRecord],
    p_low: f64,
    p_high: f64,
    period: u64,
    seed: u64,
) -> Vec<Instance> {
    assert!((0.0..=1.0).contains(&p_low) && (0.0..=1.0).contains(&p_high));
    assert!(period > 0, "alternating period must be positive");
    let mut rng = SeedRng::from_seed(seed);
    records
        .iter()
        .enumerate()
        .map(|(t, rec)| {
            let p = if (t as u64 / period) % 2 == 0 { p_low } else { p_high };
            let feats = rec
                .values
                .iter()
                .enumerate()
                .filter_map(|(j, &v)| (rng.unit() < p).then_some((j as FeatureId, v)))
                .collect();
            Instance::new(t as u64, feats, rec.label)
        })
        .collect()
}

fn keep_leading(records: &[DenseRecord], intervals: u32, count: impl Fn(u32, usize) -> usize) -> Vec<Instance> {
    assert!(!records.is_empty(), "schedule requires a nonempty record sequence");
    let total = records.len() as u64;
    records
        .iter()
        .enumerate()
        .map(|(t, rec)| {
            let k = interval_of(t as u64, total, intervals);
            let m = count(k, rec.values.len());
            let feats = rec
                .values
                .iter()
                .enumerate()
                .take(m)
                .map(|(j, &v)| (j as FeatureId, v))
                .collect();
            Instance::new(t as u64, feats, rec.label)
        })
        .collect()
}

/// Sudden features: interval k carries the first `round(k*N/intervals)`
/// features, so roughly a fifth of the feature space arrives per interval
/// and the final interval carries all of it.
pub fn schedule_sudden(records: &[DenseRecord], intervals: u32) -> Vec<Instance> {
    keep_leading(records, intervals, |k, n| leading_features(n, k, intervals))
}

/// Obsolete features: the mirror image of [`schedule_sudden`] — all
/// features in interval 1, then the trailing fifth retires each interval.
pub fn schedule_obsolete(records: &[DenseRecord], intervals: u32) -> Vec<Instance> {
    keep_leading(records, intervals, |k, n| leading_features(n, intervals + 1 - k, intervals))
}

/// Reappearing features: odd intervals carry the first half of the
/// features (round-half-up), even intervals the complement.
pub fn schedule_reappearing(records: &[DenseRecord], intervals: u32) -> Vec<Instance> {
    assert!(!records.is_empty(), "schedule requires a nonempty record sequence");
    let total = records.len() as u64;
    records
        .iter()
        .enumerate()
        .map(|(t, rec)| {
            let k = interval_of(t as u64, total, intervals);
            let half = leading_features(rec.values.len(), 1, 2);
            let feats = rec
                .values
                .iter()
                .enumerate()
                .filter_map(|(j, &v)| {
                    let in_first_half = j < half;
                    let odd_interval = k % 2 == 1;
                    (in_first_half == odd_interval).then_some((j as FeatureId, v))
                })
                .collect();
            Instance::new(t as u64, feats, rec.label)
        })
        .collect()
}

/// Builds the instance stream for any schedule with one entry point.
pub fn build_stream(
    records: &[DenseRecord],
    schedule: &Schedule,
    intervals: u32,
    seed: u64,
) -> Vec<Instance> {
    match schedule {
        Schedule::Bernoulli { p } => mask_bernoulli(records, *p, seed),
        Schedule::Sudden => schedule_sudden(records, intervals),
        Schedule::Obsolete => schedule_obsolete(records, intervals),
        Schedule::Reappearing => schedule_reappearing(records, intervals),
        Schedule::Alternating { p_low, p_high, period } => {
            schedule_alternating(records, *p_low, *p_high, *period, seed)
        }
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("io error reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("line {line}: unrecognized label {value:?} (expected 0/1, -1/+1, or g/h)")]
    Label { line: u64, value: String },
    #[error("line {line}: feature index {index} exceeds declared width {width}")]
    SparseIndex { line: u64, index: usize, width: usize },
}

/// Opens a dataset file, decompressing transparently when the path ends in
/// `.gz`.
fn open_reader(path: &Path) -> Result<Box<dyn Read>, ReadError> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(MultiGzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

fn parse_label(cell: &str, line: u64) -> Result<u8, ReadError> {
    let cell = cell.trim();
    match cell {
        "g" | "G" => return Ok(1),
        "h" | "H" => return Ok(0),
        _ => {}
    }
    let value: f64 = cell
        .parse()
        .map_err(|_| ReadError::Label { line, value: cell.to_string() })?;
    if value == 1.0 {
        Ok(1)
    } else if value == 0.0 || value == -1.0 {
        Ok(0)
    } else {
        Err(ReadError::Label { line, value: cell.to_string() })
    }
}

/// Reads a rectangular comma-separated file into dense records.
///
/// `label_col` indexes the label column; every other column must parse as
/// a float. Labels accept 0/1, -1/+1, and the g/h letter encoding (g maps
/// to the positive class). Ragged rows and non-numeric cells are reported
/// with their 1-based line number.
pub fn read_csv(path: &Path, label_col: usize, has_header: bool) -> Result<Vec<DenseRecord>, ReadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(open_reader(path)?);
    let mut records = Vec::new();
    let mut width = None;
    for (idx, row) in reader.records().enumerate() {
        let line = idx as u64 + 1 + has_header as u64;
        let row = row.map_err(|e| ReadError::Malformed { line, msg: e.to_string() })?;
        if row.len() <= label_col {
            return Err(ReadError::Malformed {
                line,
                msg: format!("row has {} columns, label column is {}", row.len(), label_col),
            });
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(ReadError::Malformed {
                    line,
                    msg: format!("row has {} columns, expected {w}", row.len()),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(row.len() - 1);
        let mut label = 0u8;
        for (col, cell) in row.iter().enumerate() {
            if col == label_col {
                label = parse_label(cell, line)?;
            } else {
                let v: f64 = cell.parse().map_err(|_| ReadError::Malformed {
                    line,
                    msg: format!("non-numeric cell {cell:?} in column {col}"),
                })?;
                values.push(v);
            }
        }
        records.push(DenseRecord { values, label });
    }
    Ok(records)
}

/// Column count of the first data row, or 0 for a file with no data rows.
/// Useful for resolving a "last column" label position before reading.
pub fn csv_width(path: &Path, has_header: bool) -> Result<usize, ReadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open_reader(path)?);
    match reader.records().next() {
        None => Ok(0),
        Some(row) => {
            let line = 1 + has_header as u64;
            Ok(row.map_err(|e| ReadError::Malformed { line, msg: e.to_string() })?.len())
        }
    }
}

fn parse_svmlight_line(
    line_no: u64,
    line: &str,
    width: usize,
) -> Result<Option<(u8, Vec<(FeatureId, f64)>)>, ReadError> {
    let line = match line.split('#').next() {
        Some(content) => content.trim(),
        None => "",
    };
    if line.is_empty() {
        return Ok(None);
    }
    let mut parts = line.split_whitespace();
    let label = parse_label(parts.next().unwrap(), line_no)?;
    let mut feats: Vec<(FeatureId, f64)> = Vec::new();
    for part in parts {
        let (idx, val) = part.split_once(':').ok_or_else(|| ReadError::Malformed {
            line: line_no,
            msg: format!("expected index:value, found {part:?}"),
        })?;
        let idx: usize = idx.parse().map_err(|_| ReadError::Malformed {
            line: line_no,
            msg: format!("non-integer feature index {idx:?}"),
        })?;
        if idx == 0 || idx > width {
            return Err(ReadError::SparseIndex { line: line_no, index: idx, width });
        }
        let val: f64 = val.parse().map_err(|_| ReadError::Malformed {
            line: line_no,
            msg: format!("non-numeric feature value {val:?}"),
        })?;
        feats.push((idx as FeatureId - 1, val));
    }
    Ok(Some((label, feats)))
}

/// Reads an svmlight/libsvm file ("label idx:val ...", 1-based indices)
/// into dense records of width `n_features`, with absent indices as 0.
pub fn read_svmlight(path: &Path, n_features: usize) -> Result<Vec<DenseRecord>, ReadError> {
    let reader = BufReader::new(open_reader(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if let Some((label, feats)) = parse_svmlight_line(line_no, &line, n_features)? {
            let mut values = vec![0.0; n_features];
            for (id, v) in feats {
                values[id as usize] = v;
            }
            records.push(DenseRecord { values, label });
        }
    }
    Ok(records)
}

/// Reads an svmlight file directly as already-haphazard instances: each
/// line's present indices become the instance's feature set, bypassing
/// densification and masking.
pub fn read_svmlight_instances(path: &Path, n_features: usize) -> Result<Vec<Instance>, ReadError> {
    let reader = BufReader::new(open_reader(path)?);
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if let Some((label, feats)) = parse_svmlight_line(line_no, &line, n_features)? {
            instances.push(Instance::new(instances.len() as u64, feats, label));
        }
    }
    Ok(instances)
}

/// Distinct feature ids appearing anywhere in a stream.
pub fn distinct_features(stream: &[Instance]) -> BTreeSet<FeatureId> {
    stream.iter().flat_map(|i| i.feats.iter().map(|(id, _)| *id)).collect()
}
