//! Flat key=value run configuration, overridable from the command line.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Every hyperparameter of both model families is a named key, so
//! a whole experiment is reproducible from the file plus a seed list.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use haphazard::baselines::{ImputeMethod, DEFAULT_SINGLE_HIDDEN};
use haphazard::cells::CellKind;
use haphazard::normalize::NormKind;
use haphazard::numerics::{AdamConfig, SeedRng};
use haphazard::pool::{Aggregator, ConcatMode, DropPolicy, FeatSpace, PoolConfig};
use haphazard::streams::{Schedule, DEFAULT_INTERVALS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataFormat {
    /// Rectangular comma-separated rows, one column holding the label.
    Csv,
    /// svmlight rows densified to a fixed width.
    Svmlight,
    /// svmlight rows kept sparse: presence in the file IS the feature
    /// pattern, so no schedule is applied on top.
    SvmlightSparse,
}

impl DataFormat {
    pub fn name(self) -> &'static str {
        match self {
            DataFormat::Csv => "csv",
            DataFormat::Svmlight => "svmlight",
            DataFormat::SvmlightSparse => "svmlight_sparse",
        }
    }

    fn parse(v: &str) -> Option<Self> {
        match v {
            "csv" => Some(DataFormat::Csv),
            "svmlight" => Some(DataFormat::Svmlight),
            "svmlight_sparse" => Some(DataFormat::SvmlightSparse),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelCol {
    First,
    Last,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelFamily {
    /// One recurrent cell per feature plus shared aggregated memory.
    Pool,
    /// One fixed-width recurrent model fed by imputation.
    Single,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Pool => "pool",
            ModelFamily::Single => "single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    None,
    Bernoulli,
    Sudden,
    Obsolete,
    Reappearing,
    Alternating,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::None => "none",
            ScheduleKind::Bernoulli => "bernoulli",
            ScheduleKind::Sudden => "sudden",
            ScheduleKind::Obsolete => "obsolete",
            ScheduleKind::Reappearing => "reappearing",
            ScheduleKind::Alternating => "alternating",
        }
    }

    fn parse(v: &str) -> Option<Self> {
        match v {
            "none" => Some(ScheduleKind::None),
            "bernoulli" => Some(ScheduleKind::Bernoulli),
            "sudden" => Some(ScheduleKind::Sudden),
            "obsolete" => Some(ScheduleKind::Obsolete),
            "reappearing" => Some(ScheduleKind::Reappearing),
            "alternating" => Some(ScheduleKind::Alternating),
            _ => None,
        }
    }
}

/// Everything one experiment needs: dataset, stream construction,
/// normalization, model family and hyperparameters, seeds, and output
/// locations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub format: DataFormat,
    pub label_col: LabelCol,
    pub header: bool,
    pub n_features: Option<usize>,
    pub limit: Option<usize>,

    pub schedule: ScheduleKind,
    pub p: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub period: u64,
    pub intervals: u32,

    pub normalizer: String,
    pub decimal_m: u32,

    pub model: ModelFamily,
    pub cell: CellKind,
    pub hidden: usize,
    pub agg: Aggregator,
    pub feat_space: FeatSpace,
    pub concat: ConcatMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub classes: usize,
    pub drop_max_slots: Option<usize>,
    pub drop_min_seen: Option<u64>,

    pub single_method: ImputeMethod,
    pub single_hidden: usize,

    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            format: DataFormat::Csv,
            label_col: LabelCol::Last,
            header: false,
            n_features: None,
            limit: None,
            schedule: ScheduleKind::Bernoulli,
            p: 0.5,
            p_low: 0.2,
            p_high: 0.8,
            period: 1000,
            intervals: DEFAULT_INTERVALS,
            normalizer: "zscore".to_string(),
            decimal_m: 3,
            model: ModelFamily::Pool,
            cell: CellKind::TimeLstm3,
            hidden: 64,
            agg: Aggregator::Max,
            feat_space: FeatSpace::Current,
            concat: ConcatMode::Both,
            lr: 1e-3,
            weight_decay: 0.01,
            classes: 2,
            drop_max_slots: None,
            drop_min_seen: None,
            single_method: ImputeMethod::Ffill,
            single_hidden: DEFAULT_SINGLE_HIDDEN,
            seeds: vec![0],
            out_dir: None,
            checkpoint_in: None,
            checkpoint_out: None,
        }
    }
}

fn bad_value(key: &str, value: &str, expected: &str) -> anyhow::Error {
    anyhow!("config key '{key}': unknown value {value:?} (expected {expected})")
}

fn parse_num<T>(key: &str, value: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("config key '{key}': invalid value {value:?} ({e})"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad_value(key, value, "true|false")),
    }
}

impl RunConfig {
    /// Reads a config file, then applies `key=value` overrides in order.
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key=value, found {line:?}", no + 1))?;
            cfg.apply(key.trim(), value.trim())
                .with_context(|| format!("config line {}", no + 1))?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("--set {item:?}: expected key=value"))?;
            self.apply(key.trim(), value.trim())
                .with_context(|| format!("--set {item:?}"))?;
        }
        Ok(())
    }

    /// Sets one key from its textual value; rejects unknown keys and
    /// unparseable values with the key named in the error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "format" => {
                self.format = DataFormat::parse(value)
                    .ok_or_else(|| bad_value(key, value, "csv|svmlight|svmlight_sparse"))?
            }
            "label_col" => {
                self.label_col = match value {
                    "first" => LabelCol::First,
                    "last" => LabelCol::Last,
                    _ => LabelCol::Index(parse_num(key, value)?),
                }
            }
            "header" => self.header = parse_bool(key, value)?,
            "n_features" => self.n_features = Some(parse_num(key, value)?),
            "limit" => self.limit = Some(parse_num(key, value)?),
            "schedule" => {
                self.schedule = ScheduleKind::parse(value).ok_or_else(|| {
                    bad_value(key, value, "none|bernoulli|sudden|obsolete|reappearing|alternating")
                })?
            }
            "p" => self.p = parse_num(key, value)?,
            "p_low" => self.p_low = parse_num(key, value)?,
            "p_high" => self.p_high = parse_num(key, value)?,
            "period" => self.period = parse_num(key, value)?,
            "intervals" => self.intervals = parse_num(key, value)?,
            "normalizer" => {
                if NormKind::parse(value, self.decimal_m).is_none() {
                    return Err(bad_value(
                        key,
                        value,
                        "none|minmax|decimal|zscore|meannorm|unitvector",
                    ));
                }
                self.normalizer = value.to_string();
            }
            "decimal_m" => self.decimal_m = parse_num(key, value)?,
            "model" => {
                self.model = match value {
                    "pool" => ModelFamily::Pool,
                    "single" => ModelFamily::Single,
                    _ => return Err(bad_value(key, value, "pool|single")),
                }
            }
            "cell" => {
                self.cell = CellKind::parse(value).ok_or_else(|| {
                    bad_value(
                        key,
                        value,
                        "time_lstm3|time_lstm2|time_lstm1|decay_lstm|vanilla_lstm|gru|rnn",
                    )
                })?
            }
            "hidden" => self.hidden = parse_num(key, value)?,
            "agg" => {
                self.agg = Aggregator::parse(value)
                    .ok_or_else(|| bad_value(key, value, "mean|sum|max|min"))?
            }
            "feat_space" => {
                self.feat_space = FeatSpace::parse(value)
                    .ok_or_else(|| bad_value(key, value, "current|universal"))?
            }
            "concat" => {
                self.concat = ConcatMode::parse(value)
                    .ok_or_else(|| bad_value(key, value, "both|only_ltm|only_stm"))?
            }
            "lr" => self.lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "classes" => self.classes = parse_num(key, value)?,
            "drop_max_slots" => self.drop_max_slots = Some(parse_num(key, value)?),
            "drop_min_seen" => self.drop_min_seen = Some(parse_num(key, value)?),
            "single_method" => {
                self.single_method = ImputeMethod::parse(value)
                    .ok_or_else(|| bad_value(key, value, "ffill|rolling_mean"))?
            }
            "single_hidden" => self.single_hidden = parse_num(key, value)?,
            "seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if !part.is_empty() {
                        seeds.push(parse_num(key, part)?);
                    }
                }
                if seeds.is_empty() {
                    bail!("config key 'seeds': empty list");
                }
                self.seeds = seeds;
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "checkpoint_in" => self.checkpoint_in = Some(PathBuf::from(value)),
            "checkpoint_out" => self.checkpoint_out = Some(PathBuf::from(value)),
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    /// Rejects inconsistent configurations before any data is touched.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            bail!("config key 'dataset': no path given");
        }
        if !self.dataset.exists() {
            bail!("config key 'dataset': file '{}' does not exist", self.dataset.display());
        }
        if self.seeds.is_empty() {
            bail!("config key 'seeds': at least one seed required");
        }
        for (key, v) in [("p", self.p), ("p_low", self.p_low), ("p_high", self.p_high)] {
            if !(0.0..=1.0).contains(&v) {
                bail!("config key '{key}': {v} outside [0, 1]");
            }
        }
        if self.period == 0 {
            bail!("config key 'period': must be positive");
        }
        if self.intervals == 0 {
            bail!("config key 'intervals': must be positive");
        }
        if self.hidden == 0 {
            bail!("config key 'hidden': must be positive");
        }
        if self.single_hidden == 0 {
            bail!("config key 'single_hidden': must be positive");
        }
        if self.classes < 2 {
            bail!("config key 'classes': at least two classes required");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!("config key 'lr': must be positive and finite");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bail!("config key 'weight_decay': must be nonnegative and finite");
        }
        if self.limit == Some(0) {
            bail!("config key 'limit': must be positive when set");
        }
        if matches!(self.format, DataFormat::Svmlight | DataFormat::SvmlightSparse)
            && self.n_features.is_none()
        {
            bail!("config key 'n_features': required for svmlight formats");
        }
        if self.format == DataFormat::SvmlightSparse && self.schedule != ScheduleKind::None {
            bail!(
                "config key 'schedule': svmlight_sparse rows carry their own feature \
                 pattern; set schedule=none"
            );
        }
        if self.drop_min_seen.is_some() && self.drop_max_slots.is_none() {
            bail!("config key 'drop_min_seen': requires drop_max_slots");
        }
        if self.drop_max_slots == Some(0) {
            bail!("config key 'drop_max_slots': must be positive when set");
        }
        if self.model != ModelFamily::Pool {
            if self.checkpoint_in.is_some() {
                bail!("config key 'checkpoint_in': checkpoints apply to the pool model");
            }
            if self.checkpoint_out.is_some() {
                bail!("config key 'checkpoint_out': checkpoints apply to the pool model");
            }
        }
        Ok(())
    }

    pub fn norm_kind(&self) -> NormKind {
        NormKind::parse(&self.normalizer, self.decimal_m).expect("normalizer validated on parse")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            cell: self.cell,
            hidden: self.hidden,
            agg: self.agg,
            feat_space: self.feat_space,
            concat: self.concat,
            adam: self.adam(),
            classes: self.classes,
            drop: self
                .drop_max_slots
                .map(|max_slots| DropPolicy { max_slots, min_seen: self.drop_min_seen.unwrap_or(2) }),
        }
    }

    /// The masking/arrival schedule, or None when instances keep every
    /// feature (dense streams, or sparse rows used as-is).
    pub fn stream_schedule(&self) -> Option<Schedule> {
        match self.schedule {
            ScheduleKind::None => None,
            ScheduleKind::Bernoulli => Some(Schedule::Bernoulli { p: self.p }),
            ScheduleKind::Sudden => Some(Schedule::Sudden),
            ScheduleKind::Obsolete => Some(Schedule::Obsolete),
            ScheduleKind::Reappearing => Some(Schedule::Reappearing),
            ScheduleKind::Alternating => Some(Schedule::Alternating {
                p_low: self.p_low,
                p_high: self.p_high,
                period: self.period,
            }),
        }
    }

    /// Seed for the stream mask of one run, decorrelated from the model
    /// seed so masking and initialization never share draws.
    pub fn stream_seed(&self, run_seed: u64) -> u64 {
        sub_seed(run_seed, 101)
    }

    pub fn model_seed(&self, run_seed: u64) -> u64 {
        sub_seed(run_seed, 102)
    }

    /// Identity of the instance stream a checkpoint belongs to; loading
    /// under a different dataset, schedule, or normalizer is rejected.
    /// The row limit is deliberately left out so a run saved partway can
    /// resume over a longer prefix of the same data.
    pub fn stream_tag(&self) -> String {
        let dataset = self
            .dataset
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        format!(
            "data={dataset};format={};schedule={};p={};p_low={};p_high={};\
             period={};intervals={};norm={};m={}",
            self.format.name(),
            self.schedule.name(),
            self.p,
            self.p_low,
            self.p_high,
            self.period,
            self.intervals,
            self.normalizer,
            self.decimal_m,
        )
    }
}

fn sub_seed(run_seed: u64, lane: u64) -> u64 {
    SeedRng::from_seed(run_seed).fork(lane).next_u64()
}
