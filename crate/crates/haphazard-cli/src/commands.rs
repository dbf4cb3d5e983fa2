//! The four CLI verbs: `run`, `scenario`, `gradcheck`, `paramcount`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use haphazard::baselines::{ImputingSingle, SingleModel};
use haphazard::cells::{gradient_check, CellKind, ALL_KINDS};
use haphazard::checkpoint;
use haphazard::eval::{
    fmt_mean_std, fmt_metric, format_score_line, metric_report, run_prequential, MetricReport,
    NormalizedModel, PrequentialRun,
};
use haphazard::pool::{
    composed_gradient_check, Aggregator, ConcatMode, FeatSpace, PoolConfig, PoolModel,
};
use haphazard::streams::{
    build_stream, csv_width, read_csv, read_svmlight, read_svmlight_instances, DenseRecord,
    Instance,
};

use crate::config::{DataFormat, LabelCol, ModelFamily, RunConfig};

/// A dataset as loaded from disk, before any per-seed scheduling.
pub enum Loaded {
    Dense(Vec<DenseRecord>),
    Sparse(Vec<Instance>),
}

impl Loaded {
    pub fn len(&self) -> usize {
        match self {
            Loaded::Dense(r) => r.len(),
            Loaded::Sparse(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let path = &cfg.dataset;
    let loaded = match cfg.format {
        DataFormat::Csv => {
            let width = csv_width(path, cfg.header)?;
            if width == 0 {
                bail!("dataset {}: no data rows", path.display());
            }
            let label_col = match cfg.label_col {
                LabelCol::First => 0,
                LabelCol::Last => width - 1,
                LabelCol::Index(i) => i,
            };
            let mut records = read_csv(path, label_col, cfg.header)?;
            if let Some(limit) = cfg.limit {
                records.truncate(limit);
            }
            // For csv, n_features keeps only the leading feature columns.
            if let Some(n) = cfg.n_features {
                for r in &mut records {
                    r.values.truncate(n);
                }
            }
            Loaded::Dense(records)
        }
        DataFormat::Svmlight => {
            let n = cfg.n_features.expect("validated for svmlight");
            let mut records = read_svmlight(path, n)?;
            if let Some(limit) = cfg.limit {
                records.truncate(limit);
            }
            Loaded::Dense(records)
        }
        DataFormat::SvmlightSparse => {
            let n = cfg.n_features.expect("validated for svmlight");
            let mut instances = read_svmlight_instances(path, n)?;
            if let Some(limit) = cfg.limit {
                instances.truncate(limit);
            }
            Loaded::Sparse(instances)
        }
    };
    if loaded.is_empty() {
        bail!("dataset {}: no data rows", path.display());
    }
    Ok(loaded)
}

fn dense_to_instances(records: &[DenseRecord]) -> Vec<Instance> {
    records
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let feats = r.values.iter().enumerate().map(|(j, &v)| (j as u32, v)).collect();
            Instance::new(t as u64, feats, r.label)
        })
        .collect()
}

/// The instance stream one seed sees: scheduled from dense records, or the
/// sparse rows as-is.
pub fn build_seed_stream(cfg: &RunConfig, data: &Loaded, run_seed: u64) -> Vec<Instance> {
    match data {
        Loaded::Sparse(instances) => instances.clone(),
        Loaded::Dense(records) => match cfg.stream_schedule() {
            None => dense_to_instances(records),
            Some(schedule) => {
                build_stream(records, &schedule, cfg.intervals, cfg.stream_seed(run_seed))
            }
        },
    }
}

/// Fixed input width for the imputing baseline.
fn feature_count(cfg: &RunConfig, data: &Loaded) -> usize {
    match data {
        Loaded::Dense(records) => records[0].values.len(),
        Loaded::Sparse(_) => cfg.n_features.expect("validated for svmlight"),
    }
}

fn seed_path(base: &Path, seed: u64) -> PathBuf {
    let mut name = base.as_os_str().to_os_string();
    name.push(format!(".seed{seed}"));
    PathBuf::from(name)
}

struct SeedSummary {
    seed: u64,
    report: MetricReport,
    aborted: Option<String>,
}

fn write_scores(out_dir: &Path, seed: u64, run: &PrequentialRun) -> Result<PathBuf> {
    let path = out_dir.join(format!("scores_seed{seed}.csv"));
    let mut text = String::with_capacity(32 * (run.records.len() + 1));
    text.push_str("t,score,pred,label,interval,empty\n");
    for record in &run.records {
        text.push_str(&format_score_line(record));
        text.push('\n');
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn render_report(seed: u64, report: &MetricReport, aborted: Option<&str>) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "seed: {seed}");
    let _ = writeln!(text, "instances: {}", report.instances);
    let _ = writeln!(text, "errors: {}", report.errors);
    let _ = writeln!(text, "accuracy: {}", fmt_metric(Some(report.accuracy)));
    let _ = writeln!(text, "balanced_accuracy: {}", fmt_metric(report.balanced_accuracy));
    let _ = writeln!(text, "auroc: {}", fmt_metric(report.auroc));
    let _ = writeln!(text, "auprc: {}", fmt_metric(report.auprc));
    let per_interval: Vec<String> =
        report.interval_bacc.iter().map(|&b| fmt_metric(b)).collect();
    let _ = writeln!(text, "interval_bacc: {}", per_interval.join(" "));
    match aborted {
        None => {
            let _ = writeln!(text, "status: ok");
        }
        Some(err) => {
            let _ = writeln!(text, "status: aborted: {err}");
        }
    }
    text
}

fn run_seed(cfg: &RunConfig, data: &Loaded, run_seed: u64, out_dir: &Path) -> Result<SeedSummary> {
    let stream = build_seed_stream(cfg, data, run_seed);
    let run = match cfg.model {
        ModelFamily::Pool => {
            let pool_cfg = cfg.pool_config();
            let mut model = match &cfg.checkpoint_in {
                Some(path) => {
                    let path = seed_path(path, run_seed);
                    let (pool, stats) = checkpoint::load(&path, &cfg.stream_tag(), pool_cfg)
                        .with_context(|| format!("loading checkpoint {}", path.display()))?;
                    NormalizedModel { inner: pool, stats, kind: cfg.norm_kind() }
                }
                None => NormalizedModel::new(
                    PoolModel::new(pool_cfg, cfg.model_seed(run_seed)),
                    cfg.norm_kind(),
                ),
            };
            let start = model.inner.t as usize;
            if start > stream.len() {
                bail!(
                    "checkpoint is {start} instances in, but the stream has only {}",
                    stream.len()
                );
            }
            let run = run_prequential(&mut model, &stream, start, cfg.intervals, |_, _| {});
            if let Some(path) = &cfg.checkpoint_out {
                let path = seed_path(path, run_seed);
                checkpoint::save(&path, &cfg.stream_tag(), &model.inner, &model.stats)
                    .with_context(|| format!("writing checkpoint {}", path.display()))?;
            }
            run
        }
        ModelFamily::Single => {
            let single = SingleModel::new(
                feature_count(cfg, data),
                cfg.single_hidden,
                cfg.classes,
                cfg.adam(),
                cfg.model_seed(run_seed),
            );
            let mut model = NormalizedModel::new(
                ImputingSingle::new(single, cfg.single_method),
                cfg.norm_kind(),
            );
            run_prequential(&mut model, &stream, 0, cfg.intervals, |_, _| {})
        }
    };

    let report = metric_report(&run.records, cfg.intervals, run.wall_secs);
    let aborted = run.error.as_ref().map(|e| e.to_string());
    write_scores(out_dir, run_seed, &run)?;
    let path = out_dir.join(format!("report_seed{run_seed}.txt"));
    fs::write(&path, render_report(run_seed, &report, aborted.as_deref()))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(SeedSummary { seed: run_seed, report, aborted })
}

fn aggregate_line(label: &str, values: &[Option<f64>]) -> String {
    let collected: Option<Vec<f64>> = values.iter().copied().collect();
    match collected {
        Some(v) if !v.is_empty() => format!("{label}: {}", fmt_mean_std(&v)),
        _ => format!("{label}: n/a"),
    }
}

fn render_aggregate(cfg: &RunConfig, summaries: &[SeedSummary]) -> String {
    let mut text = String::new();
    let seeds: Vec<String> = summaries.iter().map(|s| s.seed.to_string()).collect();
    let _ = writeln!(text, "seeds: {}", seeds.join(","));
    let _ = writeln!(
        text,
        "{}",
        aggregate_line(
            "balanced_accuracy",
            &summaries.iter().map(|s| s.report.balanced_accuracy).collect::<Vec<_>>()
        )
    );
    let _ = writeln!(
        text,
        "{}",
        aggregate_line("auroc", &summaries.iter().map(|s| s.report.auroc).collect::<Vec<_>>())
    );
    let _ = writeln!(
        text,
        "{}",
        aggregate_line("auprc", &summaries.iter().map(|s| s.report.auprc).collect::<Vec<_>>())
    );
    let _ = writeln!(
        text,
        "{}",
        aggregate_line(
            "accuracy",
            &summaries.iter().map(|s| Some(s.report.accuracy)).collect::<Vec<_>>()
        )
    );
    let aborted: Vec<String> = summaries
        .iter()
        .filter(|s| s.aborted.is_some())
        .map(|s| s.seed.to_string())
        .collect();
    if aborted.is_empty() {
        let _ = writeln!(text, "aborted_seeds: none");
    } else {
        let _ = writeln!(text, "aborted_seeds: {}", aborted.join(","));
    }
    let _ = write!(text, "model: {}", cfg.model.name());
    match cfg.model {
        ModelFamily::Pool => {
            let _ = writeln!(
                text,
                " cell={} hidden={} agg={} feat_space={} concat={} lr={}",
                cfg.cell.name(),
                cfg.hidden,
                cfg.agg.name(),
                cfg.feat_space.name(),
                cfg.concat.name(),
                cfg.lr
            );
        }
        ModelFamily::Single => {
            let _ = writeln!(
                text,
                " method={} hidden={} lr={}",
                cfg.single_method.name(),
                cfg.single_hidden,
                cfg.lr
            );
        }
    }
    text
}

/// Multi-seed prequential benchmark: per-seed score logs and reports,
/// then a mean-and-deviation aggregate.
pub fn run(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let mut summaries = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &data, seed, &out_dir))
        .collect::<Result<Vec<_>>>()?;
    summaries.sort_by_key(|s| s.seed);

    for s in &summaries {
        println!(
            "seed {}: instances {}, balanced accuracy {}, auroc {}, auprc {}, {:.1} s",
            s.seed,
            s.report.instances,
            fmt_metric(s.report.balanced_accuracy),
            fmt_metric(s.report.auroc),
            fmt_metric(s.report.auprc),
            s.report.wall_secs
        );
    }
    let aggregate = render_aggregate(cfg, &summaries);
    fs::write(out_dir.join("aggregate.txt"), &aggregate)
        .with_context(|| format!("writing {}", out_dir.join("aggregate.txt").display()))?;
    print!("{aggregate}");
    println!("results written to {}", out_dir.display());

    let aborted: Vec<u64> =
        summaries.iter().filter(|s| s.aborted.is_some()).map(|s| s.seed).collect();
    if !aborted.is_empty() {
        bail!("{} seed run(s) aborted ({aborted:?}); partial outputs were written", aborted.len());
    }
    Ok(())
}

struct ScenarioSummary {
    seed: u64,
    persistent: MetricReport,
    retrained: MetricReport,
}

fn scenario_seed(
    cfg: &RunConfig,
    data: &Loaded,
    run_seed: u64,
    out_dir: &Path,
) -> Result<ScenarioSummary> {
    let stream = build_seed_stream(cfg, data, run_seed);
    let model_seed = cfg.model_seed(run_seed);

    let mut persistent =
        NormalizedModel::new(PoolModel::new(cfg.pool_config(), model_seed), cfg.norm_kind());
    let p_run = run_prequential(&mut persistent, &stream, 0, cfg.intervals, |_, _| {});

    // The retrained variant restarts the learner from the same seed at
    // every interval boundary; the normalizer keeps running, since it is
    // part of the data pipeline rather than the model.
    let mut retrained =
        NormalizedModel::new(PoolModel::new(cfg.pool_config(), model_seed), cfg.norm_kind());
    let r_run = run_prequential(&mut retrained, &stream, 0, cfg.intervals, |m, _| {
        m.inner.reinitialize(model_seed)
    });

    if let Some(e) = p_run.error.as_ref().or(r_run.error.as_ref()) {
        bail!("seed {run_seed}: scenario pass aborted: {e}");
    }
    let persistent = metric_report(&p_run.records, cfg.intervals, p_run.wall_secs);
    let retrained = metric_report(&r_run.records, cfg.intervals, r_run.wall_secs);

    let mut text = String::new();
    let _ = writeln!(text, "seed: {run_seed}");
    for (name, rep) in [("persistent", &persistent), ("retrained", &retrained)] {
        let per: Vec<String> = rep.interval_bacc.iter().map(|&b| fmt_metric(b)).collect();
        let _ = writeln!(text, "{name}_interval_bacc: {}", per.join(" "));
        let _ = writeln!(text, "{name}_overall_bacc: {}", fmt_metric(rep.balanced_accuracy));
    }
    let path = out_dir.join(format!("scenario_seed{run_seed}.txt"));
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;

    Ok(ScenarioSummary { seed: run_seed, persistent, retrained })
}

/// Same stream, two learners: one persists across intervals, one restarts
/// at every interval boundary. Reports balanced accuracy per interval and
/// the persistent-minus-retrained gap.
pub fn scenario(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.model != ModelFamily::Pool {
        bail!("config key 'model': the scenario comparison runs the pool model");
    }
    let data = load_data(cfg)?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let mut summaries = cfg
        .seeds
        .par_iter()
        .map(|&seed| scenario_seed(cfg, &data, seed, &out_dir))
        .collect::<Result<Vec<_>>>()?;
    summaries.sort_by_key(|s| s.seed);

    let intervals = cfg.intervals as usize;
    let mut text = String::new();
    let seeds: Vec<String> = summaries.iter().map(|s| s.seed.to_string()).collect();
    let _ = writeln!(text, "seeds: {}", seeds.join(","));
    for (name, pick) in [
        ("persistent", &(|s: &ScenarioSummary| s.persistent.clone()) as &dyn Fn(_) -> MetricReport),
        ("retrained", &|s: &ScenarioSummary| s.retrained.clone()),
    ] {
        let mut per = Vec::with_capacity(intervals);
        for k in 0..intervals {
            let vals: Option<Vec<f64>> =
                summaries.iter().map(|s| pick(s).interval_bacc[k]).collect();
            per.push(match vals {
                Some(v) => fmt_mean_std(&v),
                None => "n/a".to_string(),
            });
        }
        let _ = writeln!(text, "{name}_interval_bacc: {}", per.join(" | "));
        let overall: Option<Vec<f64>> =
            summaries.iter().map(|s| pick(s).balanced_accuracy).collect();
        let _ = writeln!(
            text,
            "{name}_overall_bacc: {}",
            overall.map_or("n/a".to_string(), |v| fmt_mean_std(&v))
        );
    }
    let gaps: Option<Vec<f64>> = summaries
        .iter()
        .map(|s| {
            let p = s.persistent.interval_bacc[intervals - 1];
            let r = s.retrained.interval_bacc[intervals - 1];
            p.zip(r).map(|(p, r)| p - r)
        })
        .collect();
    let _ = writeln!(
        text,
        "final_interval_gap: {}",
        gaps.map_or("n/a".to_string(), |v| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            format!("{:+.2}", mean * 100.0)
        })
    );
    fs::write(out_dir.join("scenario.txt"), &text)
        .with_context(|| format!("writing {}", out_dir.join("scenario.txt").display()))?;
    print!("{text}");
    println!("results written to {}", out_dir.display());
    Ok(())
}

/// Cell-level and composed gradient checks; nonzero exit on any failure.
pub fn gradcheck(seed: u64, draws: usize, hidden: usize) -> Result<()> {
    let mut failed = false;
    for (i, kind) in ALL_KINDS.into_iter().enumerate() {
        let report = gradient_check(kind, hidden, draws, seed + i as u64, 1e-4, 1e-7);
        println!("{report}");
        failed |= !report.passed();
    }
    let combos: Vec<(PoolConfig, &str)> = vec![
        (PoolConfig::default(), "defaults"),
        (PoolConfig { agg: Aggregator::Mean, ..PoolConfig::default() }, "mean aggregation"),
        (PoolConfig { agg: Aggregator::Sum, ..PoolConfig::default() }, "sum aggregation"),
        (PoolConfig { agg: Aggregator::Min, ..PoolConfig::default() }, "min aggregation"),
        (
            PoolConfig { feat_space: FeatSpace::Universal, ..PoolConfig::default() },
            "universal feature space",
        ),
        (PoolConfig { concat: ConcatMode::OnlyLtm, ..PoolConfig::default() }, "shared memory only"),
        (PoolConfig { concat: ConcatMode::OnlyStm, ..PoolConfig::default() }, "hidden states only"),
        (PoolConfig { cell: CellKind::Gru, ..PoolConfig::default() }, "gru cells"),
        (PoolConfig { cell: CellKind::DecayLstm, ..PoolConfig::default() }, "decay cells"),
    ];
    for (i, (cfg, label)) in combos.into_iter().enumerate() {
        let cfg = PoolConfig { hidden: 6, ..cfg };
        let report = composed_gradient_check(cfg, seed + 300 + i as u64, 1e-4, 1e-7);
        println!("composed ({label}): {report}");
        failed |= !report.passed();
    }
    if failed {
        bail!("gradient check failed");
    }
    println!("all gradient checks passed");
    Ok(())
}

/// Parameter counts per cell kind at a given hidden size, the prediction
/// head, and a worked ten-feature example.
pub fn paramcount(hidden: usize) -> Result<()> {
    if hidden == 0 {
        bail!("hidden size must be positive");
    }
    println!("per-cell parameter counts at hidden size {hidden}:");
    for kind in ALL_KINDS {
        println!("  {:<14} {:>10}", kind.name(), kind.param_count(hidden));
    }
    let cfg = PoolConfig { hidden, ..PoolConfig::default() };
    println!(
        "prediction head ({} inputs, {} classes): {}",
        cfg.head_in_dim(),
        cfg.classes,
        cfg.head_param_count()
    );
    let slots = 10;
    let total = slots * cfg.cell.param_count(hidden) + cfg.head_param_count();
    println!("example: {slots} {} slots + head = {total}", cfg.cell.name());
    Ok(())
}
