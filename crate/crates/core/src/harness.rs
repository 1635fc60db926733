//! Experiment orchestration: metrics, multi-seed runs, sweeps, timing and
//! report emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagset::partition_into_bags;
use crate::datasets::{self, DatasetPair};
use crate::error::{Error, Result};
use crate::netzoo::{build_discriminator, build_generator, ArchitectureSpec};
use crate::optim::AdamConfig;
use crate::scalar::Scalar;
use crate::trainer::{Algorithm, EvalSet, FakeBatchPolicy, MetricTrace, TrainConfig, TrainContext, TrainState};

/// Percentage of positions where `predictions` and `truth` differ.
pub fn error_rate(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::config("error rate of an empty set"));
    }
    let wrong = predictions.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(100.0 * wrong as f64 / truth.len() as f64)
}

/// Sample mean and unbiased standard deviation (0 for fewer than 2 values).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    LambdaSup,
    LambdaEnt,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_sup" => Ok(Self::LambdaSup),
            "lambda_ent" => Ok(Self::LambdaEnt),
            other => Err(Error::config(format!("cannot sweep `{other}` (expected lambda_sup or lambda_ent)"))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LambdaSup => "lambda_sup",
            Self::LambdaEnt => "lambda_ent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn default_bag_size() -> usize {
    16
}
fn default_lambda_sup() -> f64 {
    1.0
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_bags_per_step() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub algo: Algorithm,
    #[serde(default = "default_bag_size")]
    pub bag_size: usize,
    #[serde(default = "default_lambda_sup")]
    pub lambda_sup: f64,
    #[serde(default)]
    pub lambda_ent: f64,
    pub epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub plots: bool,
    /// Overrides `$LLP_DATA_DIR` for file-backed datasets.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Seed for synthetic data generation and subsetting; bags use the run seed.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_bags_per_step")]
    pub bags_per_step: usize,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub fake_batch: FakeBatchPolicy,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Defaults to 100 for images and 16 for vector data.
    #[serde(default)]
    pub noise_dim: Option<usize>,
    /// Hidden width of the multilayer perceptrons used for vector data.
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub discriminator: Option<ArchitectureSpec>,
    #[serde(default)]
    pub generator: Option<ArchitectureSpec>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.bag_size == 0 || self.epochs == 0 {
            return Err(Error::config("bag_size and epochs must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::config("sweep needs at least one value"));
            }
        }
        for (l_sup, l_ent) in self.settings() {
            self.train_config(l_sup, l_ent, 0, 1).validate()?;
        }
        Ok(())
    }

    /// (λ_sup, λ_ent) for every sweep point, or the single configured pair.
    pub fn settings(&self) -> Vec<(f64, f64)> {
        match &self.sweep {
            None => vec![(self.lambda_sup, self.lambda_ent)],
            Some(s) => s
                .values
                .iter()
                .map(|&v| match s.param {
                    SweepParam::LambdaSup => (v, self.lambda_ent),
                    SweepParam::LambdaEnt => (self.lambda_sup, v),
                })
                .collect(),
        }
    }

    fn train_config(&self, lambda_sup: f64, lambda_ent: f64, seed: u64, noise_dim: usize) -> TrainConfig {
        TrainConfig {
            lambda_sup,
            lambda_ent,
            epochs: self.epochs,
            max_steps: self.max_steps,
            bags_per_step: self.bags_per_step,
            noise_dim,
            fake_batch: self.fake_batch,
            optimizer: self.optimizer,
            seed,
            checkpoint_every: None,
        }
    }

    fn architectures(&self, instance_shape: &[usize], k: usize) -> Result<(ArchitectureSpec, ArchitectureSpec)> {
        let image = instance_shape.len() == 3;
        let noise = self.noise_dim.unwrap_or(if image { 100 } else { 16 });
        let (mut d, mut g) = match (instance_shape, self.hidden) {
            ([dim], Some(h)) => (ArchitectureSpec::mlp_discriminator(*dim, h, k), ArchitectureSpec::mlp_generator(noise, h, *dim)),
            _ => ArchitectureSpec::presets_for(instance_shape, k, noise)?,
        };
        if let Some(spec) = &self.discriminator {
            d = spec.clone();
        }
        if let Some(spec) = &self.generator {
            g = spec.clone();
        }
        Ok((d, g))
    }
}

/// Outcome of one (seed, λ) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub lambda_sup: f64,
    pub lambda_ent: f64,
    /// Test error (%) at each epoch boundary.
    pub curve: Vec<f64>,
    pub final_error: Option<f64>,
    pub steps: u64,
    /// Sum of instance entropy per epoch (DLLP only).
    pub entropy_curve: Vec<f64>,
    pub error: Option<String>,
    pub per_bag_seconds: f64,
    pub wallclock_s: f64,
}

/// Mean and sample standard deviation of final errors for one λ setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub lambda_sup: f64,
    pub lambda_ent: f64,
    pub final_error_mean: f64,
    pub final_error_std: f64,
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub bag_size: usize,
    pub lambda_sup: f64,
    pub lambda_ent: f64,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub sweep: Option<Sweep>,
    pub runs: Vec<RunResult>,
    pub summaries: Vec<SettingSummary>,
    /// Mean of the first setting's final errors (%).
    pub final_error_mean: f64,
    /// Sample standard deviation (n - 1 denominator) across seeds.
    pub final_error_std: f64,
    pub per_bag_seconds: Vec<f64>,
    /// False when any run aborted.
    pub complete: bool,
}

impl ExperimentReport {
    /// The report with every wallclock field zeroed.
    pub fn without_wallclock(&self) -> Self {
        let mut r = self.clone();
        r.per_bag_seconds.iter_mut().for_each(|v| *v = 0.0);
        for run in &mut r.runs {
            run.per_bag_seconds = 0.0;
            run.wallclock_s = 0.0;
        }
        r
    }
}

struct Prepared<T> {
    data: DatasetPair<T>,
    disc: ArchitectureSpec,
    gen: ArchitectureSpec,
    noise_dim: usize,
}

fn prepare<T: Scalar>(cfg: &ExperimentConfig) -> Result<Prepared<T>> {
    let data = datasets::resolve::<T>(&cfg.dataset, cfg.data_dir.as_deref(), cfg.data_seed)?;
    let (disc, gen) = cfg.architectures(&data.train.instance_shape, data.train.k)?;
    disc.validate_discriminator(data.train.k)?;
    let noise_dim = gen.noise_dim.unwrap_or(100);
    Ok(Prepared { data, disc, gen, noise_dim })
}

fn run_one<T: Scalar>(
    cfg: &ExperimentConfig,
    prep: &Prepared<T>,
    seed: u64,
    lambda_sup: f64,
    lambda_ent: f64,
) -> Result<(RunResult, MetricTrace)> {
    let bags = partition_into_bags(&prep.data.train, cfg.bag_size, seed)?;
    let tc = cfg.train_config(lambda_sup, lambda_ent, seed, prep.noise_dim);
    let d = build_discriminator::<T>(&prep.disc, prep.data.train.k, seed.wrapping_mul(2).wrapping_add(1))?;
    let g = match cfg.algo {
        Algorithm::LlpGan => Some(build_generator::<T>(&prep.gen, seed.wrapping_mul(2).wrapping_add(2))?),
        Algorithm::Dllp => None,
    };
    let ctx = TrainContext::new(prep.data.train.unlabeled(), &bags)
        .with_eval(EvalSet { features: prep.data.test.features.view(), labels: &prep.data.test.labels });
    let mut state = TrainState::new(cfg.algo, d, g, &tc, &bags)?;
    let started = Instant::now();
    let outcome = state.run(&ctx, None);
    let wallclock_s = started.elapsed().as_secs_f64();
    let bags_seen: usize = state.step as usize * cfg.bags_per_step.min(bags.bags.len());
    let curve = state.trace.epoch_errors();
    let result = RunResult {
        seed,
        lambda_sup,
        lambda_ent,
        final_error: curve.last().copied(),
        curve,
        steps: state.step,
        entropy_curve: state.trace.epoch_entropy(),
        error: outcome.err().map(|e| e.to_string()),
        per_bag_seconds: if bags_seen > 0 { wallclock_s / bags_seen as f64 } else { 0.0 },
        wallclock_s,
    };
    Ok((result, state.trace))
}

fn curve_file(cfg: &ExperimentConfig, run: &RunResult) -> String {
    match &cfg.sweep {
        None => format!("curves_{}.csv", run.seed),
        Some(s) => {
            let v = match s.param {
                SweepParam::LambdaSup => run.lambda_sup,
                SweepParam::LambdaEnt => run.lambda_ent,
            };
            format!("curves_{}={}_{}.csv", s.param, v, run.seed)
        }
    }
}

fn execute<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = prepare::<T>(cfg)?;
    let jobs: Vec<(u64, f64, f64)> = cfg
        .settings()
        .into_iter()
        .flat_map(|(ls, le)| cfg.seeds.iter().map(move |&s| (s, ls, le)))
        .collect();
    let results: Vec<(RunResult, MetricTrace)> = jobs
        .par_iter()
        .map(|&(seed, ls, le)| run_one(cfg, &prep, seed, ls, le))
        .collect::<Result<Vec<_>>>()?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    for (run, trace) in &results {
        trace.write_csv(cfg.out_dir.join(curve_file(cfg, run)))?;
    }
    let runs: Vec<RunResult> = results.into_iter().map(|r| r.0).collect();
    let summaries: Vec<SettingSummary> = cfg
        .settings()
        .into_iter()
        .map(|(ls, le)| {
            let group: Vec<&RunResult> = runs.iter().filter(|r| r.lambda_sup == ls && r.lambda_ent == le).collect();
            let finals: Vec<f64> = group.iter().filter_map(|r| r.final_error).collect();
            let (mean, std) = mean_and_std(&finals);
            let len = group.iter().map(|r| r.curve.len()).min().unwrap_or(0);
            let mean_curve = (0..len).map(|e| group.iter().map(|r| r.curve[e]).sum::<f64>() / group.len() as f64).collect();
            SettingSummary { lambda_sup: ls, lambda_ent: le, final_error_mean: mean, final_error_std: std, mean_curve }
        })
        .collect();
    let report = ExperimentReport {
        dataset: cfg.dataset.clone(),
        algorithm: cfg.algo,
        bag_size: cfg.bag_size,
        lambda_sup: cfg.lambda_sup,
        lambda_ent: cfg.lambda_ent,
        seeds: cfg.seeds.clone(),
        epochs: cfg.epochs,
        sweep: cfg.sweep.clone(),
        complete: runs.iter().all(|r| r.error.is_none()),
        per_bag_seconds: runs.iter().map(|r| r.per_bag_seconds).collect(),
        final_error_mean: summaries[0].final_error_mean,
        final_error_std: summaries[0].final_error_std,
        summaries,
        runs,
    };
    let path = cfg.out_dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    if cfg.plots {
        plot_curves(&report, &cfg.out_dir.join("error_curves.png"))?;
        if cfg.algo == Algorithm::Dllp {
            plot_series(
                &report.runs.iter().map(|r| r.entropy_curve.clone()).collect::<Vec<_>>(),
                &cfg.out_dir.join("entropy_curves.png"),
            )?;
        }
    }
    Ok(report)
}

/// Bags, trains and evaluates every (seed, λ) combination, then writes
/// `report.json`, one `curves_*.csv` per run and optional plots. Seeds run
/// concurrently; the report does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => execute::<f32>(cfg),
        Precision::F64 => execute::<f64>(cfg),
    }
}

/// [`run_experiment`] with one setting per value of `param`.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<ExperimentReport> {
    let mut cfg = cfg.clone();
    cfg.sweep = Some(Sweep { param, values: values.to_vec() });
    run_experiment(&cfg)
}

fn plot_curves(report: &ExperimentReport, path: &Path) -> Result<()> {
    plot_series(&report.runs.iter().map(|r| r.curve.clone()).collect::<Vec<_>>(), path)
}

/// Line plot of several series against their index. No text is drawn.
fn plot_series(series: &[Vec<f64>], path: &Path) -> Result<()> {
    use plotters::prelude::*;
    let perr = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let max_len = series.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let finite = series.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, lo.max(0.0) + 1.0) };
    let root = BitMapBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| perr(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(0f64..(max_len - 1) as f64, lo..hi)
        .map_err(|e| perr(&e))?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i);
        chart
            .draw_series(LineSeries::new(s.iter().enumerate().map(|(x, y)| (x as f64, *y)), &color))
            .map_err(|e| perr(&e))?;
    }
    root.present().map_err(|e| perr(&e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub sample_size: usize,
    pub ln_m: f64,
    pub per_bag_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl TimingReport {
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].per_bag_seconds >= w[0].per_bag_seconds)
    }
}

pub const TIMING_WARMUP: usize = 5;
pub const TIMING_MEASURED: usize = 20;

/// Least-squares fit `y = intercept + slope · x` and its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

/// Replaces or appends the size suffix of a dataset name (`blobs-4000`).
fn sized_dataset(name: &str, m: usize) -> String {
    let (base, binary) = match name.split_once("/binary-") {
        Some((b, rest)) => (b, Some(rest)),
        None => (name, None),
    };
    let stem = match base.rsplit_once('-') {
        Some((stem, n)) if n.parse::<usize>().is_ok() => stem,
        _ => base,
    };
    match binary {
        Some(rest) => format!("{stem}-{m}/binary-{rest}"),
        None => format!("{stem}-{m}"),
    }
}

fn time_one<T: Scalar>(cfg: &ExperimentConfig, m: usize) -> Result<TimingRow> {
    let mut sized = cfg.clone();
    sized.dataset = sized_dataset(&cfg.dataset, m);
    let prep = prepare::<T>(&sized)?;
    let seed = cfg.seeds[0];
    let bags = partition_into_bags(&prep.data.train, cfg.bag_size, seed)?;
    let mut tc = cfg.train_config(cfg.lambda_sup, cfg.lambda_ent, seed, prep.noise_dim);
    let needed = (TIMING_WARMUP + TIMING_MEASURED) as u64;
    tc.epochs = needed.div_ceil(tc.steps_per_epoch(bags.bags.len())) as usize;
    tc.max_steps = None;
    let d = build_discriminator::<T>(&prep.disc, prep.data.train.k, seed + 1)?;
    let g = match cfg.algo {
        Algorithm::LlpGan => Some(build_generator::<T>(&prep.gen, seed + 2)?),
        Algorithm::Dllp => None,
    };
    let ctx = TrainContext::new(prep.data.train.unlabeled(), &bags);
    let mut state = TrainState::new(cfg.algo, d, g, &tc, &bags)?;
    for _ in 0..TIMING_WARMUP {
        state.step(&ctx)?;
    }
    let bags_per_step = cfg.bags_per_step.min(bags.bags.len()) as f64;
    let mut times = Vec::with_capacity(TIMING_MEASURED);
    for _ in 0..TIMING_MEASURED {
        let t = Instant::now();
        state.step(&ctx)?;
        times.push(t.elapsed().as_secs_f64() / bags_per_step);
    }
    times.sort_by(f64::total_cmp);
    let median = 0.5 * (times[TIMING_MEASURED / 2 - 1] + times[TIMING_MEASURED / 2]);
    Ok(TimingRow { sample_size: m, ln_m: (m as f64).ln(), per_bag_seconds: median })
}

/// Median per-bag step time at each training-set size, with a fit of time
/// against `ln m`. Sizes run sequentially so timings do not interfere.
pub fn timing_profile(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<TimingReport> {
    if sizes.len() < 3 {
        return Err(Error::config(format!("timing needs at least 3 sample sizes, got {}", sizes.len())));
    }
    cfg.validate()?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &m in sizes {
        rows.push(match cfg.precision {
            Precision::F32 => time_one::<f32>(cfg, m)?,
            Precision::F64 => time_one::<f64>(cfg, m)?,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.ln_m).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.per_bag_seconds).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(TimingReport { rows, slope, intercept, r_squared })
}

/// Per-epoch sum of instance entropy from a DLLP trace, written as
/// `epoch,entropy` CSV.
pub fn entropy_trace_report(trace: &MetricTrace, path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let curve = trace.epoch_entropy();
    if curve.is_empty() {
        return Err(Error::config("trace has no entropy column values"));
    }
    let mut csv = String::from("epoch,entropy\n");
    for (e, v) in curve.iter().enumerate() {
        csv.push_str(&format!("{e},{v}\n"));
    }
    let path = path.as_ref();
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    Ok(curve)
}
