//! Alternating LLP-GAN training, the DLLP baseline, metric traces and
//! checkpoints.
//!
//! Training code only ever sees an [`UnlabeledView`] and a [`BagDataset`];
//! instance labels enter solely through the optional evaluation set.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bagset::{BagDataset, ProportionVector, UnlabeledView};
use crate::error::{Error, Result};
use crate::losses::{dllp_total_grad, feature_matching_grad, llp_gan_disc_loss_grad, normalize_posterior_rows};
use crate::netzoo::softmax::{softmax_backward, softmax_rows};
use crate::netzoo::{Discriminator, Generator, Mode, Network, NetworkState, NoiseBatch};
use crate::optim::{Adam, AdamConfig, AdamState};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "llp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TRACE_HEADER: &str = "step,epoch,l_real,l_fake,lb_sup,fm,dllp,entropy,test_error,wallclock_s";
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "llp-gan")]
    LlpGan,
    #[serde(rename = "dllp")]
    Dllp,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llp-gan" => Ok(Self::LlpGan),
            "dllp" => Ok(Self::Dllp),
            other => Err(Error::config(format!("unknown algorithm `{other}` (expected llp-gan or dllp)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LlpGan => "llp-gan",
            Self::Dllp => "dllp",
        })
    }
}

/// How many fake samples the generator draws per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeBatchPolicy {
    /// As many fakes as real instances in the step.
    #[default]
    Balanced,
    Fixed(usize),
    /// One fake per training instance, every iteration.
    AllTrainingPoints,
}

fn default_lambda_sup() -> f64 {
    1.0
}
fn default_bags_per_step() -> usize {
    4
}
fn default_noise_dim() -> usize {
    100
}
fn default_epochs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lambda_sup")]
    pub lambda_sup: f64,
    #[serde(default)]
    pub lambda_ent: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Caps the iteration count below `epochs` full passes.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default = "default_bags_per_step")]
    pub bags_per_step: usize,
    #[serde(default = "default_noise_dim")]
    pub noise_dim: usize,
    #[serde(default)]
    pub fake_batch: FakeBatchPolicy,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Save a checkpoint every this many steps (needs a checkpoint path).
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_sup: default_lambda_sup(),
            lambda_ent: 0.0,
            epochs: default_epochs(),
            max_steps: None,
            bags_per_step: default_bags_per_step(),
            noise_dim: default_noise_dim(),
            fake_batch: FakeBatchPolicy::Balanced,
            optimizer: AdamConfig::default(),
            seed: 0,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_sup", self.lambda_sup), ("lambda_ent", self.lambda_ent)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        for (name, v) in [("epochs", self.epochs), ("bags_per_step", self.bags_per_step), ("noise_dim", self.noise_dim)] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.max_steps == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::config("step counts must be at least 1"));
        }
        if self.fake_batch == FakeBatchPolicy::Fixed(0) {
            return Err(Error::config("fixed fake batch size must be at least 1"));
        }
        self.optimizer.validate()
    }

    pub fn steps_per_epoch(&self, n_bags: usize) -> u64 {
        n_bags.div_ceil(self.bags_per_step) as u64
    }

    /// Total iterations `L` for a dataset with `n_bags` bags.
    pub fn total_steps(&self, n_bags: usize) -> u64 {
        let full = self.epochs as u64 * self.steps_per_epoch(n_bags);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// One row of the metric trace. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub epoch: usize,
    pub l_real: Option<f64>,
    pub l_fake: Option<f64>,
    pub lb_sup: Option<f64>,
    pub fm: Option<f64>,
    pub dllp: Option<f64>,
    pub entropy: Option<f64>,
    pub test_error: Option<f64>,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTrace {
    pub rows: Vec<MetricRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

impl MetricTrace {
    pub fn to_csv(&self) -> String {
        self.render(true)
    }

    /// The CSV with the wallclock column blanked, for determinism checks.
    pub fn to_csv_without_wallclock(&self) -> String {
        self.render(false)
    }

    fn render(&self, wallclock: bool) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.epoch,
                cell(r.l_real),
                cell(r.l_fake),
                cell(r.lb_sup),
                cell(r.fm),
                cell(r.dllp),
                cell(r.entropy),
                cell(r.test_error),
                if wallclock { format!("{:.6}", r.wallclock_s) } else { String::new() }
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses a CSV produced by [`MetricTrace::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != TRACE_HEADER {
            return Err(Error::config(format!("unexpected metric header `{header}`")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let err = |m: &str| Error::Parse { line: i + 2, message: m.to_string() };
            if f.len() != 10 {
                return Err(err("expected 10 columns"));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| err("bad number"))
                }
            };
            rows.push(MetricRow {
                step: f[0].parse().map_err(|_| err("bad step"))?,
                epoch: f[1].parse().map_err(|_| err("bad epoch"))?,
                l_real: opt(f[2])?,
                l_fake: opt(f[3])?,
                lb_sup: opt(f[4])?,
                fm: opt(f[5])?,
                dllp: opt(f[6])?,
                entropy: opt(f[7])?,
                test_error: opt(f[8])?,
                wallclock_s: opt(f[9])?.unwrap_or(0.0),
            });
        }
        Ok(Self { rows })
    }

    /// Test error at each epoch boundary, in epoch order.
    pub fn epoch_errors(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.test_error).collect()
    }

    /// Sum of the per-step entropy values within each epoch.
    pub fn epoch_entropy(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut current: Option<(usize, f64)> = None;
        for r in &self.rows {
            let Some(e) = r.entropy else { continue };
            match current {
                Some((ep, sum)) if ep == r.epoch => current = Some((ep, sum + e)),
                Some((_, sum)) => {
                    out.push(sum);
                    current = Some((r.epoch, e));
                }
                None => current = Some((r.epoch, e)),
            }
        }
        out.extend(current.map(|c| c.1));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UpdateCounters {
    pub d_updates: u64,
    pub g_updates: u64,
    pub fakes_drawn: u64,
    /// Fakes drawn by the most recent iteration.
    pub last_fake_batch: u64,
}

/// Diagnostic state attached to a divergence error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSnapshot {
    pub algorithm: Algorithm,
    pub step: u64,
    pub epoch: usize,
    pub losses: Vec<(String, f64)>,
    pub counters: UpdateCounters,
    pub trace: MetricTrace,
}

/// Labeled held-out data used only to report test error.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a, T> {
    pub features: ArrayView2<'a, T>,
    pub labels: &'a [usize],
}

/// Everything a training run reads besides its own state.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a, T> {
    pub data: UnlabeledView<'a, T>,
    pub bags: &'a BagDataset,
    pub eval: Option<EvalSet<'a, T>>,
    pub checkpoint_path: Option<&'a Path>,
}

impl<'a, T> TrainContext<'a, T> {
    pub fn new(data: UnlabeledView<'a, T>, bags: &'a BagDataset) -> Self {
        Self { data, bags, eval: None, checkpoint_path: None }
    }

    pub fn with_eval(mut self, eval: EvalSet<'a, T>) -> Self {
        self.eval = Some(eval);
        self
    }

    pub fn with_checkpoints(mut self, path: &'a Path) -> Self {
        self.checkpoint_path = Some(path);
        self
    }
}

/// Parameters, optimizer moments, RNG and progress of a training run.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub algorithm: Algorithm,
    pub config: TrainConfig,
    pub discriminator: Discriminator<T>,
    pub generator: Option<Generator<T>>,
    disc_opt: Adam<T>,
    gen_opt: Option<Adam<T>>,
    pub step: u64,
    pub total_steps: u64,
    pub epoch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    pub counters: UpdateCounters,
    pub trace: MetricTrace,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh state. `generator` is required for LLP-GAN and ignored by DLLP.
    pub fn new(
        algorithm: Algorithm,
        discriminator: Discriminator<T>,
        generator: Option<Generator<T>>,
        config: &TrainConfig,
        bags: &BagDataset,
    ) -> Result<Self> {
        config.validate()?;
        if bags.bags.is_empty() {
            return Err(Error::config("no bags to train on"));
        }
        let generator = match algorithm {
            Algorithm::Dllp => None,
            Algorithm::LlpGan => {
                let g = generator.ok_or_else(|| Error::config("llp-gan training needs a generator"))?;
                if g.noise_dim() != config.noise_dim {
                    return Err(Error::config(format!(
                        "generator takes {}-dimensional noise but noise_dim is {}",
                        g.noise_dim(),
                        config.noise_dim
                    )));
                }
                Some(g)
            }
        };
        let disc_opt = Adam::new(config.optimizer, discriminator.network());
        let gen_opt = generator.as_ref().map(|g| Adam::new(config.optimizer, g.network()));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..bags.bags.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            algorithm,
            config: config.clone(),
            discriminator,
            generator,
            disc_opt,
            gen_opt,
            step: 0,
            total_steps: config.total_steps(bags.bags.len()),
            epoch: 0,
            rng,
            order,
            cursor: 0,
            counters: UpdateCounters::default(),
            trace: MetricTrace::default(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps
    }

    fn check_context(&self, ctx: &TrainContext<'_, T>) -> Result<()> {
        let width = ctx.data.features.ncols();
        if width != self.discriminator.input_len() {
            return Err(Error::config(format!(
                "instances have {width} values but the discriminator expects {}",
                self.discriminator.input_len()
            )));
        }
        if ctx.bags.k != self.discriminator.k() {
            return Err(Error::config(format!(
                "bags have {} classes but the discriminator outputs {}",
                ctx.bags.k,
                self.discriminator.k()
            )));
        }
        if let Some(max) = ctx.bags.max_index() {
            if max >= ctx.data.len() {
                return Err(Error::config(format!("bag index {max} out of range for {} instances", ctx.data.len())));
            }
        }
        if self.order.len() != ctx.bags.bags.len() {
            return Err(Error::config("bag count differs from the one this state was created for"));
        }
        if let Some(g) = &self.generator {
            let out: usize = g.output_shape().iter().product();
            if out != width {
                return Err(Error::config(format!("generator emits {out} values per instance, data has {width}")));
            }
        }
        if let Some(ev) = &ctx.eval {
            if ev.features.nrows() != ev.labels.len() || ev.features.ncols() != width {
                return Err(Error::config("evaluation set shape does not match the training data"));
            }
        }
        Ok(())
    }

    /// Runs until `until` steps (or the configured total) have been taken.
    pub fn run(&mut self, ctx: &TrainContext<'_, T>, until: Option<u64>) -> Result<()> {
        self.check_context(ctx)?;
        let stop = until.map_or(self.total_steps, |u| u.min(self.total_steps));
        let started = Instant::now();
        let base = self.trace.rows.last().map_or(0.0, |r| r.wallclock_s);
        while self.step < stop {
            self.step_once(ctx, base, started)?;
            if let (Some(every), Some(path)) = (self.config.checkpoint_every, ctx.checkpoint_path) {
                if self.step % every == 0 {
                    checkpoint_save(self, path)?;
                }
            }
        }
        Ok(())
    }

    /// One training iteration; returns its metric row.
    pub fn step(&mut self, ctx: &TrainContext<'_, T>) -> Result<&MetricRow> {
        self.check_context(ctx)?;
        if self.is_finished() {
            return Err(Error::config(format!("all {} steps already taken", self.total_steps)));
        }
        let base = self.trace.rows.last().map_or(0.0, |r| r.wallclock_s);
        self.step_once(ctx, base, Instant::now())?;
        Ok(self.trace.rows.last().expect("row just pushed"))
    }

    fn step_once(&mut self, ctx: &TrainContext<'_, T>, base: f64, started: Instant) -> Result<()> {
        let end = (self.cursor + self.config.bags_per_step).min(self.order.len());
        let chosen: Vec<usize> = self.order[self.cursor..end].to_vec();
        self.cursor = end;

        let mut row = match self.algorithm {
            Algorithm::LlpGan => self.gan_iteration(ctx, &chosen)?,
            Algorithm::Dllp => self.dllp_iteration(ctx, &chosen)?,
        };
        self.step += 1;
        row.step = self.step;
        row.epoch = self.epoch;

        if self.cursor == self.order.len() {
            if let Some(ev) = &ctx.eval {
                let pred = predict(&mut self.discriminator, ev.features)?;
                row.test_error = Some(crate::harness::error_rate(&pred, ev.labels)?);
            }
            self.epoch += 1;
            self.cursor = 0;
            self.order.shuffle(&mut self.rng);
        }
        row.wallclock_s = base + started.elapsed().as_secs_f64();
        self.trace.rows.push(row);
        Ok(())
    }

    fn diverged(&self, reason: String, losses: Vec<(String, f64)>) -> Error {
        Error::Diverged {
            step: self.step + 1,
            reason,
            snapshot: Box::new(TrainSnapshot {
                algorithm: self.algorithm,
                step: self.step,
                epoch: self.epoch,
                losses,
                counters: self.counters,
                trace: self.trace.clone(),
            }),
        }
    }

    fn guard(&self, losses: Vec<(String, f64)>) -> Result<()> {
        if let Some((name, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(self.diverged(format!("{name} became {v}"), losses.clone()));
        }
        Ok(())
    }

    fn gan_iteration(&mut self, ctx: &TrainContext<'_, T>, chosen: &[usize]) -> Result<MetricRow> {
        let (real, sizes, priors) = gather(ctx, chosen);
        let m = match self.config.fake_batch {
            FakeBatchPolicy::Balanced => real.nrows(),
            FakeBatchPolicy::Fixed(n) => n,
            FakeBatchPolicy::AllTrainingPoints => ctx.bags.instance_count(),
        };
        let noise = NoiseBatch::<T>::sample(m, self.config.noise_dim, &mut self.rng);
        self.counters.fakes_drawn += m as u64;
        self.counters.last_fake_batch = m as u64;
        let generator = self.generator.as_mut().expect("llp-gan state has a generator");
        let fakes = generator.forward(&noise, Mode::Train)?;

        // discriminator ascent on l_real + l_fake + λ·lb_sup
        let n_real = real.nrows();
        let joint = concatenate(Axis(0), &[real.view(), fakes.view()]).map_err(|e| Error::shape(e.to_string()))?;
        self.discriminator.network_mut().zero_grad();
        let out = self.discriminator.forward(joint.view(), Mode::Train)?;
        let real_logits = out.logits.slice(s![..n_real, ..]);
        let fake_logits = out.logits.slice(s![n_real.., ..]);
        let segments = split_rows(real_logits, &sizes);
        let grad = llp_gan_disc_loss_grad(&segments, fake_logits, &priors, T::lit(self.config.lambda_sup))?;
        let term = |n: &str| grad.value.term(n).map(|v| v.as_f64());
        let (l_real, l_fake, lb_sup) = (term("l_real"), term("l_fake"), term("lb_sup"));
        self.guard(vec![
            ("l_real".into(), l_real.unwrap_or(f64::NAN)),
            ("l_fake".into(), l_fake.unwrap_or(f64::NAN)),
            ("lb_sup".into(), lb_sup.unwrap_or(f64::NAN)),
        ])?;
        let mut parts: Vec<ArrayView2<T>> = grad.real.iter().map(|g| g.view()).collect();
        parts.push(grad.fake.view());
        let g_logits = -concatenate(Axis(0), &parts).map_err(|e| Error::shape(e.to_string()))?;
        self.discriminator.backward(g_logits, None);
        self.disc_opt.step(self.discriminator.network_mut());
        self.counters.d_updates += 1;

        // generator descent on feature matching, same noise
        let real_out = self.discriminator.forward(real.view(), Mode::Train)?;
        let fake_out = self.discriminator.forward(fakes.view(), Mode::Train)?;
        let (fm, g_feat) = feature_matching_grad(real_out.features.view(), fake_out.features.view())?;
        self.guard(vec![("fm".into(), fm.as_f64())])?;
        let k = self.discriminator.k();
        let g_input = self.discriminator.backward(Array2::zeros((m, k)), Some(g_feat));
        let generator = self.generator.as_mut().expect("llp-gan state has a generator");
        generator.network_mut().zero_grad();
        generator.backward(g_input);
        self.gen_opt.as_mut().expect("generator optimizer").step(generator.network_mut());
        self.counters.g_updates += 1;

        Ok(MetricRow { l_real, l_fake, lb_sup, fm: Some(fm.as_f64()), ..MetricRow::default() })
    }

    fn dllp_iteration(&mut self, ctx: &TrainContext<'_, T>, chosen: &[usize]) -> Result<MetricRow> {
        let (real, sizes, priors) = gather(ctx, chosen);
        self.discriminator.network_mut().zero_grad();
        let out = self.discriminator.forward(real.view(), Mode::Train)?;
        let post = softmax_rows(out.logits.view());
        let segments = split_rows(post.view(), &sizes);
        let (loss, grads) = dllp_total_grad(&priors, &segments, T::lit(self.config.lambda_ent))?;
        let total = loss.total.as_f64();
        let entropy = loss.term("e_in").map(|v| v.as_f64());
        self.guard(vec![("dllp".into(), total), ("entropy".into(), entropy.unwrap_or(f64::NAN))])?;
        let views: Vec<ArrayView2<T>> = grads.iter().map(|g| g.view()).collect();
        let g_post = concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        let g_logits = softmax_backward(post.view(), g_post.view());
        self.discriminator.backward(g_logits, None);
        self.disc_opt.step(self.discriminator.network_mut());
        self.counters.d_updates += 1;
        Ok(MetricRow { dllp: Some(total), entropy, ..MetricRow::default() })
    }
}

fn gather<T: Scalar>(ctx: &TrainContext<'_, T>, chosen: &[usize]) -> (Array2<T>, Vec<usize>, Vec<ProportionVector<T>>) {
    let bags: Vec<_> = chosen.iter().map(|&b| &ctx.bags.bags[b]).collect();
    let idx: Vec<usize> = bags.iter().flat_map(|b| b.instance_indices.iter().copied()).collect();
    let real = ctx.data.features.select(Axis(0), &idx);
    let sizes = bags.iter().map(|b| b.len()).collect();
    let priors = bags.iter().map(|b| b.proportions.cast::<T>()).collect();
    (real, sizes, priors)
}

fn split_rows<'a, T>(rows: ArrayView2<'a, T>, sizes: &[usize]) -> Vec<ArrayView2<'a, T>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &n in sizes {
        out.push(rows.slice_move(s![start..start + n, ..]));
        start += n;
    }
    out
}

/// Argmax of the normalized posterior, lowest index on ties.
pub fn predict<T: Scalar>(disc: &mut Discriminator<T>, features: ArrayView2<T>) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(features.nrows());
    let mut start = 0;
    while start < features.nrows() {
        let end = (start + EVAL_CHUNK).min(features.nrows());
        let batch = disc.forward(features.slice(s![start..end, ..]), Mode::Eval)?;
        let post = normalize_posterior_rows(batch.probs.view());
        out.extend(post.rows().into_iter().map(|r| argmax(r.iter().copied())));
        start = end;
    }
    Ok(out)
}

pub fn argmax<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |b| b.0)
}

/// Runs LLP-GAN to completion.
pub fn train_llp_gan<T: Scalar>(
    ctx: &TrainContext<'_, T>,
    discriminator: Discriminator<T>,
    generator: Generator<T>,
    config: &TrainConfig,
) -> Result<TrainState<T>> {
    let mut state = TrainState::new(Algorithm::LlpGan, discriminator, Some(generator), config, ctx.bags)?;
    state.run(ctx, None)?;
    Ok(state)
}

/// Runs the DLLP baseline to completion.
pub fn train_dllp<T: Scalar>(
    ctx: &TrainContext<'_, T>,
    discriminator: Discriminator<T>,
    config: &TrainConfig,
) -> Result<TrainState<T>> {
    let mut state = TrainState::new(Algorithm::Dllp, discriminator, None, config, ctx.bags)?;
    state.run(ctx, None)?;
    Ok(state)
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    checksum: String,
    payload: String,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    scalar: String,
    algorithm: Algorithm,
    config: TrainConfig,
    k: usize,
    discriminator: NetworkState,
    generator: Option<NetworkState>,
    disc_opt: AdamState,
    gen_opt: Option<AdamState>,
    step: u64,
    total_steps: u64,
    epoch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    counters: UpdateCounters,
    trace: MetricTrace,
}

fn scalar_name<T: Scalar>() -> String {
    format!("f{}", std::mem::size_of::<T>() * 8)
}

fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Writes a self-describing, checksummed checkpoint.
pub fn checkpoint_save<T: Scalar>(state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    let payload = Payload {
        scalar: scalar_name::<T>(),
        algorithm: state.algorithm,
        config: state.config.clone(),
        k: state.discriminator.k(),
        discriminator: state.discriminator.network().state(),
        generator: state.generator.as_ref().map(|g| g.network().state()),
        disc_opt: state.disc_opt.state(),
        gen_opt: state.gen_opt.as_ref().map(Adam::state),
        step: state.step,
        total_steps: state.total_steps,
        epoch: state.epoch,
        rng: state.rng.clone(),
        order: state.order.clone(),
        cursor: state.cursor,
        counters: state.counters,
        trace: state.trace.clone(),
    };
    let payload = serde_json::to_string(&payload)?;
    let container = Container {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        checksum: sha256_hex(&payload),
        payload,
    };
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_string(&container)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_restore<T: Scalar>(path: impl AsRef<Path>) -> Result<TrainState<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let container: Container =
        serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))?;
    if container.format != CHECKPOINT_FORMAT {
        return Err(Error::Incompatible(format!("not a checkpoint (format `{}`)", container.format)));
    }
    if container.version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {} but this build reads version {CHECKPOINT_VERSION}",
            container.version
        )));
    }
    if sha256_hex(&container.payload) != container.checksum {
        return Err(Error::Integrity("checkpoint checksum mismatch".into()));
    }
    let p: Payload = serde_json::from_str(&container.payload)
        .map_err(|e| Error::Integrity(format!("malformed checkpoint payload: {e}")))?;
    if p.scalar != scalar_name::<T>() {
        return Err(Error::Incompatible(format!("checkpoint holds {} parameters, requested {}", p.scalar, scalar_name::<T>())));
    }
    let discriminator = Discriminator::from_network(Network::from_state(&p.discriminator)?, p.k)?;
    let disc_opt = Adam::from_state(&p.disc_opt, discriminator.network())?;
    let generator = p.generator.as_ref().map(|g| Network::from_state(g).and_then(Generator::from_network)).transpose()?;
    let gen_opt = match (&generator, &p.gen_opt) {
        (Some(g), Some(s)) => Some(Adam::from_state(s, g.network())?),
        (None, None) => None,
        _ => return Err(Error::Incompatible("generator and its optimizer state disagree".into())),
    };
    Ok(TrainState {
        algorithm: p.algorithm,
        config: p.config,
        discriminator,
        generator,
        disc_opt,
        gen_opt,
        step: p.step,
        total_steps: p.total_steps,
        epoch: p.epoch,
        rng: p.rng,
        order: p.order,
        cursor: p.cursor,
        counters: p.counters,
        trace: p.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax([0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax([1.0, 1.0]), 0);
        assert_eq!(argmax(Vec::<f64>::new()), 0);
    }

    #[test]
    fn csv_round_trip() {
        let trace = MetricTrace {
            rows: vec![
                MetricRow { step: 1, epoch: 0, l_real: Some(-0.5), fm: Some(0.25), wallclock_s: 0.1, ..Default::default() },
                MetricRow { step: 2, epoch: 0, dllp: Some(1.0), test_error: Some(12.5), wallclock_s: 0.2, ..Default::default() },
            ],
        };
        let back = MetricTrace::from_csv(&trace.to_csv()).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].test_error, Some(12.5));
        assert_eq!(back.rows[0].l_fake, None);
        assert!(trace.to_csv().starts_with(TRACE_HEADER));
    }

    #[test]
    fn epoch_entropy_sums_within_epochs() {
        let row = |epoch, e| MetricRow { epoch, entropy: Some(e), ..Default::default() };
        let t = MetricTrace { rows: vec![row(0, 1.0), row(0, 2.0), row(1, 0.5)] };
        assert_eq!(t.epoch_entropy(), vec![3.0, 0.5]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { lambda_sup: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { bags_per_step: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let c = TrainConfig { epochs: 3, bags_per_step: 4, ..Default::default() };
        assert_eq!(c.total_steps(10), 9);
        assert_eq!(TrainConfig { max_steps: Some(5), ..c }.total_steps(10), 5);
    }
}
