use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use llp::bagset::{load_manifest, partition_into_bags, persist_label_sidecar, persist_manifest};
use llp::datasets;
use llp::harness::{self, ExperimentConfig, Precision, SweepParam};
use llp::netzoo::{build_discriminator, build_generator, ArchitectureSpec};
use llp::optim::AdamConfig;
use llp::oracle::{run_checks, Check, TabularWorld};
use llp::trainer::{checkpoint_restore, checkpoint_save, Algorithm, EvalSet, TrainConfig, TrainContext, TrainState};
use llp::{Error, Result, Scalar};

#[derive(Parser)]
#[command(name = "llp", version, about = "Learning from label proportions: LLP-GAN, DLLP and a tabular oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a dataset into disjoint bags and write a manifest.
    Bag {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        bag_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the hidden instance labels here.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        /// Keep only two classes, relabeled 0 and 1 (`--binary 3,8`).
        #[arg(long, value_delimiter = ',', num_args = 2)]
        binary: Option<Vec<usize>>,
    },
    /// Train LLP-GAN or DLLP on a bag manifest.
    Train {
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda_sup: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda_ent: f64,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        #[arg(long, default_value_t = 4)]
        bags_per_step: usize,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, default_value_t = 3e-4)]
        lr: f64,
        #[arg(long)]
        noise_dim: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, value_parser = parse_precision, default_value = "f32")]
        precision: Precision,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Check the game's equilibria on a tabular world.
    Oracle {
        #[arg(long)]
        world: PathBuf,
        /// One of discriminator, prior, generator, value, all.
        #[arg(long, default_value = "all")]
        check: Check,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an experiment config once per parameter value.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-bag step time across training-set sizes.
    Timing {
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
    }
}

struct TrainArgs {
    algo: Algorithm,
    manifest: PathBuf,
    config: TrainConfig,
    out: PathBuf,
    data_dir: Option<PathBuf>,
    data_seed: u64,
    noise_dim: Option<usize>,
    hidden: Option<usize>,
    resume: Option<PathBuf>,
}

fn train<T: Scalar>(args: &TrainArgs) -> Result<()> {
    let bags = load_manifest(&args.manifest)?;
    let data = datasets::resolve::<T>(&bags.source, args.data_dir.as_deref(), args.data_seed)?;
    let shape = &data.train.instance_shape;
    let noise = args.noise_dim.unwrap_or(if shape.len() == 3 { 100 } else { 16 });
    let (dspec, gspec) = match (shape.as_slice(), args.hidden) {
        ([d], Some(h)) => (ArchitectureSpec::mlp_discriminator(*d, h, bags.k), ArchitectureSpec::mlp_generator(noise, h, *d)),
        _ => ArchitectureSpec::presets_for(shape, bags.k, noise)?,
    };
    let mut config = args.config.clone();
    config.noise_dim = noise;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    let ckpt = args.out.join("checkpoint.json");
    let mut state = match &args.resume {
        Some(path) => checkpoint_restore::<T>(path)?,
        None => {
            let d = build_discriminator::<T>(&dspec, bags.k, config.seed.wrapping_mul(2).wrapping_add(1))?;
            let g = match args.algo {
                Algorithm::LlpGan => Some(build_generator::<T>(&gspec, config.seed.wrapping_mul(2).wrapping_add(2))?),
                Algorithm::Dllp => None,
            };
            TrainState::new(args.algo, d, g, &config, &bags)?
        }
    };
    let ctx = TrainContext::new(data.train.unlabeled(), &bags)
        .with_eval(EvalSet { features: data.test.features.view(), labels: &data.test.labels })
        .with_checkpoints(&ckpt);
    let outcome = state.run(&ctx, None);
    state.trace.write_csv(args.out.join("metrics.csv"))?;
    outcome?;
    checkpoint_save(&state, &ckpt)?;
    if state.algorithm == Algorithm::Dllp {
        harness::entropy_trace_report(&state.trace, args.out.join("entropy.csv"))?;
    }
    let last = state.trace.epoch_errors().last().copied();
    println!(
        "{} steps, {} epochs, final test error {}",
        state.step,
        state.epoch,
        last.map_or("n/a".to_string(), |e| format!("{e:.2}%"))
    );
    Ok(())
}

fn write_json(path: &Path, value: &harness::TimingReport) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn print_report(report: &harness::ExperimentReport) {
    for s in &report.summaries {
        println!(
            "{} {} bag {} lambda_sup {} lambda_ent {}: final error {:.2}% (sample std {:.2}) over {} seed(s)",
            report.dataset,
            report.algorithm,
            report.bag_size,
            s.lambda_sup,
            s.lambda_ent,
            s.final_error_mean,
            s.final_error_std,
            report.seeds.len()
        );
    }
    for run in report.runs.iter().filter(|r| r.error.is_some()) {
        eprintln!("seed {} aborted: {}", run.seed, run.error.as_deref().unwrap_or_default());
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Bag { dataset, bag_size, seed, out, labels, data_dir, data_seed, binary } => {
            let dataset = match binary.as_deref() {
                Some([a, b]) => format!("{dataset}/binary-{a}-{b}"),
                Some(_) => return Err(Error::InvalidConfig("--binary takes two class indices".into())),
                None => dataset,
            };
            let data = datasets::resolve::<f32>(&dataset, data_dir.as_deref(), data_seed)?;
            let bags = partition_into_bags(&data.train, bag_size, seed)?;
            persist_manifest(&bags, &out)?;
            if let Some(path) = labels {
                persist_label_sidecar(&data.train.label_sidecar(), path)?;
            }
            println!("{} bags of {} from {} instances", bags.bags.len(), bag_size, data.train.len());
            Ok(true)
        }
        Command::Train {
            algo,
            manifest,
            lambda_sup,
            lambda_ent,
            epochs,
            seed,
            out,
            data_dir,
            data_seed,
            bags_per_step,
            max_steps,
            lr,
            noise_dim,
            hidden,
            precision,
            checkpoint_every,
            resume,
        } => {
            let config = TrainConfig {
                lambda_sup,
                lambda_ent,
                epochs,
                max_steps,
                bags_per_step,
                optimizer: AdamConfig { lr, ..AdamConfig::default() },
                seed,
                checkpoint_every,
                ..TrainConfig::default()
            };
            let args = TrainArgs { algo, manifest, config, out, data_dir, data_seed, noise_dim, hidden, resume };
            match precision {
                Precision::F32 => train::<f32>(&args)?,
                Precision::F64 => train::<f64>(&args)?,
            }
            Ok(true)
        }
        Command::Oracle { world, check, seed } => {
            let world = TabularWorld::load(world)?;
            let report = run_checks(&world, check, seed)?;
            print!("{report}");
            Ok(report.passed())
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let report = harness::run_experiment(&cfg)?;
            print_report(&report);
            Ok(report.complete)
        }
        Command::Sweep { param, values, config } => {
            let cfg = ExperimentConfig::load(config)?;
            let report = harness::sweep(&cfg, param, &values)?;
            print_report(&report);
            Ok(report.complete)
        }
        Command::Timing { sizes, config } => {
            let cfg = ExperimentConfig::load(config)?;
            let report = harness::timing_profile(&cfg, &sizes)?;
            println!("m,ln_m,per_bag_seconds");
            for r in &report.rows {
                println!("{},{:.4},{:.6}", r.sample_size, r.ln_m, r.per_bag_seconds);
            }
            println!("fit: time = {:.6} + {:.6} ln m, R^2 = {:.4}", report.intercept, report.slope, report.r_squared);
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io { path: cfg.out_dir.clone(), source: e })?;
            write_json(&cfg.out_dir.join("timing.json"), &report)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
