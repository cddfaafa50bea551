use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use admm_gcn::admm::{Hyperparams, ModelState, Problem};
use admm_gcn::baselines::{train_baseline, OptimizerConfig, OptimizerKind};
use admm_gcn::data::{generate_sbm, load_dataset, write_metrics, Dataset, RunMetrics, SbmSpec};
use admm_gcn::partition::write_partition;
use admm_gcn::runtime::bench::{partition_for, run_bench};
use admm_gcn::runtime::{AdmmTrainer, InProcess, Schedule};
use admm_gcn::{nn, normalize_adjacency, seed, Error};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "admm-gcn", version, about = "Community-partitioned ADMM training for GCNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with ADMM or a gradient baseline and write per-epoch metrics.
    Train(TrainArgs),
    /// Split the graph into communities and write the assignment.
    Partition(PartitionArgs),
    /// Serial against parallel ADMM on identical seeds.
    Bench(TrainArgs),
}

#[derive(Args)]
struct Source {
    /// Synthetic block-model graph: `default` or `key=value` overrides
    /// (blocks, size, p_in, p_out, dim, signal, train).
    #[arg(long, value_name = "SPEC", conflicts_with = "data")]
    sbm: Option<String>,
    /// Directory with a converted dataset.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Optimizer {
    Admm,
    Gd,
    Adam,
    Adagrad,
    Adadelta,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Serial,
    Parallel,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value_t = Optimizer::Admm)]
    optimizer: Optimizer,
    #[arg(long, value_enum, default_value_t = Mode::Serial)]
    mode: Mode,
    /// Number of communities (default 1 serial, 3 parallel).
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Hidden widths, comma separated; a single value is repeated.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    nu: f64,
    #[arg(long, default_value_t = 1e-3)]
    rho: f64,
    /// Baseline learning rate (default 0.1 for gd, 1e-3 otherwise).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    fista_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics CSV.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Worker threads for the parallel schedule (default communities + 1).
    #[arg(long)]
    workers: Option<usize>,
    /// Save the final ADMM state here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 3)]
    communities: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

fn parse_sbm(spec: &str, master: u64) -> Result<SbmSpec> {
    let mut s = SbmSpec {
        seed: seed::derive(master, seed::SBM),
        ..SbmSpec::default()
    };
    if spec == "default" {
        return Ok(s);
    }
    for item in spec.split(',') {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("bad SBM field `{item}`, expected key=value")))?;
        let bad = || usage(format!("bad value for SBM field `{key}`: {value}"));
        match key.trim() {
            "blocks" => s.communities = value.parse().map_err(|_| bad())?,
            "size" => s.nodes_per_community = value.parse().map_err(|_| bad())?,
            "p_in" => s.p_in = value.parse().map_err(|_| bad())?,
            "p_out" => s.p_out = value.parse().map_err(|_| bad())?,
            "dim" => s.feature_dim = value.parse().map_err(|_| bad())?,
            "signal" => s.signal = value.parse().map_err(|_| bad())?,
            "train" => s.train_per_community = value.parse().map_err(|_| bad())?,
            other => return Err(usage(format!("unknown SBM field `{other}`"))),
        }
    }
    Ok(s)
}

fn load(source: &Source, master: u64) -> Result<Dataset> {
    match (&source.data, &source.sbm) {
        (Some(dir), _) => load_dataset(dir).with_context(|| format!("loading {}", dir.display())),
        (None, spec) => Ok(generate_sbm(&parse_sbm(spec.as_deref().unwrap_or("default"), master)?)?),
    }
}

fn hidden_widths(args: &TrainArgs) -> Result<Vec<usize>> {
    if args.layers < 2 {
        return Err(usage("at least 2 layers are required"));
    }
    let want = args.layers - 1;
    match args.hidden.len() {
        1 => Ok(vec![args.hidden[0]; want]),
        n if n == want => Ok(args.hidden.clone()),
        n => Err(usage(format!("{n} hidden widths given for {} layers", args.layers))),
    }
}

fn worker_cap() -> usize {
    std::env::var("ADMM_GCN_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn workers(args: &TrainArgs, communities: usize) -> usize {
    args.workers.unwrap_or(communities + 1).min(worker_cap()).max(1)
}

fn hyperparams(args: &TrainArgs) -> Result<Hyperparams> {
    let hp = Hyperparams {
        nu: args.nu,
        rho: args.rho,
        hidden: hidden_widths(args)?,
        epochs: args.epochs,
        fista_iters: args.fista_iters,
        ..Hyperparams::default()
    };
    hp.validate()?;
    Ok(hp)
}

fn communities(args: &TrainArgs, default: usize) -> Result<usize> {
    let m = args.communities.unwrap_or(default);
    if m == 0 {
        return Err(usage("--communities must be at least 1"));
    }
    Ok(m)
}

fn summarize(run: &RunMetrics) {
    if let Some(last) = run.epochs.last() {
        println!(
            "final: train acc {:.4}, test acc {:.4}, loss {:.6}",
            last.train_acc, last.test_acc, last.loss
        );
    }
}

fn train(args: &TrainArgs) -> Result<()> {
    if args.mode == Mode::Parallel && args.optimizer != Optimizer::Admm {
        return Err(usage("--mode parallel requires --optimizer admm"));
    }
    let dataset = load(&args.source, args.seed)?;
    let kind = match args.optimizer {
        Optimizer::Admm => return train_admm(args, dataset),
        Optimizer::Gd => OptimizerKind::Gd,
        Optimizer::Adam => OptimizerKind::Adam,
        Optimizer::Adagrad => OptimizerKind::Adagrad,
        Optimizer::Adadelta => OptimizerKind::Adadelta,
    };
    let cfg = OptimizerConfig::new(kind, args.lr.unwrap_or(kind.default_lr()));
    cfg.validate()?;
    let mut dims = vec![dataset.features.cols()];
    dims.extend(hidden_widths(args)?);
    dims.push(dataset.labels.cols());
    let w = nn::init_weights(&dims, &mut seed::stream(args.seed, seed::INIT));
    let a = normalize_adjacency(&dataset.graph);
    let (_, run) = train_baseline(&a, &dataset, w, cfg, args.epochs)?;
    for e in &run.epochs {
        println!(
            "epoch {:>4}  loss {:.6}  train {:.4}  test {:.4}",
            e.epoch, e.loss, e.train_acc, e.test_acc
        );
    }
    write_metrics(&run, &args.out)?;
    summarize(&run);
    Ok(())
}

fn train_admm(args: &TrainArgs, dataset: Dataset) -> Result<()> {
    let hp = hyperparams(args)?;
    let m = communities(args, if args.mode == Mode::Parallel { 3 } else { 1 })?;
    let schedule = match args.mode {
        Mode::Serial => Schedule::Serial,
        Mode::Parallel => Schedule::Parallel {
            workers: workers(args, m),
        },
    };
    let problem = Problem::new(&dataset, partition_for(&dataset, m, args.seed)?, &hp.hidden)?;
    let state = ModelState::initialize(&problem, &mut seed::stream(args.seed, seed::INIT))?;
    let mut trainer = AdmmTrainer::new(problem, hp, state, schedule, Box::new(InProcess))?;
    let start = Instant::now();
    let run = trainer.train(|e, r| {
        println!(
            "epoch {:>4}  loss {:.6}  train {:.4}  test {:.4}  residual {:.3e}",
            e.epoch, e.loss, e.train_acc, e.test_acc, r.residual
        );
    })?;
    let wall = start.elapsed().as_secs_f64();
    write_metrics(&run, &args.out)?;
    summarize(&run);
    let (train_s, comm_s) = run
        .epochs
        .iter()
        .fold((0.0, 0.0), |(t, c), e| (t + e.train_time_s, c + e.comm_time_s));
    let epochs = run.epochs.len().max(1) as f64;
    println!(
        "{} with {m} communities: wall {wall:.3}s, training {train_s:.3}s, communication {comm_s:.3}s, {:.4}s per epoch",
        schedule.method_name(),
        wall / epochs
    );
    println!("checksum {}", trainer.state().stacked(trainer.problem()).checksum());
    if let Some(path) = &args.checkpoint {
        trainer.state().save(path)?;
    }
    Ok(())
}

fn bench(args: &TrainArgs) -> Result<()> {
    if args.optimizer != Optimizer::Admm {
        return Err(usage("bench runs ADMM only"));
    }
    let dataset = load(&args.source, args.seed)?;
    let hp = hyperparams(args)?;
    let m = communities(args, 3)?;
    let report = run_bench(&dataset, &hp, m, workers(args, m), args.seed)?;
    print!("{}", report.table());
    println!(
        "iterates agree: relative error {:.2e}; checksums {} / {}",
        report.relative_error, report.serial.checksum, report.parallel.checksum
    );
    let mut both = report.serial.metrics.clone();
    both.epochs.extend(report.parallel.metrics.epochs.iter().cloned());
    write_metrics(&both, &args.out)?;
    Ok(())
}

fn partition(args: &PartitionArgs) -> Result<()> {
    let dataset = load(&args.source, args.seed)?;
    if args.communities == 0 {
        return Err(usage("--communities must be at least 1"));
    }
    let p = partition_for(&dataset, args.communities, args.seed)?;
    write_partition(&p, &args.out)?;
    println!(
        "{} communities, sizes {:?}, cut edges {} of {}, imbalance {:.3}",
        p.num_communities(),
        p.sizes(),
        p.cut_edges(&dataset.graph),
        dataset.graph.edge_count(),
        p.imbalance()
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_)) => 2,
        Some(Error::Divergence { .. } | Error::NonFinite(_)) => 3,
        Some(Error::IterateMismatch { .. }) => 4,
        Some(Error::Agent { source, .. }) if matches!(**source, Error::Divergence { .. } | Error::NonFinite(_)) => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => train(args),
        Command::Partition(args) => partition(args),
        Command::Bench(args) => bench(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
