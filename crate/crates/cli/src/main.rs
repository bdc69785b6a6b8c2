//! `ifa`: generate data, train, evaluate, ablate, self-check and benchmark.
//!
//! Exit codes: 0 success, 1 property or training failure, 2 usage or
//! config error, 3 IO or checkpoint error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ifa_core::attention::KernelFn;
use ifa_core::bench::{run_bench, BenchConfig, BenchKind, Grid};
use ifa_core::check::{run_all, Fault};
use ifa_core::config::RunConfig;
use ifa_core::data::{evaluate, holdout_split, read_dataset, write_dataset, Generator};
use ifa_core::experiment::{ablation_variants, baseline_variants, format_table, run_variants};
use ifa_core::model::{Baseline, IfaModel};
use ifa_core::training::{load_checkpoint, save_checkpoint, train};
use ifa_core::Error;

#[derive(Parser)]
#[command(name = "ifa", version, about = "Full-sequence linear cross-attention ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (one JSON request per line).
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `gen.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `gen.num_requests`.
        #[arg(long)]
        requests: Option<usize>,
    },
    /// Train on the head of a dataset; writes the checkpoint, a config
    /// sidecar `<ckpt>.toml` and a step log.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint and report per-action AUC.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate every request instead of the held-out tail.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        json: bool,
    },
    /// Train the full model, without RAM, and without FSM and RAM; print a
    /// comparison table of held-out AUC.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Also compare against the sequence baselines.
        #[arg(long)]
        baselines: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run the property suites; nonzero exit if any fails.
    Check {
        /// Inject a fault (`skip-norm`) that the suites must catch.
        #[arg(long)]
        fault: Option<Fault>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Time single-threaded attention forward passes over an (m, n) grid.
    Bench {
        /// `s=256..16384*2` or `m=1024;n=256..16384*2`.
        #[arg(long)]
        grid: Grid,
        #[arg(long, default_value = "linear")]
        kind: BenchKind,
        /// Output file for the JSON-lines records.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Step log; defaults to `<ckpt>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<Baseline>,
    #[arg(long)]
    kernel: Option<KernelFn>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_fsm: bool,
    #[arg(long)]
    no_ram: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Checkpoint(_) | Error::Parse { .. } => 3,
        Error::Training { .. } => 1,
        Error::Usage(_) | Error::Config(_) | Error::Data { .. } | Error::Dimension { .. } => 2,
    }
}

/// Prefixes IO errors with the offending path.
fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p).map_err(at(p)),
        None => RunConfig::from_toml(""),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_generate(config: Option<&Path>, out: &Path, seed: Option<u64>, requests: Option<usize>) -> Result<(), Error> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.gen.seed = s;
    }
    if let Some(r) = requests {
        cfg.gen.num_requests = r;
    }
    let data = Generator::generate(&cfg.gen)?;
    write_dataset(out, &data).map_err(at(out))?;
    println!("wrote {} requests to {}", data.len(), out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(b) = args.baseline {
        cfg.model = cfg.model.as_baseline(b);
    }
    if let Some(k) = args.kernel {
        cfg.model.kernel = k;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.model.use_fsm &= !args.no_fsm;
    cfg.model.use_ram &= !args.no_ram;
    cfg.validate()?;

    let data = read_dataset(&args.data).map_err(at(&args.data))?;
    let (head, _) = holdout_split(&data, cfg.eval.holdout_frac);
    let mut model = IfaModel::new(cfg.model.clone(), cfg.train.seed)?;
    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.ckpt, ".log"));
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| at(&log_path)(e.into()))?);
    let outcome = train(&mut model, head, &cfg.train, Some(&mut log))?;
    log.flush()?;
    save_checkpoint(&args.ckpt, &model, outcome.steps).map_err(at(&args.ckpt))?;
    fs::write(with_suffix(&args.ckpt, ".toml"), cfg.to_toml())?;
    println!("trained {} steps on {} requests", outcome.steps, head.len());
    println!("stream   {}", outcome.stream);
    println!("checkpoint {}  log {}", args.ckpt.display(), log_path.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, all: bool, json: bool) -> Result<(), Error> {
    let sidecar = with_suffix(ckpt, ".toml");
    let cfg = RunConfig::load(&sidecar).map_err(at(&sidecar))?;
    let (model, step) = load_checkpoint(ckpt, cfg.model.clone()).map_err(at(ckpt))?;
    let requests = read_dataset(data).map_err(at(data))?;
    let scope = if all {
        &requests[..]
    } else {
        holdout_split(&requests, cfg.eval.holdout_frac).1
    };
    let report = evaluate(&model, scope)?;
    if json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("step {step}  {report}");
    }
    Ok(())
}

fn cmd_ablate(config: Option<&Path>, data: &Path, baselines: bool, json: bool) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let requests = read_dataset(data).map_err(at(data))?;
    let mut variants = ablation_variants(&cfg.model);
    if baselines {
        variants.extend(baseline_variants(&cfg.model).into_iter().skip(1));
    }
    let results = run_variants(&cfg, &variants, &requests)?;
    if json {
        for r in &results {
            println!("{}", serde_json::to_string(r).expect("result serializes"));
        }
    } else {
        print!("{}", format_table(&results));
    }
    Ok(())
}

fn cmd_check(fault: Option<Fault>, seed: u64) -> Result<bool, Error> {
    let report = run_all(fault, seed)?;
    print!("{report}");
    Ok(report.all_passed())
}

fn cmd_bench(grid: &Grid, kind: BenchKind, out: &Path, d: usize, reps: usize) -> Result<(), Error> {
    if d == 0 || reps == 0 {
        return Err(Error::Usage("--d and --reps must be positive".into()));
    }
    let cfg = BenchConfig {
        d,
        min_reps: reps,
        ..BenchConfig::default()
    };
    let result = run_bench(kind, grid, &cfg)?;
    fs::write(out, result.to_json_lines()).map_err(|e| at(out)(e.into()))?;
    for c in &result.cells {
        println!(
            "{kind:<6} m={:<6} n={:<6} mean={:.4e}s std={:.1e}s reps={:<4} per_item={:.3e}s",
            c.m,
            c.n,
            c.mean_s,
            c.std_s,
            c.reps,
            c.mean_s / c.m as f64
        );
    }
    for (m, n, note) in &result.skipped {
        println!("{kind:<6} m={m:<6} n={n:<6} skipped: {note}");
    }
    if let Some(s) = result.slope_vs_s() {
        println!("slope vs s (m = n): {s:.3}");
    }
    let mut ms: Vec<usize> = result.cells.iter().map(|c| c.m).collect();
    ms.dedup();
    for m in ms {
        if let Some(s) = result.slope_vs_n(m).filter(|_| result.cells.iter().any(|c| c.m == m && c.n != m)) {
            println!("slope vs n at m={m}: {s:.3}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate {
            config,
            out,
            seed,
            requests,
        } => cmd_generate(config.as_deref(), out, *seed, *requests),
        Command::Train(args) => cmd_train(args),
        Command::Eval { ckpt, data, all, json } => cmd_eval(ckpt, data, *all, *json),
        Command::Ablate {
            config,
            data,
            baselines,
            json,
        } => cmd_ablate(config.as_deref(), data, *baselines, *json),
        Command::Check { fault, seed } => match cmd_check(*fault, *seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Bench {
            grid,
            kind,
            out,
            d,
            reps,
        } => cmd_bench(grid, *kind, out, *d, *reps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
