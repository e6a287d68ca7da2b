//! Command-line driver: dataset generation, training, evaluation, the
//! permutation-consistency suite, cost tables, and the grid-oracle
//! comparison.
//!
//! Exit codes: 0 on success, 1 on argument/configuration errors, 2 on
//! numeric failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use usrmnet::harness::{evaluate, oracle_wsr, permutation_suite, Dataset, RunConfig};
use usrmnet::learn::train_usrmnet;
use usrmnet::unroll::{Checkpoint, UsrmNet, CHECKPOINT_VERSION};
use usrmnet::Error;

#[derive(Parser)]
#[command(name = "usrmnet", version, about = "Unrolled PGD beamforming/power-allocation toolkit", long_about = None)]
struct Cli {
    /// Seed override applied on top of the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run-configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (file or directory depending on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file from the run configuration.
    Gen(GenArgs),
    /// Train a model from the run configuration; writes a checkpoint and a
    /// training-log CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset; writes CSV/JSON reports.
    Eval(EvalArgs),
    /// Run the permutation-consistency suite and print the worst deviation.
    Permtest(PermtestArgs),
    /// Print the flop-count comparison table as CSV.
    Cost(CostArgs),
    /// Compare a trained model against the exhaustive grid oracle.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of samples (defaults to the configuration's train_samples).
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Pre-generated dataset to train on instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset file produced by `gen`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct PermtestArgs {
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long = "nt", default_value_t = 8)]
    n_t: usize,
    /// Number of random permutations per check.
    #[arg(long, default_value_t = 100)]
    perms: usize,
    /// Deviation bound for a clean exit.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct CostArgs {
    /// User counts to tabulate.
    #[arg(long = "K", value_delimiter = ',', default_values_t = vec![4usize, 6, 8, 10])]
    k: Vec<usize>,
    #[arg(long = "Nt", default_value_t = 32)]
    n_t: usize,
    #[arg(long = "L", default_value_t = 2)]
    depth: usize,
}

#[derive(Args)]
struct OracleArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset file produced by `gen` (at most 3 users).
    #[arg(long)]
    data: PathBuf,
    /// Grid resolution per power axis.
    #[arg(long, default_value_t = 200)]
    resolution: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Numeric { .. }) | Some(Error::Infeasible(_))
                | Some(Error::Degenerate(_)) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut cfg = match cli_config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Gen(args) => {
            let cfg = load_config(&cli.config, cli.seed)?;
            let count = args.count.unwrap_or(cfg.train_samples);
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("dataset.bin"));
            let ds = Dataset::generate(&cfg.sys, &cfg.geo, cfg.train.seed, count)?;
            ds.save(&out)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Train(args) => {
            let cfg = load_config(&cli.config, cli.seed)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out)?;
            let ds = match &args.data {
                Some(path) => {
                    let ds = Dataset::load(path)?;
                    if ds.header.sys != cfg.sys {
                        anyhow::bail!(Error::Contract(
                            "dataset system parameters do not match the configuration".into()
                        ));
                    }
                    ds
                }
                None => Dataset::generate(&cfg.sys, &cfg.geo, cfg.train.seed, cfg.train_samples)?,
            };
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                cfg.train.seed ^ 0xA5A5_5A5A,
            );
            let mut model = UsrmNet::random(cfg.sys.k, cfg.depth, cfg.filter_order, &mut rng);
            let (duals, log) = train_usrmnet(&mut model, ds.train_samples()?, &cfg.train)?;
            log.write_csv(&out.join("trainlog.csv"))?;
            let ckpt = Checkpoint {
                version: CHECKPOINT_VERSION,
                sys: cfg.sys.clone(),
                geo: cfg.geo.clone(),
                train: cfg.train.clone(),
                model,
                duals,
            };
            ckpt.save(&out.join("checkpoint.json"))?;
            let last = log.records.last().expect("at least one epoch");
            println!(
                "trained {} layers; final loss {:.6}, mean violation {:.3e}",
                ckpt.model.depth(),
                last.loss,
                last.mean_vg
            );
            println!("wrote {}", out.join("checkpoint.json").display());
        }
        Command::Eval(args) => {
            let ckpt = Checkpoint::load(&args.ckpt)?;
            let ds = Dataset::load(&args.data)?;
            if ds.header.sys.k != ckpt.sys.k {
                anyhow::bail!(Error::Contract(
                    "dataset and checkpoint disagree on the user count".into()
                ));
            }
            let report = evaluate(&ckpt.model, &ds)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out)?;
            report.write(&out, "report")?;
            println!(
                "feasible fraction {:.4}; mean feasible objective {}",
                report.feasible_fraction,
                report
                    .mean_wsr_feasible
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_else(|| "n/a".into())
            );
        }
        Command::Permtest(args) => {
            let seed = cli.seed.unwrap_or(7);
            let report = permutation_suite(seed, args.k, args.n_t, args.perms)?;
            let max = report.max_deviation();
            println!("max deviation {max:.3e}");
            if !(max < args.tol) {
                anyhow::bail!(Error::Numeric {
                    node: 0,
                    msg: format!("permutation deviation {max:.3e} exceeds {:.1e}", args.tol),
                });
            }
        }
        Command::Cost(args) => {
            let rows = usrmnet::cost::cost_table(&args.k, args.n_t, args.depth)?;
            let csv = usrmnet::cost::cost_table_csv(&rows);
            print!("{csv}");
            if let Some(out) = &cli.out {
                std::fs::write(out, csv)?;
            }
        }
        Command::Oracle(args) => {
            let ckpt = Checkpoint::load(&args.ckpt)?;
            let ds = Dataset::load(&args.data)?;
            let mut report = evaluate(&ckpt.model, &ds)?;
            let mut model_sum = 0.0;
            let mut oracle_sum = 0.0;
            let mut n = 0usize;
            for (row, sample) in report.rows.iter().zip(&ds.samples) {
                if !row.feasible {
                    continue;
                }
                let oracle = oracle_wsr(&sample.real, args.resolution)?;
                model_sum += row.wsr;
                oracle_sum += oracle.wsr;
                n += 1;
            }
            if n == 0 {
                anyhow::bail!(Error::Infeasible(
                    "no feasible samples to compare against the oracle".into()
                ));
            }
            let ratio = model_sum / oracle_sum;
            report.oracle_ratio = Some(ratio);
            report.reference = format!(
                "exhaustive grid oracle at resolution {} (baseline-solver substitute)",
                args.resolution
            );
            println!(
                "model/oracle objective ratio {ratio:.4} over {n} feasible samples (mean {:.6} vs {:.6})",
                model_sum / n as f64,
                oracle_sum / n as f64
            );
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out)?;
                report.write(out, "oracle_report")?;
            }
        }
    }
    Ok(())
}
