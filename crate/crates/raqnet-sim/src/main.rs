use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use raqnet_sim::harness::{run_experiment, sweep, ExperimentConfig, SweepParam};
use raqnet_sim::loadbalance::BalanceMode;

/// Deterministic simulator of a topology-aware P2P overlay with
/// virtual-server load balancing.
#[derive(Parser)]
#[command(name = "raqnet-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (all configured modes share topology and workload).
    Run(RunArgs),
    /// Re-run one experiment per value of a single swept parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; missing keys fall back to defaults.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run only this mode instead of the config's mode list.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory (default: the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing output instead of refusing.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parameter to vary: ttl, desired_val, qlb or num_vs.
    #[arg(long)]
    param: String,
    /// Comma-separated values, one experiment each.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Aware,
    Unaware,
    Directory,
    All,
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let mut config = load_config(&args.config, args.seed)?;
            match args.mode {
                Some(ModeArg::Aware) => config.modes = vec![BalanceMode::TopologyAware],
                Some(ModeArg::Unaware) => config.modes = vec![BalanceMode::TopologyUnaware],
                Some(ModeArg::Directory) => config.modes = vec![BalanceMode::Directory],
                Some(ModeArg::All) => {
                    config.modes = vec![
                        BalanceMode::TopologyAware,
                        BalanceMode::TopologyUnaware,
                        BalanceMode::Directory,
                    ];
                }
                None => {}
            }
            let out = args.out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            let outcome = run_experiment(&config, &out, args.overwrite)?;
            println!(
                "wrote {} mode(s) to {} (truncation rate {:.4})",
                outcome.modes.len(),
                out.display(),
                outcome.truncation_rate
            );
            for mode in &outcome.modes {
                match mode.benefit {
                    Some(b) => println!(
                        "  {:<9} ltc {:.1}  max_util {:.3}  benefit {:.3}",
                        mode.mode.label(),
                        mode.ltc,
                        mode.max_util_after,
                        b
                    ),
                    None => println!(
                        "  {:<9} ltc {:.1}  max_util {:.3}",
                        mode.mode.label(),
                        mode.ltc,
                        mode.max_util_after
                    ),
                }
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let config = load_config(&args.config, args.seed)?;
            let param = SweepParam::parse(&args.param)?;
            let out = args.out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            let outcomes = sweep(&config, param, &args.values, &out, args.overwrite)?;
            println!(
                "swept {} over {} value(s), results in {}",
                param.name(),
                outcomes.len(),
                out.display()
            );
            Ok(())
        }
    }
}
