use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpnslab::experiment::{self, ExperimentConfig, SweepParam};
use cpnslab::{Error, Result};

#[derive(Parser)]
#[command(name = "cpnslab", version, about = "Class-incremental learning with CPNS regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run only this seed (overrides the config's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides config and CPNSLAB_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for seeds (default: CPNSLAB_THREADS or 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Full incremental run for every seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// One seed-averaged run per value of a hyperparameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// The six-variant ablation table.
    Ablate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Accuracy of a checkpoint on a data table.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &PathBuf, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env();
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, common } => {
            let cfg = load(&config, &common)?;
            for row in experiment::run(&cfg, common.threads)? {
                println!("{} {} seed={} last={:.4} avg={:.4}", row.method, row.scenario, row.seed, row.last, row.avg);
            }
        }
        Command::Sweep { config, param, values, common } => {
            let param: SweepParam = param.parse()?;
            let cfg = load(&config, &common)?;
            println!("value,last,avg");
            for row in experiment::sweep(&cfg, param, &values, common.threads)? {
                println!("{},{:.4},{:.4}", row.value, row.last, row.avg);
            }
        }
        Command::Ablate { config, common } => {
            let cfg = load(&config, &common)?;
            for row in experiment::ablate(&cfg, common.threads)? {
                println!("{:<20} last={:.4} avg={:.4}", row.method, row.last, row.avg);
            }
        }
        Command::Eval { checkpoint, data, common: _ } => {
            let r = experiment::eval_checkpoint(&checkpoint, &data)?;
            println!("{}", serde_json::to_string_pretty(&r).map_err(Error::from)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
