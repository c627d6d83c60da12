//! `arbdetect`: static arbitrage detection experiments from the command line.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use failure::Failure;
use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "arbdetect", version, about = "Detect static arbitrage in option markets")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for labelling and evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate unlabelled markets (synthetic, or sampled from option chains).
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        /// Option chain CSV to sample markets from instead of the generator.
        #[arg(long)]
        chains: Option<PathBuf>,
    },
    /// Attach superhedging labels to a dataset.
    Label {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute the superhedging value of a single market given as JSON.
    Solve {
        #[arg(long)]
        market: PathBuf,
        /// Also write the report here (it is always printed).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a detector on a labelled dataset.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a trained detector on a labelled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Apply a trained detector to daily option chains held to expiry.
    Backtest {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        chains: PathBuf,
        /// CSV with columns `underlying_id,price` and optionally `date`.
        #[arg(long)]
        terminal: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate one detector per configured sweep run.
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn write_manifest(path: &Path, command: &str, cfg: &RunConfig, inputs: &[&Path], outputs: &[PathBuf]) -> Result<(), Failure> {
    let m = Manifest::new(command, cfg, inputs, outputs)?;
    commands::write_file(path, m.to_json())?;
    Ok(())
}

fn sibling_manifest(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Input(format!("--workers: {e}")))?;
    }
    match &cli.command {
        Command::GenData { out_dir, chains } => {
            let out = commands::gen_data(&cfg, chains.as_deref(), out_dir)?;
            let inputs: Vec<&Path> = chains.iter().map(PathBuf::as_path).collect();
            write_manifest(&out_dir.join("manifest.json"), "gen-data", &cfg, &inputs, &out)
        }
        Command::Label { input, output } => {
            let out = commands::label(&cfg, input, output)?;
            write_manifest(&sibling_manifest(output), "label", &cfg, &[input], &out)
        }
        Command::Solve { market, output } => {
            let report = commands::solve(&cfg, market)?;
            println!("{report}");
            if let Some(path) = output {
                let out = commands::write_file(path, format!("{report}\n"))?;
                write_manifest(&sibling_manifest(path), "solve", &cfg, &[market], &[out])?;
            }
            Ok(())
        }
        Command::Train { train, test, out_dir } => {
            let out = commands::train_cmd(&cfg, train, test.as_deref(), out_dir)?;
            let mut inputs: Vec<&Path> = vec![train];
            inputs.extend(test.as_deref());
            write_manifest(&out_dir.join("manifest.json"), "train", &cfg, &inputs, &out)
        }
        Command::Eval { model, data, out_dir } => {
            let (out, metrics) = commands::eval_cmd(&cfg, model, data, out_dir)?;
            println!("{}\n{}", arbdetect_core::eval::Metrics::CSV_HEADER, metrics.csv_row());
            write_manifest(&out_dir.join("manifest.json"), "eval", &cfg, &[model, data], &out)
        }
        Command::Backtest {
            model,
            chains,
            terminal,
            out_dir,
        } => {
            let out = commands::backtest_cmd(&cfg, model, chains, terminal, out_dir)?;
            write_manifest(&out_dir.join("manifest.json"), "backtest", &cfg, &[model, chains, terminal], &out)
        }
        Command::Sweep { train, test, out_dir } => {
            let out = commands::sweep(&cfg, train, test, out_dir)?;
            write_manifest(&out_dir.join("manifest.json"), "sweep", &cfg, &[train, test], &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            eprintln!("{}", Failure::Input(e.kind().to_string()).record());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{}", f.message());
            eprintln!("{}", f.record());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
