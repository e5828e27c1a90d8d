use std::path::PathBuf;
use std::process::ExitCode;

use adaptdhm::cli::{
    cmd_eval, cmd_generate, cmd_inspect_centers, cmd_sweep_k, cmd_train, insert_pair, parse_pairs, ExperimentConfig,
    CHECKPOINT_FILE, REPORT_FILE, SWEEP_FILE,
};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Multi-domain CTR prediction with routed shared/branch networks.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Threads for evaluation; training is always single-threaded.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra `key=value` assignments, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (train.csv, test.csv, manifest.json).
    Generate,
    /// Train the configured model; writes checkpoint.json and report.json.
    Train,
    /// Evaluate a checkpoint on the configured test data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print cluster centers and their pairwise cosines.
    InspectCenters {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train one adaptdhm model per K and tabulate AUC/GAUC.
    SweepK {
        /// Comma-separated cluster counts, e.g. 1,3,9.
        #[arg(long)]
        k_list: Option<String>,
    },
}

fn build_config(args: &Args) -> Result<ExperimentConfig> {
    let mut pairs = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_pairs(&text)?
        }
        None => Default::default(),
    };
    for item in &args.set {
        let (k, v) = item
            .split_once('=')
            .with_context(|| format!("--set `{item}` is not KEY=VALUE"))?;
        insert_pair(&mut pairs, k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        insert_pair(&mut pairs, "seed", &seed.to_string())?;
    }
    if let Some(out) = &args.out {
        insert_pair(&mut pairs, "out", &out.to_string_lossy())?;
    }
    if let Some(threads) = args.threads {
        insert_pair(&mut pairs, "threads", &threads.to_string())?;
    }
    if let Command::SweepK { k_list: Some(list) } = &args.command {
        insert_pair(&mut pairs, "k_list", list)?;
    }
    Ok(ExperimentConfig::from_pairs(&pairs)?)
}

fn run(args: Args) -> Result<()> {
    let cfg = build_config(&args)?;
    let out = &cfg.out_dir;
    match &args.command {
        Command::Generate => {
            let manifest = cmd_generate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
        }
        Command::Train => {
            let outcome = cmd_train(&cfg)?;
            let last = outcome.report.epochs.last().expect("at least one epoch");
            println!("{}", serde_json::to_string_pretty(&last.metrics)?);
            eprintln!(
                "wrote {} and {}",
                out.join(CHECKPOINT_FILE).display(),
                out.join(REPORT_FILE).display()
            );
        }
        Command::Eval { checkpoint } => {
            println!("{}", serde_json::to_string_pretty(&cmd_eval(&cfg, checkpoint)?)?);
        }
        Command::InspectCenters { checkpoint } => {
            println!("{}", serde_json::to_string_pretty(&cmd_inspect_centers(&cfg, checkpoint)?)?);
        }
        Command::SweepK { .. } => {
            for row in cmd_sweep_k(&cfg)? {
                println!(
                    "K={:<3} auc={} gauc={} {:.1}s",
                    row.k,
                    row.auc.map_or("n/a".into(), |v| format!("{v:.5}")),
                    row.gauc.map_or("n/a".into(), |v| format!("{v:.5}")),
                    row.seconds
                );
            }
            eprintln!("wrote {}", out.join(SWEEP_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
