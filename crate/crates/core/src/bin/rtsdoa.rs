use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rtsdoa::data::{synthesize_dataset, ExampleSource};
use rtsdoa::eval::{evaluate_baseline, evaluate_checkpoint, infer};
use rtsdoa::train::Trainer;
use rtsdoa::{Config, Result};

#[derive(Parser)]
#[command(name = "rtsdoa", version, about = "Target-speaker DOA estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    SrpPhat,
}

#[derive(Subcommand)]
enum Command {
    /// Render train/dev/test scenes to a directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a simulated dataset, keeping the best dev checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Per-frame DOA for one mixture and enrollment clip, as JSON lines.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mix: PathBuf,
        #[arg(long)]
        anchor: PathBuf,
    },
    /// Score a classical localizer on the test split.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = Config::load(&config)?;
            for (split, n) in synthesize_dataset(&cfg, seed, &out)? {
                println!("{split}: {n} scenes");
            }
        }
        Command::Train { config, data, out } => {
            let cfg = Config::load(&config)?;
            let train = ExampleSource::open(&data, "train")?;
            let dev = ExampleSource::open(&data, "dev")?;
            let mut trainer = Trainer::<f32>::new(cfg, train, dev)?.with_checkpoint(&out);
            while !trainer.finished() {
                let log = trainer.epoch()?;
                println!("{}", serde_json::to_string(&log)?);
            }
        }
        Command::Eval { ckpt, data, json, split } => {
            let report = evaluate_checkpoint(&ckpt, &data, &split)?;
            println!("VDE {:.4}  AR {:.4}", report.vde, report.ar);
            write_json(&json, &report)?;
        }
        Command::Infer { ckpt, mix, anchor } => {
            for r in infer(&ckpt, &mix, &anchor)? {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
        Command::Baseline {
            method: Method::SrpPhat,
            data,
            json,
            config,
            split,
        } => {
            let cfg = match config {
                Some(p) => Config::load(&p)?,
                None => {
                    let stored = data.join("config.txt");
                    if stored.exists() {
                        Config::load(&stored)?
                    } else {
                        Config::default()
                    }
                }
            };
            let report = evaluate_baseline(&data, &split, &cfg)?;
            println!("VDE {:.4}  AR {:.4}", report.vde, report.ar);
            write_json(&json, &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
