use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use woundsev::dataset::{generate_fixture, FixtureSpec};
use woundsev::train::{format_percent, CheckpointPolicy};
use woundsev_cli::error::exit;
use woundsev_cli::pipeline::read_predictions;
use woundsev_cli::{cmd_evaluate, cmd_prepare, cmd_report, cmd_rubric, cmd_train, CliError, ExperimentConfig, Format, Result};

#[derive(Parser)]
#[command(name = "woundsev", version, about = "Wound severity classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn parse_policy(s: &str) -> Result<CheckpointPolicy, String> {
    CheckpointPolicy::ALL
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| format!("expected best_val_accuracy or best_combined_accuracy, got {s}"))
}

#[derive(Subcommand)]
enum Command {
    /// Split, crop zoom channels, augment, and write the prepared dataset.
    Prepare(ExperimentArgs),
    /// Train on a prepared dataset and save both checkpoints.
    Train(ExperimentArgs),
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Defaults to the config's checkpoint policy.
        #[arg(long, value_parser = parse_policy)]
        checkpoint: Option<CheckpointPolicy>,
        /// CSV of `key,predicted` rows used instead of running the model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// prepare, train and evaluate in one go.
    Run(ExperimentArgs),
    /// Aggregate evaluation reports under a directory into accuracy tables.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
        /// Also write the tables to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratify one structured wound observation (TOML).
    Rubric { observation: PathBuf },
    /// Write a synthetic, colour-separable image set and its manifest.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Images per class.
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 160)]
        size: u32,
        #[arg(long, default_value_t = 1)]
        max_boxes: usize,
    },
}

fn print_eval(cfg: &ExperimentConfig, policy: Option<CheckpointPolicy>, predictions: Option<&Path>) -> Result<()> {
    let injected = predictions.map(read_predictions).transpose()?;
    let summary = cmd_evaluate(cfg, policy, injected.as_ref())?;
    print!("{}", summary.report.render_confusion());
    println!("accuracy: {}", format_percent(summary.report.accuracy, 2));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let s = cmd_prepare(&args.load()?)?;
            println!(
                "{} samples in {} (train_val ratio {:.4})",
                s.rows.len(),
                s.dir.display(),
                s.provenance.achieved_ratio
            );
        }
        Command::Train(args) => {
            let s = cmd_train(&args.load()?)?;
            for (policy, epoch) in &s.history.checkpoints {
                let e = &s.history.epochs[epoch - 1];
                println!("{policy}: epoch {epoch} (train {:.4}, val {:.4})", e.train_acc, e.val_acc);
            }
            println!("artifacts in {}", s.dir.display());
        }
        Command::Evaluate { exp, checkpoint, predictions } => print_eval(&exp.load()?, checkpoint, predictions.as_deref())?,
        Command::Run(args) => {
            let cfg = args.load()?;
            cmd_prepare(&cfg)?;
            cmd_train(&cfg)?;
            print_eval(&cfg, None, None)?;
        }
        Command::Report { dir, format, out } => {
            let text = cmd_report(&dir, format)?;
            if let Some(out) = out {
                std::fs::write(&out, &text).map_err(CliError::io(&out))?;
            }
            print!("{text}");
        }
        Command::Rubric { observation } => print!("{}", cmd_rubric(&observation)?.1),
        Command::Fixture { out, seed, per_class, size, max_boxes } => {
            let spec = FixtureSpec::balanced(per_class, size).with_boxes(1, max_boxes);
            let manifest = generate_fixture(&spec, seed)?.write(&out)?;
            println!("{}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
