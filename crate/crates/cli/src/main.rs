use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use capsdbn::commands;
use capsdbn::{CliError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "capsdbn", version, about = "Capsule network and convolutional DBN hybrid classifier")]
struct Cli {
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic PNG dataset and manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, augment, filter and standardize a manifest into a patch archive.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy layer-wise DBN pretraining.
    PretrainDbn {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the capsule network with early stopping.
    TrainCaps {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fusion head on frozen branch features.
    TrainFusion {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        caps: PathBuf,
        #[arg(long)]
        dbn: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the validation split and write metric reports.
    Evaluate {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        caps: PathBuf,
        #[arg(long)]
        dbn: PathBuf,
        #[arg(long)]
        fusion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify PNG images; CSV on standard output.
    Predict {
        #[arg(long)]
        caps: PathBuf,
        #[arg(long)]
        dbn: PathBuf,
        #[arg(long)]
        fusion: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(p: &Path) -> Result<&Path> {
    capsdbn::fsio::create_dir(p)?;
    Ok(p)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { out } => {
            let m = commands::cmd_synth(&cfg, out_dir(out)?)?;
            eprintln!("manifest: {}", m.display());
        }
        Command::Preprocess { manifest, out } => {
            let s = commands::cmd_preprocess(manifest, &cfg, out_dir(out)?)?;
            eprintln!("train: {}, validation: {}, whitening: {:?}", s.train, s.validation, s.whitening);
        }
        Command::PretrainDbn { archive, out } => {
            let traces = commands::cmd_pretrain_dbn(archive, &cfg, out_dir(out)?)?;
            for (i, t) in traces.iter().enumerate() {
                eprintln!("layer {}: final reconstruction error {:.6}", i + 1, t.last().copied().unwrap_or(f64::NAN));
            }
        }
        Command::TrainCaps { archive, out } => {
            let o = commands::cmd_train_caps(archive, &cfg, out_dir(out)?)?;
            eprintln!("epochs: {}, best epoch: {}", o.traces.len(), o.best_epoch);
        }
        Command::TrainFusion { archive, caps, dbn, out } => {
            let o = commands::cmd_train_fusion(archive, caps, dbn, &cfg, out_dir(out)?)?;
            eprintln!("epochs: {}", o.traces.len());
        }
        Command::Evaluate { archive, caps, dbn, fusion, out } => {
            let s = commands::cmd_evaluate(archive, caps, dbn, fusion, out_dir(out)?)?;
            eprintln!("validation accuracy: {:.6}", s.metrics.accuracy);
        }
        Command::Predict { caps, dbn, fusion, images } => {
            let preds = commands::cmd_predict(images, caps, dbn, fusion)?;
            let names = commands::load_model(caps, dbn, fusion)?.config.categories;
            std::io::stdout()
                .write_all(&commands::predictions_csv(&preds, &names))
                .map_err(|e| CliError::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let parts: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            let joined = parts.join(" ");
            eprintln!("error[usage]: {}", joined.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
