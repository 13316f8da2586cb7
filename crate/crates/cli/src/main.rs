use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convlstm_ad::dataio::TestStride;
use convlstm_ad::optimizer::GradCheckOptions;
use convlstm_ad::scoring::Normalization;
use convlstm_ad::{ArchitectureConfig, Mode};
use convlstm_ad_cli::commands::{cmd_eval, cmd_gradcheck, cmd_score, cmd_synth, cmd_train, SCORES_DIR};
use convlstm_ad_cli::{CliError, RunConfig, SynthConfig};

#[derive(Parser)]
#[command(name = "convlstm-ad", version, about = "Video anomaly detection with a convolutional LSTM encoder-decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse::<Mode>)]
    mode: Option<Mode>,
    #[arg(long)]
    tau: Option<usize>,
    /// Regularity normalization: `paper` (divide by max) or `minmax`.
    #[arg(long, value_parser = parse::<Normalization>)]
    eq4: Option<Normalization>,
    /// Test volume placement: `volume` (non-overlapping) or `sliding`.
    #[arg(long, value_parser = parse::<TestStride>)]
    test_stride: Option<TestStride>,
}

fn parse<T: std::str::FromStr<Err = convlstm_ad::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: convlstm_ad::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic moving-sprite dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write checkpoints plus a loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score the test videos: per-volume CSVs, heatmaps, throughput.
    Score {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// ROC, AUC and EER of score CSVs against the ground truth.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/scores`.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Finite-difference check of the analytic gradient.
    Gradcheck {
        /// Architecture to check; the 16x16 tiny model if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn load_run(path: &Path, o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::read(path)?;
    if let Some(seed) = o.seed {
        cfg.training.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    if let Some(mode) = o.mode {
        cfg.architecture.mode = mode;
    }
    if let Some(tau) = o.tau {
        cfg.architecture.tau = tau;
    }
    if let Some(eq4) = o.eq4 {
        cfg.eq4 = eq4;
    }
    if let Some(ts) = o.test_stride {
        cfg.test_stride = ts;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let mut cfg = SynthConfig::read(&config)?;
            if let Some(seed) = seed {
                cfg.spec.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let ds = cmd_synth(&cfg)?;
            println!(
                "wrote {} training and {} test videos to {}",
                ds.train.len(),
                ds.test.len(),
                cfg.output_dir.display()
            );
        }
        Command::Train { config, resume, overrides } => {
            let cfg = load_run(&config, &overrides)?;
            let report = cmd_train(&cfg, resume.as_deref())?;
            for e in &report.epochs {
                println!(
                    "epoch {:>3}  steps {:>5}  data {:.6}  reg {:.6}  total {:.6}",
                    e.epoch, e.steps, e.mean_data, e.mean_reg, e.mean_total
                );
            }
            println!("checkpoint: {}", report.checkpoint.display());
        }
        Command::Score { config, checkpoint, overrides } => {
            let cfg = load_run(&config, &overrides)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.output_dir.join("model.ckpt"));
            let report = cmd_score(&cfg, &ckpt)?;
            println!(
                "scored {} videos, {} volumes: {:.1} volumes/s, {:.1} frames/s",
                report.scores.len(),
                report.volumes,
                report.volumes_per_second(),
                report.frames_per_second()
            );
        }
        Command::Eval { config, scores, overrides } => {
            let cfg = load_run(&config, &overrides)?;
            let dir = scores.unwrap_or_else(|| cfg.output_dir.join(SCORES_DIR));
            let report = cmd_eval(&cfg, &dir)?;
            println!(
                "AUC {:.4}  EER {:.4}  ({} abnormal, {} normal samples)",
                report.auc, report.eer, report.positives, report.negatives
            );
        }
        Command::Gradcheck { config, seed, tau, tolerance } => {
            let mut arch = match config {
                Some(path) => RunConfig::read(&path)?.architecture,
                None => ArchitectureConfig::tiny(),
            };
            if let Some(tau) = tau {
                arch.tau = tau;
            }
            let options = GradCheckOptions { tolerance, seed: seed.unwrap_or(0), ..Default::default() };
            cmd_gradcheck(&arch, &options, |report| {
                for g in &report.groups {
                    println!(
                        "{:<28} {:>5} checked of {:>6} ({} at kinks)  max rel err {:.3e}  {}",
                        g.name,
                        g.checked,
                        g.size,
                        g.skipped,
                        g.max_relative_error,
                        if g.passed { "ok" } else { "FAIL" }
                    );
                }
            })?;
            println!("gradient check passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
