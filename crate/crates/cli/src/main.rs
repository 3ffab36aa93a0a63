use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use usdiff::commands::{self, progress_interval};
use usdiff::RunConfig;

/// Depth-attenuated diffusion for ultrasound-like images.
///
/// Settings resolve as built-in defaults, then `--config FILE`, then
/// `--set KEY=VALUE` and the subcommand flags. Every run writes
/// `manifest.txt` into the output directory; passing it back through
/// `--config` repeats the run.
#[derive(Parser, Debug)]
#[command(name = "usdiff", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// `key = value` config file (a run manifest works too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set T=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write per-step and cumulative B-maps at selected timesteps.
    Bmaps {
        /// Comma-separated timesteps (default 0, T/4, T/2, 3T/4, T).
        #[arg(long, value_delimiter = ',')]
        timesteps: Option<Vec<usize>>,
    },
    /// Noise one image at log-spaced timesteps and write a contact sheet.
    Forward {
        /// Input image (.pgm or .usdf); defaults to a procedural phantom.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the denoiser and write a checkpoint plus loss.csv.
    Train {
        /// Directory of training images; defaults to procedural phantoms.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Draw samples from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of samples.
        #[arg(short = 'n', long = "n-samples")]
        n_samples: Option<usize>,
        /// Also save intermediate states at log-spaced timesteps.
        #[arg(long)]
        snapshots: bool,
    },
    /// Compare two image directories (PSNR, SSIM, Frechet distance).
    Eval {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// External feature matrix for DIR_A, a USDF tensor of shape (n, dim).
        #[arg(long)]
        features_a: Option<PathBuf>,
        #[arg(long)]
        features_b: Option<PathBuf>,
    },
    /// Run the built-in numerical self-checks.
    Verify {
        /// Monte-Carlo draws for the iterated-vs-closed-form check.
        #[arg(long)]
        samples: Option<usize>,
        /// Deliberately break the posterior mean; the report must fail.
        #[arg(long)]
        corrupt_posterior_mean: bool,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.global.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
    }
    for kv in &cli.global.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())
            .with_context(|| format!("--set {kv}"))?;
    }
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.global.out {
        cfg.out = out.clone();
    }
    match &cli.command {
        Command::Bmaps { timesteps } => {
            if let Some(ts) = timesteps {
                cfg.timesteps = ts.clone();
            }
        }
        Command::Forward { input } => {
            if input.is_some() {
                cfg.input = input.clone();
            }
        }
        Command::Train {
            dataset,
            iterations,
        } => {
            if dataset.is_some() {
                cfg.dataset = dataset.clone();
            }
            if let Some(n) = iterations {
                cfg.iterations = *n;
            }
        }
        Command::Sample {
            checkpoint,
            n_samples,
            snapshots,
        } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            if let Some(n) = n_samples {
                cfg.n_samples = *n;
            }
            cfg.snapshots |= *snapshots;
        }
        Command::Eval {
            dir_a,
            dir_b,
            features_a,
            features_b,
        } => {
            cfg.eval_a = Some(dir_a.clone());
            cfg.eval_b = Some(dir_b.clone());
            if features_a.is_some() {
                cfg.features_a = features_a.clone();
            }
            if features_b.is_some() {
                cfg.features_b = features_b.clone();
            }
        }
        Command::Verify {
            samples,
            corrupt_posterior_mean,
        } => {
            if let Some(n) = samples {
                cfg.verify_samples = *n;
            }
            cfg.verify_corrupt_posterior_mean |= *corrupt_posterior_mean;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<commands::Outcome> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Bmaps { .. } => commands::cmd_bmaps(&cfg),
        Command::Forward { .. } => commands::cmd_forward(&cfg),
        Command::Train { .. } => {
            let every = progress_interval(cfg.iterations);
            commands::cmd_train(&cfg, |i, loss| {
                if (i + 1) % every == 0 {
                    eprintln!("iter {:>6}  loss {loss:.5}", i + 1);
                }
            })
        }
        Command::Sample { .. } => commands::cmd_sample(&cfg),
        Command::Eval { .. } => commands::cmd_eval(&cfg),
        Command::Verify { .. } => commands::cmd_verify(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
            println!("manifest: {}", outcome.manifest.display());
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
