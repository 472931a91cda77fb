use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use interir::cli::{self, Mode, RunConfig};
use interir::degrade::DegradationSpec;

#[derive(Parser)]
#[command(
    name = "interir",
    version,
    about = "Multi-degradation image restoration lab: synthetic degradation, a classical solver, its unfolded network, evaluation, and self-verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Classical,
    Unfolded,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Classical => Mode::Classical,
            ModeArg::Unfolded => Mode::Unfolded,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Apply a synthetic haze/rain/noise recipe to every PPM/PGM in a
    /// directory and write a manifest.
    Degrade {
        /// Directory of clean PPM/PGM images.
        #[arg(long)]
        clean_dir: PathBuf,
        /// Output directory for degraded images and manifest.tsv.
        #[arg(long)]
        out: PathBuf,
        /// Haze level in [0, 150].
        #[arg(long, default_value_t = 0.0)]
        haze: f64,
        /// Rain level (streak count) in [0, 300].
        #[arg(long, default_value_t = 0.0)]
        rain: f64,
        /// Noise sigma in 8-bit units, [0, 50].
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Base seed; per-image seeds derive from it deterministically.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Restore the degraded images listed in a manifest.
    Restore {
        /// Manifest written by `degrade`.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for restored images, traces, and pairs.tsv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Classical)]
        mode: ModeArg,
        /// Weights container for unfolded mode (falls back to a seeded
        /// untrained model when omitted).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Outer alternation rounds.
        #[arg(long, default_value_t = 16)]
        outer: usize,
        /// Image-update steps per round.
        #[arg(long, default_value_t = 4)]
        inner: usize,
        /// Sparsity prior weight.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Left-matrix penalty weight.
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        /// Right-matrix penalty weight.
        #[arg(long, default_value_t = 0.01)]
        gamma: f64,
        /// Threshold scale of the proximal step.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Splitting penalty coefficient.
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Image-update step size.
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        /// Keep the degradation matrices frozen at the identity
        /// (pure-denoising mode).
        #[arg(long, default_value_t = false)]
        freeze_ab: bool,
        /// Seed for the untrained-model fallback.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score (reference, candidate) pairs and write a CSV report.
    Eval {
        /// Pairs file: two tab-separated paths per line (a degrade or
        /// restore manifest works directly).
        #[arg(long)]
        pairs: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every oracle and property suite; exit 0 iff all pass.
    Verify {
        /// Regenerate the golden files from the current build first.
        #[arg(long, default_value_t = false)]
        regen_golden: bool,
    },
}

fn run() -> Result<ExitCode, interir::Error> {
    match Cli::parse().command {
        Command::Degrade {
            clean_dir,
            out,
            haze,
            rain,
            noise,
            seed,
        } => {
            let spec = DegradationSpec::new(haze, rain, noise, seed)?;
            let summary = cli::cmd_degrade(&clean_dir, &out, spec, seed)?;
            println!(
                "degraded {} image(s), {} failure(s)",
                summary.processed, summary.failures
            );
            Ok(if summary.failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Restore {
            manifest,
            out,
            mode,
            weights,
            outer,
            inner,
            alpha,
            beta,
            gamma,
            sigma,
            epsilon,
            eta,
            freeze_ab,
            seed,
        } => {
            let cfg = RunConfig {
                mode: mode.into(),
                weights,
                outer_iters: outer,
                inner_iters: inner,
                alpha,
                beta,
                gamma,
                sigma,
                epsilon,
                eta,
                freeze_ab,
                seed,
            };
            let summary = cli::cmd_restore(&manifest, &out, &cfg)?;
            Ok(if summary.failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Eval { pairs, out } => {
            let summary = cli::cmd_eval(&pairs, &out)?;
            println!(
                "evaluated {} pair(s), {} failure(s); report at {}",
                summary.processed,
                summary.failures,
                out.display()
            );
            Ok(if summary.failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Verify { regen_golden } => {
            let golden = cli::default_golden_dir();
            if regen_golden {
                interir::verify::regen_golden(&golden)?;
                println!("golden files regenerated at {}", golden.display());
            }
            Ok(ExitCode::from(cli::cmd_verify(&golden) as u8))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
