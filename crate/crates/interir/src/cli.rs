//! Command implementations behind the `interir` binary: dataset
//! degradation, restoration (classical or unfolded), evaluation, and the
//! verification entry point.
//!
//! Per-image work runs on a worker pool sized by `INTERIR_THREADS`;
//! results are written in input order, so output bytes are independent of
//! the pool size.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::degrade::{make_test_case, DegradationSpec};
use crate::error::{Error, Result};
use crate::image::{load_ppm, save_ppm, Image};
use crate::manifest::{format_row, parse_manifest, parse_pairs, ManifestRow};
use crate::metrics::{evaluate_pair, EvalReport, DEFAULT_FREQ_WEIGHT};
use crate::operators::RegularizerConfig;
use crate::rng::mix64;
use crate::solver::{solve, SolverOptions};
use crate::unfolded::weights::load_weights;
use crate::unfolded::{forward, seed_model, UnfoldedModel, DEFAULT_BLOCKS, FEATURE_CHANNELS};

pub const THREADS_ENV: &str = "INTERIR_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Classical,
    Unfolded,
}

/// Everything a restoration run needs besides the manifest itself.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub weights: Option<PathBuf>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub freeze_ab: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reg = RegularizerConfig::default();
        RunConfig {
            mode: Mode::Classical,
            weights: None,
            outer_iters: 16,
            inner_iters: 4,
            alpha: reg.alpha,
            beta: reg.beta,
            gamma: reg.gamma,
            sigma: reg.sigma,
            epsilon: reg.epsilon,
            eta: crate::solver::DEFAULT_ETA,
            freeze_ab: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn regularizer(&self) -> RegularizerConfig {
        RegularizerConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            sigma: self.sigma,
            epsilon: self.epsilon,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            eta: self.eta,
            freeze_ab: self.freeze_ab,
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CommandSummary {
    pub processed: usize,
    pub failures: usize,
    pub stalls: usize,
}

// --- degrade -----------------------------------------------------------------

/// Degrade every PPM/PGM under `clean_dir` with the recipe `spec`,
/// deriving a per-image seed from `seed` and the (sorted) input position.
/// Writes the degraded images and `manifest.tsv` into `out_dir`.
pub fn cmd_degrade(
    clean_dir: &Path,
    out_dir: &Path,
    spec: DegradationSpec,
    seed: u64,
) -> Result<CommandSummary> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(clean_dir)
        .map_err(|e| Error::io(clean_dir, e))?
        .filter_map(|e| e.ok().map(|x| x.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("pgm")
            )
        })
        .collect();
    inputs.sort();

    let pool = thread_pool()?;
    let results: Vec<Result<ManifestRow>> = pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(idx, path)| {
                let clean = load_ppm(path)?;
                let per_seed = mix64(seed ^ mix64(idx as u64 + 1));
                let case = DegradationSpec {
                    seed: per_seed,
                    ..spec
                };
                let degraded = make_test_case(&clean, &case)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("case{idx}"));
                let out_path = out_dir.join(format!("{stem}_degraded.ppm"));
                save_ppm(&degraded, &out_path)?;
                Ok(ManifestRow {
                    clean: path.clone(),
                    degraded: out_path,
                    spec: case,
                })
            })
            .collect()
    });

    let mut manifest = String::new();
    let mut summary = CommandSummary::default();
    for (path, result) in inputs.iter().zip(results) {
        match result {
            Ok(row) => {
                manifest.push_str(&format_row(&row));
                manifest.push('\n');
                summary.processed += 1;
            }
            Err(e) => {
                eprintln!("degrade: {}: {e}", path.display());
                summary.failures += 1;
            }
        }
    }
    std::fs::write(out_dir.join("manifest.tsv"), manifest)
        .map_err(|e| Error::io(out_dir.join("manifest.tsv"), e))?;
    Ok(summary)
}

// --- restore -----------------------------------------------------------------

enum RestoredOutput {
    Classical { image: Image, trace_csv: String, stalled: bool },
    Unfolded { image: Image },
}

fn restore_one(row: &ManifestRow, cfg: &RunConfig, model: Option<&UnfoldedModel>) -> Result<RestoredOutput> {
    let degraded = load_ppm(&row.degraded)?;
    match cfg.mode {
        Mode::Classical => {
            let result = solve(
                &degraded.channel_tensor(),
                cfg.regularizer(),
                &cfg.solver_options(),
            )?;
            let image = if result.stalled {
                degraded.clone()
            } else {
                Image::from_channel_tensor(&result.restored)?
            };
            Ok(RestoredOutput::Classical {
                image,
                trace_csv: result.trace.to_csv(),
                stalled: result.stalled,
            })
        }
        Mode::Unfolded => {
            let model = model.expect("unfolded mode without a model");
            Ok(RestoredOutput::Unfolded {
                image: forward(model, &degraded)?,
            })
        }
    }
}

/// Restore every image in a degradation manifest. Writes
/// `{stem}_restored.ppm` per image (plus `{stem}_trace.csv` in classical
/// mode) and `pairs.tsv` mapping clean to restored paths.
pub fn cmd_restore(manifest_path: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<CommandSummary> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path, e))?;
    let rows = parse_manifest(&text)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let model = match cfg.mode {
        Mode::Classical => None,
        Mode::Unfolded => Some(match &cfg.weights {
            Some(path) => load_weights(path)?,
            None => {
                eprintln!(
                    "restore: no weights given; using an untrained seeded model (seed {})",
                    cfg.seed
                );
                seed_model(DEFAULT_BLOCKS, FEATURE_CHANNELS, cfg.seed)?
            }
        }),
    };

    let pool = thread_pool()?;
    let started = Instant::now();
    let results: Vec<Result<RestoredOutput>> = pool.install(|| {
        rows.par_iter()
            .map(|row| restore_one(row, cfg, model.as_ref()))
            .collect()
    });
    let elapsed = started.elapsed().as_secs_f64();

    let mut summary = CommandSummary::default();
    let mut pairs = String::new();
    for (row, result) in rows.iter().zip(results) {
        let stem = row
            .degraded
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".into());
        match result {
            Ok(output) => {
                let out_path = out_dir.join(format!("{stem}_restored.ppm"));
                match output {
                    RestoredOutput::Classical {
                        image,
                        trace_csv,
                        stalled,
                    } => {
                        if stalled {
                            eprintln!(
                                "restore: {}: solver stalled, emitting degraded copy",
                                row.degraded.display()
                            );
                            summary.stalls += 1;
                        }
                        save_ppm(&image, &out_path)?;
                        std::fs::write(out_dir.join(format!("{stem}_trace.csv")), trace_csv)
                            .map_err(|e| Error::io(out_dir.join(format!("{stem}_trace.csv")), e))?;
                    }
                    RestoredOutput::Unfolded { image } => {
                        save_ppm(&image, &out_path)?;
                    }
                }
                pairs.push_str(&format!("{}\t{}\n", row.clean.display(), out_path.display()));
                summary.processed += 1;
            }
            Err(e) => {
                eprintln!("restore: {}: {e}", row.degraded.display());
                summary.failures += 1;
            }
        }
    }
    std::fs::write(out_dir.join("pairs.tsv"), pairs)
        .map_err(|e| Error::io(out_dir.join("pairs.tsv"), e))?;
    // timing is diagnostic only; keep stdout for structured results
    eprintln!(
        "restored {} image(s) in {elapsed:.2}s ({} failure(s), {} stall(s))",
        summary.processed, summary.failures, summary.stalls
    );
    Ok(summary)
}

// --- eval --------------------------------------------------------------------

/// Evaluate (reference, candidate) pairs and write a CSV report with one
/// row per pair plus a trailing mean row over the finite rows.
pub fn cmd_eval(pairs_path: &Path, out_csv: &Path) -> Result<CommandSummary> {
    let text = std::fs::read_to_string(pairs_path).map_err(|e| Error::io(pairs_path, e))?;
    let pairs = parse_pairs(&text)?;

    let pool = thread_pool()?;
    let results: Vec<Result<EvalReport>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(reference, candidate)| {
                let a = load_ppm(reference)?;
                let b = load_ppm(candidate)?;
                evaluate_pair(&a, &b, DEFAULT_FREQ_WEIGHT)
            })
            .collect()
    });

    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    let mut summary = CommandSummary::default();
    let mut finite: Vec<EvalReport> = Vec::new();
    for ((_, candidate), result) in pairs.iter().zip(results) {
        let name = candidate.display().to_string();
        match result {
            Ok(report) => {
                csv.push_str(&report.csv_row(&name, "ok"));
                csv.push('\n');
                if report.is_finite() {
                    finite.push(report);
                }
                summary.processed += 1;
            }
            Err(e) => {
                csv.push_str(&format!("{name},,,,,,,error: {e}\n"));
                summary.failures += 1;
            }
        }
    }
    if !finite.is_empty() {
        let n = finite.len() as f64;
        let mean = EvalReport {
            psnr_rgb: finite.iter().map(|r| r.psnr_rgb).sum::<f64>() / n,
            psnr_y: finite.iter().map(|r| r.psnr_y).sum::<f64>() / n,
            ssim_y: finite.iter().map(|r| r.ssim_y).sum::<f64>() / n,
            loss_spatial: finite.iter().map(|r| r.loss_spatial).sum::<f64>() / n,
            loss_freq: finite.iter().map(|r| r.loss_freq).sum::<f64>() / n,
            loss_total: finite.iter().map(|r| r.loss_total).sum::<f64>() / n,
        };
        csv.push_str(&mean.csv_row("mean", &format!("mean of {}", finite.len())));
        csv.push('\n');
    }
    std::fs::write(out_csv, csv).map_err(|e| Error::io(out_csv, e))?;
    Ok(summary)
}

// --- verify ------------------------------------------------------------------

/// Default golden directory: recorded artifacts live beside the crate's
/// integration tests.
pub fn default_golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Run every verification suite, print one line per suite, and return the
/// process exit code (0 iff everything passed).
pub fn cmd_verify(golden_dir: &Path) -> i32 {
    let started = Instant::now();
    let results = crate::verify::run_all(golden_dir);
    let mut failures = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {:<24} {}", r.name, r.detail);
        if !r.passed {
            failures += 1;
        }
    }
    println!(
        "{} suite(s), {} failure(s), {:.1}s",
        results.len(),
        failures,
        started.elapsed().as_secs_f64()
    );
    if failures == 0 {
        0
    } else {
        1
    }
}
