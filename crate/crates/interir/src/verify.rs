//! Self-contained verification suites.
//!
//! Each suite checks one contract of the crate against an independent
//! oracle: naive loop re-implementations, brute-force searches, finite
//! differences, dense operator expansions, or golden files recorded at the
//! first correct build. The oracles deliberately share no code with the
//! kernels they check. `cmd_verify` runs every suite and the acceptance
//! test target asserts them one by one.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::degrade::{make_test_case, DegradationSpec};
use crate::error::Result;
use crate::image::{decode_netpbm, encode_netpbm, Image};
use crate::metrics::{self, ChannelMode};
use crate::operators::{soft_threshold_scalar, v_adjoint, v_grad, RegularizerConfig};
use crate::rng::Rng;
use crate::solver::{self, SolverOptions, SolverState};
use crate::tensor::{channel_matmul, conv2d, dft2d, max_abs_diff, stack_samples, Tensor};
use crate::unfolded::blocks::{dmum, ep_block, mum, DmumParams, EpBlockParams, LayerNorm, MumParams, PointwiseConv};
use crate::unfolded::conv::{
    explainable_conv_backward, explainable_conv_forward, ExplainableConvParams,
};
use crate::unfolded::weights::{
    decode_entries, encode_entries, load_weights, model_entries, save_weights,
};
use crate::unfolded::{forward_batch, seed_model, FEATURE_CHANNELS};

/// Seed of the golden forward model.
pub const GOLDEN_MODEL_SEED: u64 = 7;
/// Blocks / channels of the golden forward model.
pub const GOLDEN_MODEL_BLOCKS: usize = 16;

// Constants frozen at the first correct build (regenerate with
// `interir verify --regen-golden`, which prints the current values).
const FROZEN_PARAMETER_COUNT: usize = 5_031_443;
const FROZEN_CASE_SHA256: &str = "435cff7475059dcf850de3b5d31b1825048597abc45c55d6ebf65c2806fe358a";

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn suite(name: &'static str, body: impl FnOnce() -> std::result::Result<String, String>) -> SuiteResult {
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(body));
    match outcome {
        Ok(Ok(detail)) => SuiteResult {
            name,
            passed: true,
            detail,
        },
        Ok(Err(detail)) => SuiteResult {
            name,
            passed: false,
            detail,
        },
        Err(panic) => SuiteResult {
            name,
            passed: false,
            detail: format!("panicked: {}", panic_message(&panic)),
        },
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

fn err<T>(msg: impl Into<String>) -> std::result::Result<T, String> {
    Err(msg.into())
}

/// Run every suite. `golden_dir` holds the recorded golden files.
pub fn run_all(golden_dir: &Path) -> Vec<SuiteResult> {
    vec![
        suite("conv-oracle", suite_conv_oracle),
        suite("dft-oracle", suite_dft_oracle),
        suite("kronecker-equivalence", suite_kronecker),
        suite("adjoint-identity", suite_adjoint),
        suite("prox-oracle", suite_prox),
        suite("residual-transcription", suite_transcription),
        suite("descent-property", suite_descent),
        suite("denoise-smoke", suite_denoise_smoke),
        suite("attention-normalization", suite_attention_norm),
        suite("uniform-attention", suite_uniform_attention),
        suite("gradient-check", suite_gradient_check),
        suite("batch-independence", suite_batch_independence),
        suite("golden-integrity", || suite_golden_integrity(golden_dir)),
        suite("block-goldens", || suite_block_goldens(golden_dir)),
        suite("forward-golden", || suite_forward_golden(golden_dir)),
        suite("serialization", suite_serialization),
        suite("metric-spot-values", suite_metric_spots),
        suite("determinism", suite_determinism),
    ]
}

// --- 1. convolution vs naive nested loops --------------------------------

/// Naive bounds-checked convolution, written independently of the kernel
/// in `tensor.rs`.
pub fn conv2d_naive(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor {
    let (bs, _, h, w) = input.dims4("naive input").unwrap();
    let (cout, cpg, kh, kw) = kernel.dims4("naive kernel").unwrap();
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let cout_pg = cout / groups;
    let mut out = Tensor::zeros(&[bs, cout, oh, ow]);
    for b in 0..bs {
        for oc in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.data()[oc];
                    for cl in 0..cpg {
                        let ic = (oc / cout_pg) * cpg + cl;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - padding as isize;
                                let ix = (x * stride + kx) as isize - padding as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += input.at4(b, ic, iy as usize, ix as usize)
                                        * kernel.at4(oc, cl, ky, kx);
                                }
                            }
                        }
                    }
                    out.data_mut()[((b * cout + oc) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

fn suite_conv_oracle() -> std::result::Result<String, String> {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(0xC0);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let groups = [1usize, 2, 3][(rng.next_u64() % 3) as usize];
        let cin = groups * (1 + (rng.next_u64() % 3) as usize);
        let cout = groups * (1 + (rng.next_u64() % 3) as usize);
        let k = [1usize, 3, 5][(rng.next_u64() % 3) as usize];
        let stride = 1 + (rng.next_u64() % 2) as usize;
        let padding = (rng.next_u64() % (k as u64 / 2 + 2)) as usize;
        let h = k + (rng.next_u64() % 6) as usize;
        let w = k + (rng.next_u64() % 6) as usize;
        let b = 1 + (rng.next_u64() % 2) as usize;
        let input = Tensor::from_fn(&[b, cin, h, w], |_| rng.uniform(-1.0, 1.0));
        let kernel = Tensor::from_fn(&[cout, cin / groups, k, k], |_| rng.uniform(-1.0, 1.0));
        let bias = Tensor::from_fn(&[cout], |_| rng.uniform(-1.0, 1.0));
        let got = conv2d(&input, &kernel, &bias, stride, padding, groups)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let expect = conv2d_naive(&input, &kernel, &bias, stride, padding, groups);
        let diff = max_abs_diff(&got, &expect);
        worst = worst.max(diff);
        if diff > 1e-12 {
            return err(format!("trial {trial}: max abs diff {diff:.3e} > 1e-12"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        return err(format!("took {elapsed:.1}s, budget 10s"));
    }
    Ok(format!("50 draws, worst {worst:.3e}, {elapsed:.2}s"))
}

// --- 2. DFT vs naive double sum -------------------------------------------

/// Direct O(N^4) transform with per-bin trigonometry.
pub fn dft2d_naive(x: &Tensor) -> (Tensor, Tensor) {
    let (b, c, h, w) = x.dims4("naive dft").unwrap();
    let mut re = Tensor::zeros(&[b, c, h, w]);
    let mut im = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let (mut ar, mut ai) = (0.0f64, 0.0f64);
                    for y in 0..h {
                        for z in 0..w {
                            let ang = -2.0 * std::f64::consts::PI
                                * (u as f64 * y as f64 / h as f64
                                    + v as f64 * z as f64 / w as f64);
                            let s = x.at4(bi, ci, y, z);
                            ar += s * ang.cos();
                            ai += s * ang.sin();
                        }
                    }
                    let idx = ((bi * c + ci) * h + u) * w + v;
                    re.data_mut()[idx] = ar;
                    im.data_mut()[idx] = ai;
                }
            }
        }
    }
    (re, im)
}

fn suite_dft_oracle() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xD1);
    let mut worst = 0.0f64;
    for (h, w) in [(8usize, 8usize), (7, 5)] {
        let x = Tensor::from_fn(&[1, 2, h, w], |_| rng.uniform(-1.0, 1.0));
        let (re, im) = dft2d(&x).map_err(|e| e.to_string())?;
        let (nre, nim) = dft2d_naive(&x);
        let diff = max_abs_diff(&re, &nre).max(max_abs_diff(&im, &nim));
        worst = worst.max(diff);
        if diff > 1e-9 {
            return err(format!("{h}x{w}: max abs diff {diff:.3e} > 1e-9"));
        }
    }
    Ok(format!("8x8 and 7x5, worst {worst:.3e}"))
}

// --- 3. factored operator vs dense Kronecker expansion ---------------------

fn suite_kronecker() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xE2);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let m = 2 + (rng.next_u64() % 5) as usize; // rows <= 6
        let n = 2 + (rng.next_u64() % 5) as usize; // cols <= 6
        let a = Tensor::from_fn(&[1, m, m], |_| rng.uniform(-1.0, 1.0));
        let b = Tensor::from_fn(&[1, n, n], |_| rng.uniform(-1.0, 1.0));
        let i = Tensor::from_fn(&[1, m, n], |_| rng.uniform(-1.0, 1.0));
        let fast = channel_matmul(&channel_matmul(&a, &i).unwrap(), &b).unwrap();

        // dense operator on the column-major vectorization:
        // out[or][oc] = sum_{ir, ic} B[ic][oc] * A[or][ir] * I[ir][ic]
        let mut dense = Tensor::zeros(&[1, m, n]);
        for or in 0..m {
            for oc in 0..n {
                let mut acc = 0.0;
                for ir in 0..m {
                    for ic in 0..n {
                        acc += b.at3(0, ic, oc) * a.at3(0, or, ir) * i.at3(0, ir, ic);
                    }
                }
                dense.data_mut()[or * n + oc] = acc;
            }
        }
        let diff = max_abs_diff(&fast, &dense);
        worst = worst.max(diff);
        if diff > 1e-12 {
            return err(format!("trial {trial} ({m}x{n}): diff {diff:.3e} > 1e-12"));
        }
    }
    Ok(format!("100 instances, worst {worst:.3e}"))
}

// --- 4. feature transform adjoint ------------------------------------------

fn suite_adjoint() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xF3);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let c = 1 + (rng.next_u64() % 3) as usize;
        let h = 2 + (rng.next_u64() % 6) as usize;
        let w = 2 + (rng.next_u64() % 6) as usize;
        let x = Tensor::from_fn(&[c, h, w], |_| rng.uniform(-1.0, 1.0));
        let y = Tensor::from_fn(&[2 * c, h, w], |_| rng.uniform(-1.0, 1.0));
        let lhs = v_grad(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&v_adjoint(&y).unwrap()).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-9);
        worst = worst.max(rel);
        if rel > 1e-12 {
            return err(format!("trial {trial}: relative error {rel:.3e} > 1e-12"));
        }
    }
    Ok(format!("100 instances, worst rel {worst:.3e}"))
}

// --- 5. soft threshold vs brute-force prox search ---------------------------

fn suite_prox() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xA4);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let x = rng.uniform(-2.5, 2.5);
        let t = rng.uniform(1e-3, 0.5);
        // argmin over c in [-3, 3] of t|c| + (c - x)^2 / 2, step 1e-4
        let mut best_val = f64::INFINITY;
        let mut best_c = 0.0f64;
        let steps = 60_000;
        for k in 0..=steps {
            let c = -3.0 + k as f64 * 1e-4;
            let val = t * c.abs() + 0.5 * (c - x) * (c - x);
            if val < best_val {
                best_val = val;
                best_c = c;
            }
        }
        let s = soft_threshold_scalar(x, t);
        let diff = (s - best_c).abs();
        worst = worst.max(diff);
        if diff > 1e-4 {
            return err(format!("trial {trial}: x={x}, t={t}: |{s} - {best_c}| > 1e-4"));
        }
    }
    Ok(format!("1000 cases, worst {worst:.3e}"))
}

// --- 6. residual/direction formulas vs independent transcription -----------

/// Second, independent transcription of the optimality residual, written
/// over raw row-major buffers for a single channel.
mod transcription {
    pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a[i * n + k] * b[k * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[j * n + i] = a[i * n + j];
            }
        }
        out
    }

    /// (horizontal plane, vertical plane)
    pub fn grad(x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut gh = vec![0.0; n * n];
        let mut gv = vec![0.0; n * n];
        for y in 0..n {
            for z in 0..n {
                if z + 1 < n {
                    gh[y * n + z] = x[y * n + z + 1] - x[y * n + z];
                }
                if y + 1 < n {
                    gv[y * n + z] = x[(y + 1) * n + z] - x[y * n + z];
                }
            }
        }
        (gh, gv)
    }

    pub fn adjoint(gh: &[f64], gv: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            for z in 0..n {
                let mut acc = 0.0;
                if z >= 1 {
                    acc += gh[y * n + z - 1];
                }
                if z + 1 < n {
                    acc -= gh[y * n + z];
                }
                if y >= 1 {
                    acc += gv[(y - 1) * n + z];
                }
                if y + 1 < n {
                    acc -= gv[y * n + z];
                }
                out[y * n + z] = acc;
            }
        }
        out
    }

    pub fn soft(v: f64, t: f64) -> f64 {
        if v > t {
            v - t
        } else if v < -t {
            v + t
        } else {
            0.0
        }
    }

    /// Residual: A^T (A I B - D) B^T + adj(L + eps (grad(I) - soft(L/sigma + grad(I))))
    #[allow(clippy::too_many_arguments)]
    pub fn residual(
        i: &[f64],
        a: &[f64],
        b: &[f64],
        d: &[f64],
        lh: &[f64],
        lv: &[f64],
        n: usize,
        alpha: f64,
        sigma: f64,
        eps: f64,
    ) -> Vec<f64> {
        let t = alpha / sigma;
        let aib = matmul(&matmul(a, i, n), b, n);
        let mut r = vec![0.0; n * n];
        for k in 0..n * n {
            r[k] = aib[k] - d[k];
        }
        let term1 = matmul(&matmul(&transpose(a, n), &r, n), &transpose(b, n), n);
        let (gh, gv) = grad(i, n);
        let mut ih = vec![0.0; n * n];
        let mut iv = vec![0.0; n * n];
        for k in 0..n * n {
            ih[k] = lh[k] + eps * (gh[k] - soft(lh[k] / sigma + gh[k], t));
            iv[k] = lv[k] + eps * (gv[k] - soft(lv[k] / sigma + gv[k], t));
        }
        let term2 = adjoint(&ih, &iv, n);
        (0..n * n).map(|k| term1[k] + term2[k]).collect()
    }

    /// Direction: A^T A F B B^T + sigma adj(grad(F) (*) (1 - active(L/sigma + grad(I))))
    #[allow(clippy::too_many_arguments)]
    pub fn direction(
        i: &[f64],
        a: &[f64],
        b: &[f64],
        f: &[f64],
        lh: &[f64],
        lv: &[f64],
        n: usize,
        alpha: f64,
        sigma: f64,
    ) -> Vec<f64> {
        let t = alpha / sigma;
        let ata = matmul(&transpose(a, n), a, n);
        let bbt = matmul(b, &transpose(b, n), n);
        let term1 = matmul(&matmul(&ata, f, n), &bbt, n);
        let (gh, gv) = grad(i, n);
        let (fh, fv) = grad(f, n);
        let mut mh = vec![0.0; n * n];
        let mut mv = vec![0.0; n * n];
        for k in 0..n * n {
            let ah = if (lh[k] / sigma + gh[k]).abs() > t { 1.0 } else { 0.0 };
            let av = if (lv[k] / sigma + gv[k]).abs() > t { 1.0 } else { 0.0 };
            mh[k] = fh[k] * (1.0 - ah);
            mv[k] = fv[k] * (1.0 - av);
        }
        let term2 = adjoint(&mh, &mv, n);
        (0..n * n).map(|k| term1[k] + sigma * term2[k]).collect()
    }
}

fn random_transcription_state(rng: &mut Rng) -> SolverState {
    let n = 4;
    let d = Tensor::from_fn(&[1, n, n], |_| rng.uniform(0.0, 1.0));
    let mut state =
        solver::init_classical(&d, RegularizerConfig::default(), solver::DEFAULT_ETA).unwrap();
    state.i = Tensor::from_fn(&[1, n, n], |_| rng.uniform(0.0, 1.0));
    state.a = Tensor::from_fn(&[1, n, n], |_| rng.uniform(-1.0, 1.0));
    state.b = Tensor::from_fn(&[1, n, n], |_| rng.uniform(-1.0, 1.0));
    state.lambda = Tensor::from_fn(&[2, n, n], |_| rng.uniform(-0.5, 0.5));
    state.config.alpha = rng.uniform(0.05, 0.3);
    state.config.sigma = rng.uniform(0.5, 2.0);
    state.config.epsilon = rng.uniform(0.5, 2.0);
    state
}

fn suite_transcription() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xB5);
    let n = 4;
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let state = random_transcription_state(&mut rng);
        let lh = &state.lambda.data()[..n * n];
        let lv = &state.lambda.data()[n * n..];
        let f_lib = solver::compute_f(&state).map_err(|e| e.to_string())?;
        let f_ora = transcription::residual(
            state.i.data(),
            state.a.data(),
            state.b.data(),
            state.d.data(),
            lh,
            lv,
            n,
            state.config.alpha,
            state.config.sigma,
            state.config.epsilon,
        );
        let mut diff = 0.0f64;
        for k in 0..n * n {
            diff = diff.max((f_lib.data()[k] - f_ora[k]).abs());
        }
        if diff > 1e-12 {
            return err(format!("trial {trial}: residual diff {diff:.3e} > 1e-12"));
        }
        worst = worst.max(diff);

        let h_lib = solver::compute_h(&state, &f_lib).map_err(|e| e.to_string())?;
        let h_ora = transcription::direction(
            state.i.data(),
            state.a.data(),
            state.b.data(),
            f_lib.data(),
            lh,
            lv,
            n,
            state.config.alpha,
            state.config.sigma,
        );
        let mut hdiff = 0.0f64;
        for k in 0..n * n {
            hdiff = hdiff.max((h_lib.data()[k] - h_ora[k]).abs());
        }
        if hdiff > 1e-12 {
            return err(format!("trial {trial}: direction diff {hdiff:.3e} > 1e-12"));
        }
        worst = worst.max(hdiff);
    }
    Ok(format!("100 states, worst {worst:.3e}"))
}

// --- 7. descent property -----------------------------------------------------

fn suite_descent() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xC6);
    let mut steps_checked = 0usize;
    for _ in 0..10 {
        let mut state = random_transcription_state(&mut rng);
        state.eta = 0.05;
        for _ in 0..12 {
            let (next, report) = solver::step_i(&state).map_err(|e| e.to_string())?;
            if report.f_norm_sq_after > report.f_norm_sq_before {
                return err(format!(
                    "residual norm increased: {} -> {}",
                    report.f_norm_sq_before, report.f_norm_sq_after
                ));
            }
            steps_checked += 1;
            state = next;
        }
    }
    // integrated runs exercise the same hard assertion inside the solver
    let d = Tensor::from_fn(&[3, 12, 12], |k| (k % 7) as f64 / 7.0);
    let noisy = d
        .add(&crate::degrade::gaussian_field(&[3, 12, 12], 15.0, 5))
        .unwrap()
        .clamp01();
    let opts = SolverOptions {
        outer_iters: 6,
        inner_iters: 3,
        ..Default::default()
    };
    solver::solve(&noisy, RegularizerConfig::default(), &opts).map_err(|e| e.to_string())?;
    Ok(format!("{steps_checked} manual steps plus one integrated solve, all non-increasing"))
}

// --- 8. denoising smoke test --------------------------------------------------

fn suite_denoise_smoke() -> std::result::Result<String, String> {
    let start = Instant::now();
    let clean = synthetic_image(16, 16);
    let noisy = crate::degrade::apply_noise(&clean, 25.0, 31).map_err(|e| e.to_string())?;
    let opts = SolverOptions {
        outer_iters: 30,
        inner_iters: 4,
        eta: 0.5,
        freeze_ab: true,
    };
    let result = solver::solve(
        &noisy.channel_tensor(),
        RegularizerConfig::default(),
        &opts,
    )
    .map_err(|e| e.to_string())?;
    let restored = Image::from_channel_tensor(&result.restored).map_err(|e| e.to_string())?;
    let before = metrics::psnr(&clean, &noisy, ChannelMode::Rgb).map_err(|e| e.to_string())?;
    let after = metrics::psnr(&clean, &restored, ChannelMode::Rgb).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    if after <= before {
        return err(format!("no improvement: {before:.3} dB -> {after:.3} dB"));
    }
    if elapsed >= 30.0 {
        return err(format!("took {elapsed:.1}s, budget 30s"));
    }
    Ok(format!(
        "psnr {before:.3} dB -> {after:.3} dB (+{:.3} dB), 30 outer iters, eta 0.5, {elapsed:.2}s",
        after - before
    ))
}

// --- 9/10/11/12: adaptive convolution contracts -------------------------------

fn random_conv_params(cout: usize, cin: usize, groups: usize, tau: f64, rng: &mut Rng) -> ExplainableConvParams {
    ExplainableConvParams {
        weight: Tensor::from_fn(&[cout, cin / groups, 3, 3], |_| rng.uniform(-1.0, 1.0)),
        bias: Tensor::from_fn(&[cout], |_| rng.uniform(-0.5, 0.5)),
        tau,
        stride: 1,
        padding: 1,
        groups,
    }
}

fn suite_attention_norm() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xD7);
    let mut slabs = 0usize;
    for _ in 0..25 {
        let cin = 1 + (rng.next_u64() % 3) as usize;
        let cout = 1 + (rng.next_u64() % 3) as usize;
        let tau = rng.uniform(0.2, 0.8);
        let p = random_conv_params(cout, cin, 1, tau, &mut rng);
        let x = Tensor::from_fn(&[2, cin, 6, 6], |_| rng.next_f64());
        // the forward itself asserts normalization; re-check the cache here
        let (_, cache) = explainable_conv_forward(&x, &p).map_err(|e| e.to_string())?;
        for slab in cache.attention.data().chunks(9) {
            let s: f64 = slab.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return err(format!("slab sum {s} deviates from 1"));
            }
            slabs += 1;
        }
    }
    Ok(format!("{slabs} attention slabs, all sum to 1 within 1e-12"))
}

fn suite_uniform_attention() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xE8);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let p = random_conv_params(3, 2, 1, 0.0, &mut rng);
        let value = if trial % 2 == 0 { 0.6 } else { -0.6 };
        let x = Tensor::full(&[1, 2, 6, 6], value);
        let (y, _) = explainable_conv_forward(&x, &p).map_err(|e| e.to_string())?;
        let expected = conv2d(&x, &p.weight.scale(1.0 / 9.0), &p.bias, 1, 1, 1)
            .map_err(|e| e.to_string())?;
        let diff = max_abs_diff(&y, &expected);
        worst = worst.max(diff);
        if diff > 1e-12 {
            return err(format!("trial {trial}: diff {diff:.3e} > 1e-12"));
        }
    }
    Ok(format!("10 constant-sign inputs, worst {worst:.3e}"))
}

fn suite_gradient_check() -> std::result::Result<String, String> {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(0xF9);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let cin = 1 + (rng.next_u64() % 2) as usize;
        let groups = if rng.next_u64() % 2 == 0 { 1 } else { cin };
        let cout = groups * (1 + (rng.next_u64() % 2) as usize);
        let tau = 0.5;
        let p = random_conv_params(cout, cin, groups, tau, &mut rng);
        // inputs on both sides of tau, margin far larger than the step
        let x = Tensor::from_fn(&[1, cin, 5, 5], |_| {
            let side = if rng.next_f64() < 0.5 { -0.3 } else { 0.3 };
            tau + side + rng.uniform(-0.1, 0.1)
        });
        let (y, cache) = explainable_conv_forward(&x, &p).map_err(|e| e.to_string())?;
        let gy = Tensor::from_fn(y.shape(), |_| rng.uniform(-1.0, 1.0));
        let (gx, gw, gb) =
            explainable_conv_backward(&gy, &cache, &p).map_err(|e| e.to_string())?;

        let loss = |pp: &ExplainableConvParams, xx: &Tensor| -> f64 {
            let (yy, _) = explainable_conv_forward(xx, pp).unwrap();
            yy.dot(&gy).unwrap()
        };
        let mut check = |fd: f64, an: f64, what: &str| -> std::result::Result<(), String> {
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);
            worst = worst.max(rel);
            if rel > 1e-4 {
                Err(format!("trial {trial} {what}: fd {fd:.6e} vs analytic {an:.6e} (rel {rel:.3e})"))
            } else {
                Ok(())
            }
        };
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
            check(fd, gx.data()[idx], "grad_x")?;
        }
        for idx in 0..p.weight.len() {
            let mut pp = p.clone();
            pp.weight.data_mut()[idx] += h;
            let mut pm = p.clone();
            pm.weight.data_mut()[idx] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            check(fd, gw.data()[idx], "grad_w")?;
        }
        for idx in 0..p.bias.len() {
            let mut pp = p.clone();
            pp.bias.data_mut()[idx] += h;
            let mut pm = p.clone();
            pm.bias.data_mut()[idx] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            check(fd, gb.data()[idx], "grad_bias")?;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 60.0 {
        return err(format!("took {elapsed:.1}s, budget 60s"));
    }
    Ok(format!("20 instances, worst rel {worst:.3e}, {elapsed:.2}s"))
}

fn suite_batch_independence() -> std::result::Result<String, String> {
    let mut rng = Rng::seed_from_u64(0xAA);
    // layer level
    let p = random_conv_params(3, 2, 1, 0.5, &mut rng);
    let samples: Vec<Tensor> = (0..3)
        .map(|_| Tensor::from_fn(&[1, 2, 6, 6], |_| rng.next_f64()))
        .collect();
    let batch = stack_samples(&samples).unwrap();
    let (y_batch, _) = explainable_conv_forward(&batch, &p).map_err(|e| e.to_string())?;
    let per: Vec<Tensor> = samples
        .iter()
        .map(|s| explainable_conv_forward(s, &p).unwrap().0)
        .collect();
    let expected = stack_samples(&per).unwrap();
    let layer_diff = max_abs_diff(&y_batch, &expected);
    if layer_diff > 1e-12 {
        return err(format!("layer-level diff {layer_diff:.3e} > 1e-12"));
    }
    // model level
    let model = seed_model(2, FEATURE_CHANNELS, 11).map_err(|e| e.to_string())?;
    let imgs: Vec<Tensor> = (0..2)
        .map(|_| Tensor::from_fn(&[1, 3, 16, 16], |_| rng.next_f64()))
        .collect();
    let batch = stack_samples(&imgs).unwrap();
    let y = forward_batch(&model, &batch).map_err(|e| e.to_string())?;
    let per: Vec<Tensor> = imgs
        .iter()
        .map(|s| forward_batch(&model, s).unwrap())
        .collect();
    let expected = stack_samples(&per).unwrap();
    let model_diff = max_abs_diff(&y, &expected);
    if model_diff > 1e-12 {
        return err(format!("model-level diff {model_diff:.3e} > 1e-12"));
    }
    Ok(format!("layer diff {layer_diff:.3e}, model diff {model_diff:.3e}"))
}

// --- golden files ----------------------------------------------------------

pub const GOLDEN_FILES: &[&str] = &[
    "ep_block.iirw",
    "dmum.iirw",
    "mum.iirw",
    "forward_input.ppm",
    "forward_output.ppm",
    "forward_output.iirw",
    "small_model.iirw",
];

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn suite_golden_integrity(dir: &Path) -> std::result::Result<String, String> {
    let manifest_path = dir.join("manifest.sha256");
    let manifest = std::fs::read_to_string(&manifest_path)
        .map_err(|e| format!("cannot read {}: {e}", manifest_path.display()))?;
    let mut checked = 0usize;
    for line in manifest.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (hash, name) = line
            .split_once("  ")
            .ok_or_else(|| format!("malformed manifest line `{line}`"))?;
        let bytes = std::fs::read(dir.join(name))
            .map_err(|e| format!("cannot read golden file {name}: {e}"))?;
        let actual = sha256_hex(&bytes);
        if actual != hash {
            return err(format!("golden file {name} is corrupted (sha256 {actual}, recorded {hash})"));
        }
        checked += 1;
    }
    if checked < GOLDEN_FILES.len() {
        return err(format!("manifest lists {checked} files, expected {}", GOLDEN_FILES.len()));
    }
    Ok(format!("{checked} golden files intact"))
}

/// Deterministic gated-block parameters with active residual branches.
fn golden_ep_params(c: usize, seed: u64) -> EpBlockParams {
    let mut rng = Rng::seed_from_u64(seed);
    let mut draw = |shape: &[usize]| {
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| std * rng.next_gaussian())
    };
    EpBlockParams {
        ln1: LayerNorm {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
        },
        expand1: PointwiseConv {
            weight: draw(&[2 * c, c, 1, 1]),
            bias: Tensor::zeros(&[2 * c]),
        },
        dwconv: ExplainableConvParams {
            weight: draw(&[2 * c, 1, 3, 3]),
            bias: Tensor::zeros(&[2 * c]),
            tau: 0.1,
            stride: 1,
            padding: 1,
            groups: 2 * c,
        },
        sca: PointwiseConv {
            weight: draw(&[c, c, 1, 1]),
            bias: Tensor::full(&[c], 1.0),
        },
        project1: PointwiseConv {
            weight: draw(&[c, c, 1, 1]),
            bias: Tensor::zeros(&[c]),
        },
        scale1: 0.3,
        ln2: LayerNorm {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
        },
        expand2: PointwiseConv {
            weight: draw(&[2 * c, c, 1, 1]),
            bias: Tensor::zeros(&[2 * c]),
        },
        project2: PointwiseConv {
            weight: draw(&[c, c, 1, 1]),
            bias: Tensor::zeros(&[c]),
        },
        scale2: 0.2,
    }
}

struct BlockGoldenInputs {
    ep_params: EpBlockParams,
    ep_input: Tensor,
    dmum_params: DmumParams,
    dmum_i: Tensor,
    dmum_b: Tensor,
    dmum_d: Tensor,
    mum_params: MumParams,
    mum_lambda: Tensor,
    mum_i: Tensor,
}

fn block_golden_inputs() -> BlockGoldenInputs {
    let mut rng = Rng::seed_from_u64(0x607D);
    let c = 8;
    let ep_params = golden_ep_params(c, 0x1111);
    let ep_input = Tensor::from_fn(&[1, c, 8, 8], |_| rng.next_f64());

    let dmum_params = DmumParams {
        ep_a: golden_ep_params(2 * c, 0x2222),
        ep_b: golden_ep_params(2 * c, 0x3333),
    };
    let (hd, wd) = (4, 5);
    let dmum_i = Tensor::from_fn(&[1, c, hd, wd], |_| rng.uniform(-1.0, 1.0));
    let dmum_b = Tensor::from_fn(&[1, c, wd, wd], |_| rng.uniform(-0.5, 0.5));
    let dmum_d = Tensor::from_fn(&[1, c, hd, wd], |_| rng.next_f64());

    let mum_params = MumParams {
        ep: golden_ep_params(c, 0x4444),
        convs: crate::unfolded::blocks::ConvsParams {
            conv1_weight: Tensor::from_fn(&[c, c, 3, 3], |_| 0.1 * rng.next_gaussian()),
            conv1_bias: Tensor::zeros(&[c]),
            conv2_weight: Tensor::from_fn(&[c, c, 3, 3], |_| 0.1 * rng.next_gaussian()),
            conv2_bias: Tensor::zeros(&[c]),
        },
    };
    let mum_lambda = Tensor::from_fn(&[1, c, 4, 4], |_| rng.uniform(-0.5, 0.5));
    let mum_i = Tensor::from_fn(&[1, c, 4, 4], |_| rng.next_f64());

    BlockGoldenInputs {
        ep_params,
        ep_input,
        dmum_params,
        dmum_i,
        dmum_b,
        dmum_d,
        mum_params,
        mum_lambda,
        mum_i,
    }
}

fn read_golden_tensor(dir: &Path, file: &str, name: &str) -> std::result::Result<Tensor, String> {
    let bytes = std::fs::read(dir.join(file))
        .map_err(|e| format!("cannot read golden file {file}: {e}"))?;
    let entries = decode_entries(&bytes).map_err(|e| format!("{file}: {e}"))?;
    entries
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| format!("{file}: tensor {name} not found"))
}

fn suite_block_goldens(dir: &Path) -> std::result::Result<String, String> {
    let g = block_golden_inputs();
    let mut worst = 0.0f64;

    let ep_out = ep_block(&g.ep_input, &g.ep_params).map_err(|e| e.to_string())?;
    let want = read_golden_tensor(dir, "ep_block.iirw", "output")?;
    let d = max_abs_diff(&ep_out, &want);
    worst = worst.max(d);
    if d > 1e-12 {
        return err(format!("gated block deviates from golden by {d:.3e}"));
    }

    let (a_new, b_new) = dmum(&g.dmum_i, &g.dmum_b, &g.dmum_d, &g.dmum_params)
        .map_err(|e| e.to_string())?;
    let wa = read_golden_tensor(dir, "dmum.iirw", "a_new")?;
    let wb = read_golden_tensor(dir, "dmum.iirw", "b_new")?;
    let d = max_abs_diff(&a_new, &wa).max(max_abs_diff(&b_new, &wb));
    worst = worst.max(d);
    if d > 1e-12 {
        return err(format!("matrix update deviates from golden by {d:.3e}"));
    }

    let l_new = mum(&g.mum_lambda, &g.mum_i, &g.mum_params).map_err(|e| e.to_string())?;
    let wl = read_golden_tensor(dir, "mum.iirw", "lambda_new")?;
    let d = max_abs_diff(&l_new, &wl);
    worst = worst.max(d);
    if d > 1e-12 {
        return err(format!("multiplier update deviates from golden by {d:.3e}"));
    }
    Ok(format!("3 block golden vectors, worst {worst:.3e}"))
}

fn suite_forward_golden(dir: &Path) -> std::result::Result<String, String> {
    let start = Instant::now();
    let input_bytes = std::fs::read(dir.join("forward_input.ppm"))
        .map_err(|e| format!("cannot read golden input: {e}"))?;
    let input = decode_netpbm(&input_bytes).map_err(|e| e.to_string())?;
    let model = seed_model(GOLDEN_MODEL_BLOCKS, FEATURE_CHANNELS, GOLDEN_MODEL_SEED)
        .map_err(|e| e.to_string())?;
    let count = model.parameter_count();
    if count != FROZEN_PARAMETER_COUNT {
        return err(format!(
            "parameter count {count} deviates from recorded {FROZEN_PARAMETER_COUNT}"
        ));
    }
    let out = forward_batch(&model, input.pixels()).map_err(|e| e.to_string())?;
    if out.shape() != input.pixels().shape() {
        return err(format!("output shape {:?} differs from input", out.shape()));
    }
    let want = read_golden_tensor(dir, "forward_output.iirw", "output")?;
    let diff = max_abs_diff(&out, &want);
    let elapsed = start.elapsed().as_secs_f64();
    if diff > 1e-12 {
        return err(format!("forward deviates from golden by {diff:.3e}"));
    }
    if elapsed >= 30.0 {
        return err(format!("took {elapsed:.1}s, budget 30s"));
    }
    Ok(format!(
        "n={GOLDEN_MODEL_BLOCKS} c={FEATURE_CHANNELS} ({count} params), diff {diff:.3e}, {elapsed:.2}s"
    ))
}

// --- serialization -----------------------------------------------------------

fn suite_serialization() -> std::result::Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // weights roundtrip
    let model = seed_model(2, 8, 77).map_err(|e| e.to_string())?;
    let path = dir.path().join("model.iirw");
    save_weights(&model, &path).map_err(|e| e.to_string())?;
    let back = load_weights(&path).map_err(|e| e.to_string())?;
    if back != model {
        return err("weights roundtrip is not bit-exact");
    }
    // container roundtrip on raw entries
    let entries = model_entries(&model);
    let decoded = decode_entries(&encode_entries(&entries)).map_err(|e| e.to_string())?;
    if decoded != entries {
        return err("container roundtrip altered entries");
    }
    // image roundtrip on a quantized image
    let img = synthetic_image(24, 20);
    let ppm = dir.path().join("img.ppm");
    crate::image::save_ppm(&img, &ppm).map_err(|e| e.to_string())?;
    let back = crate::image::load_ppm(&ppm).map_err(|e| e.to_string())?;
    if back != img {
        return err("image roundtrip is not bit-exact");
    }
    let again = encode_netpbm(&back);
    let original = std::fs::read(&ppm).map_err(|e| e.to_string())?;
    if again != original {
        return err("second encode differs from file bytes");
    }
    Ok("weights and image roundtrips bit-exact".into())
}

// --- metric spot values --------------------------------------------------------

fn suite_metric_spots() -> std::result::Result<String, String> {
    if metrics::DEFAULT_FREQ_WEIGHT != 0.1 {
        return err("default frequency weight is not 0.1");
    }
    let a = Image::new(Tensor::full(&[1, 3, 8, 8], 0.4)).unwrap();
    let b = Image::new(Tensor::full(&[1, 3, 8, 8], 0.4 + 16.0 / 255.0)).unwrap();
    let v = metrics::psnr(&a, &b, ChannelMode::Rgb).map_err(|e| e.to_string())?;
    let expected = 20.0 * (255.0f64 / 16.0).log10();
    if (v - expected).abs() > 1e-3 {
        return err(format!("offset psnr {v} vs {expected}"));
    }
    let img = synthetic_image(16, 16);
    let y = crate::image::rgb_to_y(&img).map_err(|e| e.to_string())?;
    let s = metrics::ssim_planes(&y, &y).map_err(|e| e.to_string())?;
    if s != 1.0 {
        return err(format!("self ssim {s} != 1"));
    }
    let c = 0.25;
    let p = Image::new(Tensor::full(&[1, 3, 4, 4], 0.5)).unwrap();
    let q = Image::new(Tensor::full(&[1, 3, 4, 4], 0.5 + c)).unwrap();
    let (t, sp, f) = metrics::composite_loss(&q, &p, 0.1).map_err(|e| e.to_string())?;
    if (sp - c).abs() > 1e-12 || (f - c).abs() > 1e-12 || (t - 1.1 * c).abs() > 1e-12 {
        return err(format!("constant-difference loss ({t}, {sp}, {f}) vs ({}, {c}, {c})", 1.1 * c));
    }
    Ok(format!("psnr {v:.4} dB, self-ssim 1, constant-difference loss exact"))
}

// --- determinism ----------------------------------------------------------------

fn suite_determinism() -> std::result::Result<String, String> {
    // frozen full-recipe hash
    let clean = synthetic_image(24, 24);
    let spec = DegradationSpec::new(150.0, 300.0, 50.0, 7).map_err(|e| e.to_string())?;
    let degraded = make_test_case(&clean, &spec).map_err(|e| e.to_string())?;
    let hash = sha256_hex(&encode_netpbm(&degraded));
    if hash != FROZEN_CASE_SHA256 {
        return err(format!("full-recipe hash {hash} deviates from recorded {FROZEN_CASE_SHA256}"));
    }

    // two identical degrade runs, then two identical restore runs
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean_dir = work.path().join("clean");
    std::fs::create_dir_all(&clean_dir).map_err(|e| e.to_string())?;
    crate::image::save_ppm(&synthetic_image(16, 16), clean_dir.join("a.ppm"))
        .map_err(|e| e.to_string())?;
    crate::image::save_ppm(&synthetic_image(20, 16), clean_dir.join("b.ppm"))
        .map_err(|e| e.to_string())?;

    // rerun into the same path so manifests (which carry absolute paths)
    // are byte-comparable
    let spec = DegradationSpec::new(60.0, 40.0, 15.0, 99).map_err(|e| e.to_string())?;
    let deg_dir = work.path().join("deg");
    let degrade_once = || -> std::result::Result<Vec<(String, String)>, String> {
        if deg_dir.exists() {
            std::fs::remove_dir_all(&deg_dir).map_err(|e| e.to_string())?;
        }
        let summary =
            crate::cli::cmd_degrade(&clean_dir, &deg_dir, spec, 99).map_err(|e| e.to_string())?;
        if summary.failures != 0 {
            return err("degrade reported failures");
        }
        dir_digest(&deg_dir)
    };
    let first = degrade_once()?;
    let second = degrade_once()?;
    if first != second {
        return err("degrade runs differ byte-for-byte");
    }
    let manifest = deg_dir.join("manifest.tsv");

    let classical = crate::cli::RunConfig {
        outer_iters: 4,
        inner_iters: 2,
        ..Default::default()
    };
    let weights = work.path().join("model.iirw");
    save_weights(&seed_model(2, FEATURE_CHANNELS, 5).unwrap(), &weights)
        .map_err(|e| e.to_string())?;
    let unfolded_cfg = crate::cli::RunConfig {
        mode: crate::cli::Mode::Unfolded,
        weights: Some(weights),
        seed: 5,
        ..Default::default()
    };
    for (label, cfg) in [("classical", &classical), ("unfolded", &unfolded_cfg)] {
        let out = work.path().join(format!("res_{label}"));
        let restore_once = || -> std::result::Result<Vec<(String, String)>, String> {
            if out.exists() {
                std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
            }
            let summary =
                crate::cli::cmd_restore(&manifest, &out, cfg).map_err(|e| e.to_string())?;
            if summary.failures != 0 {
                return err(format!("{label} restore reported failures"));
            }
            dir_digest(&out)
        };
        let first = restore_once()?;
        let second = restore_once()?;
        if first != second {
            return err(format!("{label} restore runs differ byte-for-byte"));
        }
    }
    Ok("degrade and both restore modes byte-identical across reruns; recipe hash stable".into())
}

/// Sorted (name, sha256) digest of every file in a directory.
fn dir_digest(dir: &Path) -> std::result::Result<Vec<(String, String)>, String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("read_dir {}: {e}", dir.display()))?
        .map(|e| e.map(|x| x.path()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| e.to_string())?;
    names.sort();
    let mut out = Vec::new();
    for p in names {
        let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
        out.push((
            p.file_name().unwrap().to_string_lossy().into_owned(),
            sha256_hex(&bytes),
        ));
    }
    Ok(out)
}

// --- shared helpers --------------------------------------------------------------

/// Deterministic synthetic RGB test image, already 8-bit quantized.
pub fn synthetic_image(h: usize, w: usize) -> Image {
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    let tau = std::f64::consts::TAU;
    let data = Tensor::from_fn(&[1, 3, h, w], |idx| {
        let x = (idx % w) as f64;
        let y = ((idx / w) % h) as f64;
        let c = idx / (w * h);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let r = ((x - cx) * (x - cx) + (y - cy) * (y - cy)).sqrt();
        let disc = if r < h.min(w) as f64 / 4.0 { 0.25 } else { 0.0 };
        let v = match c {
            0 => 0.35 + 0.3 * (tau * x / w as f64).sin() + disc,
            1 => 0.45 + 0.3 * (tau * y / h as f64).cos() + disc,
            _ => 0.5 + 0.25 * (tau * (x + y) / (w + h) as f64).sin(),
        };
        quant(v)
    });
    Image::new(data).expect("synthetic image construction")
}

// --- golden regeneration -----------------------------------------------------------

/// Rewrite every golden artifact from the current implementation and print
/// the constants that must stay frozen in source. Used once at the first
/// correct build and after intentional algorithm changes.
pub fn regen_golden(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;

    let g = block_golden_inputs();
    let ep_out = ep_block(&g.ep_input, &g.ep_params)?;
    std::fs::write(
        dir.join("ep_block.iirw"),
        encode_entries(&[
            ("input".to_string(), g.ep_input.clone()),
            ("output".to_string(), ep_out),
        ]),
    )
    .map_err(|e| crate::error::Error::io(dir.join("ep_block.iirw"), e))?;

    let (a_new, b_new) = dmum(&g.dmum_i, &g.dmum_b, &g.dmum_d, &g.dmum_params)?;
    std::fs::write(
        dir.join("dmum.iirw"),
        encode_entries(&[("a_new".to_string(), a_new), ("b_new".to_string(), b_new)]),
    )
    .map_err(|e| crate::error::Error::io(dir.join("dmum.iirw"), e))?;

    let l_new = mum(&g.mum_lambda, &g.mum_i, &g.mum_params)?;
    std::fs::write(
        dir.join("mum.iirw"),
        encode_entries(&[("lambda_new".to_string(), l_new)]),
    )
    .map_err(|e| crate::error::Error::io(dir.join("mum.iirw"), e))?;

    let input = synthetic_image(64, 64);
    crate::image::save_ppm(&input, dir.join("forward_input.ppm"))?;
    let model = seed_model(GOLDEN_MODEL_BLOCKS, FEATURE_CHANNELS, GOLDEN_MODEL_SEED)?;
    let out = forward_batch(&model, input.pixels())?;
    std::fs::write(
        dir.join("forward_output.iirw"),
        encode_entries(&[("output".to_string(), out.clone())]),
    )
    .map_err(|e| crate::error::Error::io(dir.join("forward_output.iirw"), e))?;
    crate::image::save_ppm(&Image::from_tensor_clamped(out)?, dir.join("forward_output.ppm"))?;

    save_weights(&seed_model(1, 8, 42)?, dir.join("small_model.iirw"))?;

    let mut manifest = String::new();
    for name in GOLDEN_FILES {
        let bytes = std::fs::read(dir.join(name))
            .map_err(|e| crate::error::Error::io(dir.join(name), e))?;
        manifest.push_str(&format!("{}  {name}\n", sha256_hex(&bytes)));
    }
    std::fs::write(dir.join("manifest.sha256"), manifest)
        .map_err(|e| crate::error::Error::io(dir.join("manifest.sha256"), e))?;

    let clean = synthetic_image(24, 24);
    let spec = DegradationSpec::new(150.0, 300.0, 50.0, 7)?;
    let degraded = make_test_case(&clean, &spec)?;
    println!("frozen parameter count: {}", model.parameter_count());
    println!("frozen recipe sha256: {}", sha256_hex(&encode_netpbm(&degraded)));
    Ok(())
}
