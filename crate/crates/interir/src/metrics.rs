//! Image quality metrics (PSNR, SSIM on luma) and the spatial-plus-frequency
//! training loss.

use crate::error::{Error, Result};
use crate::image::{rgb_to_y, Image};
use crate::tensor::{dft2d, Tensor};

/// Which channels PSNR averages over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    Rgb,
    Y,
}

pub const DEFAULT_FREQ_WEIGHT: f64 = 0.1;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio on the [0, 1] scale (identical to the 8-bit
/// convention). Identical inputs return `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, mode: ChannelMode) -> Result<f64> {
    let (ta, tb) = match mode {
        ChannelMode::Rgb => (a.pixels().clone(), b.pixels().clone()),
        ChannelMode::Y => (rgb_to_y(a)?, rgb_to_y(b)?),
    };
    if ta.shape() != tb.shape() {
        return Err(Error::dim(
            "shape",
            format!("psnr on {:?} vs {:?}", ta.shape(), tb.shape()),
        ));
    }
    let mse = ta.sub(&tb)?.norm_sq() / ta.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -half..=half {
        for x in -half..=half {
            let r2 = (y * y + x * x) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local structural similarity over all fully-contained 11x11 windows
/// with a sigma-1.5 Gaussian weighting, dynamic range 1. Inputs are
/// single-channel (luma) images of equal shape.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(Error::InvalidChannels {
            expected: 1,
            got: if a.channels() != 1 { a.channels() } else { b.channels() },
        });
    }
    ssim_planes(a.pixels(), b.pixels())
}

/// SSIM over two `[1, 1, H, W]` tensors.
pub fn ssim_planes(ta: &Tensor, tb: &Tensor) -> Result<f64> {
    if ta.shape() != tb.shape() {
        return Err(Error::dim(
            "shape",
            format!("ssim on {:?} vs {:?}", ta.shape(), tb.shape()),
        ));
    }
    let (_, _, h, w) = ta.dims4("ssim input")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let window = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let ad = ta.data();
    let bd = tb.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - SSIM_WINDOW) {
        for ox in 0..=(w - SSIM_WINDOW) {
            let (mut ma, mut mb) = (0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wgt = window[ky * SSIM_WINDOW + kx];
                    let idx = (oy + ky) * w + ox + kx;
                    ma += wgt * ad[idx];
                    mb += wgt * bd[idx];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wgt = window[ky * SSIM_WINDOW + kx];
                    let idx = (oy + ky) * w + ox + kx;
                    let (da, db) = (ad[idx] - ma, bd[idx] - mb);
                    va += wgt * da * da;
                    vb += wgt * db * db;
                    cov += wgt * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Spatial L1 plus weighted frequency L1:
/// `(total, spatial, freq)` where `spatial` is the mean absolute pixel
/// difference, `freq` the mean complex modulus of the spectrum difference,
/// and `total = spatial + lambda * freq`.
pub fn composite_loss(pred: &Image, target: &Image, lambda: f64) -> Result<(f64, f64, f64)> {
    let (tp, tt) = (pred.pixels(), target.pixels());
    if tp.shape() != tt.shape() {
        return Err(Error::dim(
            "shape",
            format!("composite_loss on {:?} vs {:?}", tp.shape(), tt.shape()),
        ));
    }
    let spatial = tp.sub(tt)?.sum_abs() / tp.len() as f64;
    let (pr, pi) = dft2d(tp)?;
    let (tr, ti) = dft2d(tt)?;
    let dr = pr.sub(&tr)?;
    let di = pi.sub(&ti)?;
    let freq = dr
        .data()
        .iter()
        .zip(di.data().iter())
        .map(|(&re, &im)| (re * re + im * im).sqrt())
        .sum::<f64>()
        / dr.len() as f64;
    Ok((spatial + lambda * freq, spatial, freq))
}

/// Full quality report for one restored/reference pair.
#[derive(Clone, Copy, Debug)]
pub struct EvalReport {
    pub psnr_rgb: f64,
    pub psnr_y: f64,
    pub ssim_y: f64,
    pub loss_spatial: f64,
    pub loss_freq: f64,
    pub loss_total: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "image,psnr_rgb,psnr_y,ssim_y,loss_spatial,loss_freq,loss_total,status";

    pub fn csv_row(&self, image: &str, status: &str) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            image,
            fmt_db(self.psnr_rgb),
            fmt_db(self.psnr_y),
            self.ssim_y,
            self.loss_spatial,
            self.loss_freq,
            self.loss_total,
            status
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "PSNR(rgb) {} dB | PSNR(y) {} dB | SSIM(y) {:.4} | loss {:.6} (spatial {:.6}, freq {:.6})",
            fmt_db(self.psnr_rgb),
            fmt_db(self.psnr_y),
            self.ssim_y,
            self.loss_total,
            self.loss_spatial,
            self.loss_freq
        )
    }

    pub fn is_finite(&self) -> bool {
        self.psnr_rgb.is_finite()
            && self.psnr_y.is_finite()
            && self.ssim_y.is_finite()
            && self.loss_total.is_finite()
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Evaluate one pair: reference first, candidate second.
pub fn evaluate_pair(reference: &Image, candidate: &Image, lambda: f64) -> Result<EvalReport> {
    let psnr_rgb = psnr(reference, candidate, ChannelMode::Rgb)?;
    let psnr_y = psnr(reference, candidate, ChannelMode::Y)?;
    let ya = rgb_to_y(reference)?;
    let yb = rgb_to_y(candidate)?;
    let ssim_y = ssim_planes(&ya, &yb)?;
    let (loss_total, loss_spatial, loss_freq) = composite_loss(candidate, reference, lambda)?;
    Ok(EvalReport {
        psnr_rgb,
        psnr_y,
        ssim_y,
        loss_spatial,
        loss_freq,
        loss_total,
    })
}
