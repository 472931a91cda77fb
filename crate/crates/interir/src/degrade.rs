//! Synthetic multi-degradation generation: haze, rain streaks, Gaussian
//! noise, and the factored per-channel degradation operator.
//!
//! Every generator is a deterministic function of (input, level, seed), so
//! test cases can be regenerated bit-identically from a manifest row.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{mix64, Rng};
use crate::tensor::{channel_matmul, Tensor};

pub const HAZE_MAX: f64 = 150.0;
pub const RAIN_MAX: f64 = 300.0;
pub const NOISE_MAX: f64 = 50.0;

/// Atmospheric light for the haze model.
const HAZE_ATMOSPHERE: f64 = 0.9;
/// Optical depth at the maximum haze level: transmission e^-2 ~ 0.135.
const HAZE_DEPTH_AT_MAX: f64 = 2.0;

// Rain streak geometry. Streaks are bright anti-aliased line segments.
const STREAK_LEN_MIN: f64 = 8.0;
const STREAK_LEN_MAX: f64 = 24.0;
const STREAK_ANGLE_MIN_DEG: f64 = 60.0;
const STREAK_ANGLE_MAX_DEG: f64 = 120.0;
const STREAK_INTENSITY_MIN: f64 = 0.15;
const STREAK_INTENSITY_MAX: f64 = 0.4;

/// Per-image degradation recipe. A level of zero means the stage is absent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    /// Haze level in [0, 150].
    pub haze: f64,
    /// Rain level (expected streak count) in [0, 300].
    pub rain: f64,
    /// Noise sigma in 8-bit units, in [0, 50].
    pub noise: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(haze: f64, rain: f64, noise: f64, seed: u64) -> Result<Self> {
        let spec = DegradationSpec {
            haze,
            rain,
            noise,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("haze level", self.haze, HAZE_MAX)?;
        check_range("rain level", self.rain, RAIN_MAX)?;
        check_range("noise level", self.noise, NOISE_MAX)?;
        Ok(())
    }
}

fn check_range(what: &str, value: f64, max: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 || value > max {
        return Err(Error::InvalidArgument(format!(
            "{what} {value} outside [0, {max}]"
        )));
    }
    Ok(())
}

/// Zero-mean Gaussian field with standard deviation `sigma_8bit/255`,
/// deterministic in `seed`. This is the pre-clamp noise that
/// [`apply_noise`] adds.
pub fn gaussian_field(shape: &[usize], sigma_8bit: f64, seed: u64) -> Tensor {
    let sigma = sigma_8bit / 255.0;
    let mut rng = Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| sigma * rng.next_gaussian())
}

/// Additive i.i.d. Gaussian noise of standard deviation `sigma_8bit/255`,
/// clamped to [0, 1].
pub fn apply_noise(image: &Image, sigma_8bit: f64, seed: u64) -> Result<Image> {
    check_range("noise level", sigma_8bit, NOISE_MAX)?;
    if sigma_8bit == 0.0 {
        return Ok(image.clone());
    }
    let noise = gaussian_field(image.pixels().shape(), sigma_8bit, seed);
    Image::from_tensor_clamped(image.pixels().add(&noise)?)
}

/// Superimpose `round(level)` additive bright streaks, then clamp.
///
/// Each streak is a random anti-aliased segment: length 8-24 px, angle
/// 60-120 degrees from the x-axis, intensity 0.15-0.4, drawn with a 1 px
/// linear falloff around the segment. The same streak layer is added to
/// every channel.
pub fn apply_rain(image: &Image, level: f64, seed: u64) -> Result<Image> {
    check_range("rain level", level, RAIN_MAX)?;
    let count = level.round() as usize;
    if count == 0 {
        return Ok(image.clone());
    }
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let mut layer = vec![0.0f64; h * w];
    let mut rng = Rng::seed_from_u64(seed);
    for _ in 0..count {
        let cx = rng.uniform(0.0, w as f64);
        let cy = rng.uniform(0.0, h as f64);
        let len = rng.uniform(STREAK_LEN_MIN, STREAK_LEN_MAX);
        let angle = rng
            .uniform(STREAK_ANGLE_MIN_DEG, STREAK_ANGLE_MAX_DEG)
            .to_radians();
        let intensity = rng.uniform(STREAK_INTENSITY_MIN, STREAK_INTENSITY_MAX);
        let (dx, dy) = (angle.cos(), angle.sin());
        let (x0, y0) = (cx - 0.5 * len * dx, cy - 0.5 * len * dy);
        let (x1, y1) = (cx + 0.5 * len * dx, cy + 0.5 * len * dy);

        let lo_x = (x0.min(x1).floor() - 1.0).max(0.0) as usize;
        let hi_x = ((x0.max(x1).ceil() + 1.0) as usize).min(w.saturating_sub(1));
        let lo_y = (y0.min(y1).floor() - 1.0).max(0.0) as usize;
        let hi_y = ((y0.max(y1).ceil() + 1.0) as usize).min(h.saturating_sub(1));
        for py in lo_y..=hi_y {
            for px in lo_x..=hi_x {
                let d = point_segment_distance(px as f64, py as f64, x0, y0, x1, y1);
                let coverage = (1.0 - d).max(0.0);
                if coverage > 0.0 {
                    layer[py * w + px] += intensity * coverage;
                }
            }
        }
    }
    let plane = h * w;
    let mut out = image.pixels().clone();
    for ch in 0..c {
        for i in 0..plane {
            out.data_mut()[ch * plane + i] += layer[i];
        }
    }
    Image::from_tensor_clamped(out)
}

fn point_segment_distance(px: f64, py: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let (vx, vy) = (x1 - x0, y1 - y0);
    let len_sq = vx * vx + vy * vy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((px - x0) * vx + (py - y0) * vy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (x0 + t * vx, y0 + t * vy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Atmospheric scattering with uniform transmission:
/// `out = in * t + 0.9 * (1 - t)` where `t = exp(-2 * level / 150)`.
///
/// The seed parameter is accepted for interface uniformity; the scalar
/// model is fully deterministic without it.
pub fn apply_haze(image: &Image, level: f64, _seed: u64) -> Result<Image> {
    check_range("haze level", level, HAZE_MAX)?;
    if level == 0.0 {
        return Ok(image.clone());
    }
    let t = (-level / HAZE_MAX * HAZE_DEPTH_AT_MAX).exp();
    let airlight = HAZE_ATMOSPHERE * (1.0 - t);
    Image::from_tensor_clamped(image.pixels().map(|v| v * t + airlight))
}

/// Factored per-channel degradation: `A[c] * I[c] * B[c] + N[c]`.
pub fn apply_factored_degradation(
    image_chan: &Tensor,
    a: &Tensor,
    b: &Tensor,
    noise: &Tensor,
) -> Result<Tensor> {
    let (c, h, w) = image_chan.dims3("factored degradation image")?;
    let (ca, ha, ha2) = a.dims3("factored degradation A")?;
    if ca != c || ha != h || ha2 != h {
        return Err(Error::dim(
            "left_matrix",
            format!("A shape {:?}, expected [{c}, {h}, {h}]", a.shape()),
        ));
    }
    let (cb, wb, wb2) = b.dims3("factored degradation B")?;
    if cb != c || wb != w || wb2 != w {
        return Err(Error::dim(
            "right_matrix",
            format!("B shape {:?}, expected [{c}, {w}, {w}]", b.shape()),
        ));
    }
    channel_matmul(&channel_matmul(a, image_chan)?, b)?.add(noise)
}

/// Derive the per-stage seed for one of the degradation stages.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    mix64(seed ^ mix64(stage))
}

/// Compose the recipe in order haze -> rain -> noise; levels of zero skip
/// their stage entirely.
pub fn make_test_case(clean: &Image, spec: &DegradationSpec) -> Result<Image> {
    spec.validate()?;
    let hazed = apply_haze(clean, spec.haze, stage_seed(spec.seed, 0))?;
    let rained = apply_rain(&hazed, spec.rain, stage_seed(spec.seed, 1))?;
    apply_noise(&rained, spec.noise, stage_seed(spec.seed, 2))
}
