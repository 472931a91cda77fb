//! Analytic operators for the classical solver: the shallow feature
//! transform `V` (finite-difference image gradient) with its exact adjoint,
//! soft-thresholding as the proximal map of the scaled L1 prior, and the
//! proximal-gradient updates of the per-channel degradation matrices.

use crate::error::{Error, Result};
use crate::tensor::{channel_matmul, channel_transpose, Tensor};

/// Weights of the regularized restoration objective
/// `1/2 ||A I B - D||^2 + alpha ||V(I)||_1 + beta/2 ||A||^2 + gamma/2 ||B||^2`
/// plus the splitting constants used by the alternation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    /// Weight of the sparsity prior on V(I).
    pub alpha: f64,
    /// Weight of the Frobenius penalty on A.
    pub beta: f64,
    /// Weight of the Frobenius penalty on B.
    pub gamma: f64,
    /// Scale inside the thresholding argument (multiplier / sigma).
    pub sigma: f64,
    /// Penalty coefficient of the splitting term.
    pub epsilon: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        // sigma defaults equal to epsilon so the threshold derivation is
        // self-consistent; both stay independently configurable.
        RegularizerConfig {
            alpha: 0.1,
            beta: 0.01,
            gamma: 0.01,
            sigma: 1.0,
            epsilon: 1.0,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("sigma", self.sigma),
            ("epsilon", self.epsilon),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Canonical soft-threshold level alpha / sigma.
    pub fn threshold(&self) -> f64 {
        self.alpha / self.sigma
    }
}

/// Forward-difference image gradient with replicate-edge boundary (the
/// difference at the last row/column is zero). Input `[C, H, W]`, output
/// `[2C, H, W]`: channels `[0, C)` are horizontal differences, `[C, 2C)`
/// vertical.
pub fn v_grad(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3("v_grad input")?;
    let plane = h * w;
    let xd = x.data();
    let mut out = Tensor::zeros(&[2 * c, h, w]);
    let od = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for z in 0..w {
                let i = ch * plane + y * w + z;
                if z + 1 < w {
                    od[ch * plane + y * w + z] = xd[i + 1] - xd[i];
                }
                if y + 1 < h {
                    od[(c + ch) * plane + y * w + z] = xd[i + w] - xd[i];
                }
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`v_grad`] under the Euclidean inner product
/// (negative divergence with matching boundary handling). Input
/// `[2C, H, W]`, output `[C, H, W]`.
pub fn v_adjoint(y: &Tensor) -> Result<Tensor> {
    let (c2, h, w) = y.dims3("v_adjoint input")?;
    if c2 % 2 != 0 {
        return Err(Error::dim(
            "channel",
            format!("v_adjoint needs even channel count, got {c2}"),
        ));
    }
    let c = c2 / 2;
    let plane = h * w;
    let yd = y.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let od = out.data_mut();
    for ch in 0..c {
        let hb = ch * plane;
        let vb = (c + ch) * plane;
        for yy in 0..h {
            for zz in 0..w {
                let mut acc = 0.0;
                if zz >= 1 {
                    acc += yd[hb + yy * w + zz - 1];
                }
                if zz + 1 < w {
                    acc -= yd[hb + yy * w + zz];
                }
                if yy >= 1 {
                    acc += yd[vb + (yy - 1) * w + zz];
                }
                if yy + 1 < h {
                    acc -= yd[vb + yy * w + zz];
                }
                od[ch * plane + yy * w + zz] = acc;
            }
        }
    }
    Ok(out)
}

/// Elementwise soft-thresholding `sign(x) * max(|x| - t, 0)`, the proximal
/// map of `t * |.|_1`.
pub fn soft_threshold(x: &Tensor, t: f64) -> Result<Tensor> {
    check_threshold(t)?;
    Ok(x.map(|v| soft_threshold_scalar(v, t)))
}

/// Subderivative of [`soft_threshold`]: 1 where `|x| > t`, else 0 (the
/// boundary is assigned 0 to keep the curvature estimate conservative).
pub fn soft_threshold_sub(x: &Tensor, t: f64) -> Result<Tensor> {
    check_threshold(t)?;
    Ok(x.map(|v| if v.abs() > t { 1.0 } else { 0.0 }))
}

pub fn soft_threshold_scalar(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn check_threshold(t: f64) -> Result<()> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be strictly positive, got {t}"
        )));
    }
    Ok(())
}

/// Full objective value at `(i, a, b)` given the observation `d`.
pub fn composite_objective(
    i: &Tensor,
    a: &Tensor,
    b: &Tensor,
    d: &Tensor,
    config: &RegularizerConfig,
) -> Result<f64> {
    let residual = channel_matmul(&channel_matmul(a, i)?, b)?.sub(d)?;
    let features = v_grad(i)?;
    Ok(0.5 * residual.norm_sq()
        + config.alpha * features.sum_abs()
        + 0.5 * config.beta * a.norm_sq()
        + 0.5 * config.gamma * b.norm_sq())
}

const MATRIX_STEP_FLOOR: f64 = 1e-12;

/// One proximal-gradient step on the left degradation matrix:
/// `A <- A - eta * [(A I B - D)(I B)^T + beta A]` per channel, with the step
/// size backtracked so the objective does not increase. Returns the new
/// matrix and the accepted step size (zero when no step was accepted).
pub fn update_a_classical(
    a: &Tensor,
    b: &Tensor,
    i: &Tensor,
    d: &Tensor,
    config: &RegularizerConfig,
    iter: usize,
) -> Result<(Tensor, f64)> {
    let ib = channel_matmul(i, b)?;
    let residual = channel_matmul(a, &ib)?.sub(d)?;
    let grad = channel_matmul(&residual, &channel_transpose(&ib)?)?
        .add(&a.scale(config.beta))?;
    if !grad.all_finite() {
        return Err(Error::Numerical {
            iter,
            detail: "non-finite gradient in left-matrix update".into(),
        });
    }
    descend_matrix(a, &grad, |cand| {
        composite_objective(i, cand, b, d, config)
    })
}

/// One proximal-gradient step on the right degradation matrix:
/// `B <- B - eta * [(A I)^T (A I B - D) + gamma B]` per channel.
pub fn update_b_classical(
    a: &Tensor,
    b: &Tensor,
    i: &Tensor,
    d: &Tensor,
    config: &RegularizerConfig,
    iter: usize,
) -> Result<(Tensor, f64)> {
    let ai = channel_matmul(a, i)?;
    let residual = channel_matmul(&ai, b)?.sub(d)?;
    let grad = channel_matmul(&channel_transpose(&ai)?, &residual)?
        .add(&b.scale(config.gamma))?;
    if !grad.all_finite() {
        return Err(Error::Numerical {
            iter,
            detail: "non-finite gradient in right-matrix update".into(),
        });
    }
    descend_matrix(b, &grad, |cand| {
        composite_objective(i, a, cand, d, config)
    })
}

fn descend_matrix(
    current: &Tensor,
    grad: &Tensor,
    objective: impl Fn(&Tensor) -> Result<f64>,
) -> Result<(Tensor, f64)> {
    let before = objective(current)?;
    let mut eta = 1.0;
    while eta >= MATRIX_STEP_FLOOR {
        let candidate = current.sub(&grad.scale(eta))?;
        if candidate.all_finite() && objective(&candidate)? <= before {
            return Ok((candidate, eta));
        }
        eta *= 0.5;
    }
    // No decreasing step found: keep the matrix (objective unchanged).
    Ok((current.clone(), 0.0))
}
