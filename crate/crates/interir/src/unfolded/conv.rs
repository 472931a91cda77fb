//! Input-adaptive convolution: a binary activation mask derived from a
//! learnable threshold is pooled to kernel size, softmax-normalized into a
//! per-sample attention map, and multiplied into the shared kernel before a
//! batch-independent convolution. The shared kernel is never overwritten,
//! so one layer serves every sample while still specializing per input.

use crate::error::{Error, Result};
use crate::tensor::{adaptive_avg_pool, conv2d, slice_sample, softmax_lastaxes, stack_samples, Tensor};

/// Parameters of one input-adaptive convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplainableConvParams {
    /// Shared kernel `[Cout, Cin/groups, Kh, Kw]`.
    pub weight: Tensor,
    /// Per-output-channel bias `[Cout]`.
    pub bias: Tensor,
    /// Learnable activation threshold.
    pub tau: f64,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Everything the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct ConvCache {
    /// Softmax attention per (sample, input channel), `[B, Cin, Kh, Kw]`.
    pub attention: Tensor,
    /// Modulated kernel per sample, each `[Cout, Cin/g, Kh, Kw]`.
    modulated: Vec<Tensor>,
    /// Forward input, kept for the weight gradient.
    input: Tensor,
    output_shape: Vec<usize>,
    fingerprint: ParamsFingerprint,
}

#[derive(Clone, Debug, PartialEq)]
struct ParamsFingerprint {
    weight_shape: Vec<usize>,
    stride: usize,
    padding: usize,
    groups: usize,
    tau_bits: u64,
}

fn fingerprint(p: &ExplainableConvParams) -> ParamsFingerprint {
    ParamsFingerprint {
        weight_shape: p.weight.shape().to_vec(),
        stride: p.stride,
        padding: p.padding,
        groups: p.groups,
        tau_bits: p.tau.to_bits(),
    }
}

/// Map an output channel and group-local input channel to the global input
/// channel whose attention modulates that kernel slice.
#[inline]
fn global_in_channel(oc: usize, cl: usize, cout_per_group: usize, cin_per_group: usize) -> usize {
    (oc / cout_per_group) * cin_per_group + cl
}

/// Forward pass. Returns the output and the cache for [`explainable_conv_backward`].
pub fn explainable_conv_forward(
    x: &Tensor,
    p: &ExplainableConvParams,
) -> Result<(Tensor, ConvCache)> {
    let (b, cin, _, _) = x.dims4("explainable conv input")?;
    let (cout, cin_per_group, kh, kw) = p.weight.dims4("explainable conv kernel")?;
    if p.groups == 0 || cin % p.groups != 0 || cin_per_group != cin / p.groups {
        return Err(Error::dim(
            "channel",
            format!(
                "input channels {cin}, groups {}, kernel expects {cin_per_group} per group",
                p.groups
            ),
        ));
    }
    let cout_per_group = cout / p.groups.max(1);

    // Binary activation mask: 1 exactly where x >= tau (ties activate).
    let mask = x.map(|v| if v >= p.tau { 1.0 } else { 0.0 });
    let pooled = adaptive_avg_pool(&mask, kh, kw)?;
    let attention = softmax_lastaxes(&pooled)?;
    // Normalization is a hard layer invariant, checked on every forward.
    for slab in attention.data().chunks(kh * kw) {
        let s: f64 = slab.iter().sum();
        assert!(
            (s - 1.0).abs() <= 1e-12,
            "attention slab sums to {s}, expected 1"
        );
    }

    let mut outputs = Vec::with_capacity(b);
    let mut modulated = Vec::with_capacity(b);
    for bi in 0..b {
        let mut wb = p.weight.clone();
        {
            let wd = wb.data_mut();
            for oc in 0..cout {
                for cl in 0..cin_per_group {
                    let gc = global_in_channel(oc, cl, cout_per_group, cin_per_group);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            wd[((oc * cin_per_group + cl) * kh + ky) * kw + kx] *=
                                attention.at4(bi, gc, ky, kx);
                        }
                    }
                }
            }
        }
        let xb = slice_sample(x, bi)?;
        outputs.push(conv2d(&xb, &wb, &p.bias, p.stride, p.padding, p.groups)?);
        modulated.push(wb);
    }
    let y = stack_samples(&outputs)?;
    let cache = ConvCache {
        attention,
        modulated,
        input: x.clone(),
        output_shape: y.shape().to_vec(),
        fingerprint: fingerprint(p),
    };
    Ok((y, cache))
}

/// Analytic backward pass for [`explainable_conv_forward`].
///
/// Returns `(grad_x, grad_weight, grad_bias)`. The hard mask is detached:
/// the attention map is treated as a constant of the forward input, and the
/// threshold receives no gradient (it is piecewise constant almost
/// everywhere).
pub fn explainable_conv_backward(
    grad_y: &Tensor,
    cache: &ConvCache,
    p: &ExplainableConvParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    if cache.fingerprint != fingerprint(p) {
        return Err(Error::StaleCache(
            "parameters changed since the cached forward".into(),
        ));
    }
    if grad_y.shape() != cache.output_shape.as_slice() {
        return Err(Error::StaleCache(format!(
            "output gradient shape {:?} does not match cached forward output {:?}",
            grad_y.shape(),
            cache.output_shape
        )));
    }
    let x = &cache.input;
    let (b, cin, h, w) = x.dims4("cached input")?;
    let (cout, cin_per_group, kh, kw) = p.weight.dims4("kernel")?;
    let (_, _, oh, ow) = grad_y.dims4("output gradient")?;
    let cout_per_group = cout / p.groups;

    let mut grad_bias = Tensor::zeros(&[cout]);
    let mut grad_x = Tensor::zeros(&[b, cin, h, w]);
    let mut grad_w = Tensor::zeros(&[cout, cin_per_group, kh, kw]);

    let gyd = grad_y.data();
    let xd = x.data();
    for bi in 0..b {
        let wb = cache.modulated[bi].data();
        // per-sample raw kernel gradient, folded through the attention below
        let mut grad_wb = vec![0.0f64; cout * cin_per_group * kh * kw];
        for oc in 0..cout {
            let g = oc / cout_per_group;
            for y in 0..oh {
                for z in 0..ow {
                    let go = gyd[((bi * cout + oc) * oh + y) * ow + z];
                    if go == 0.0 {
                        continue;
                    }
                    grad_bias.data_mut()[oc] += go;
                    for cl in 0..cin_per_group {
                        let ic = g * cin_per_group + cl;
                        for ky in 0..kh {
                            let iy = (y * p.stride + ky) as isize - p.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (z * p.stride + kx) as isize - p.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let widx = ((oc * cin_per_group + cl) * kh + ky) * kw + kx;
                                let xidx =
                                    ((bi * cin + ic) * h + iy as usize) * w + ix as usize;
                                grad_x.data_mut()[xidx] += go * wb[widx];
                                grad_wb[widx] += go * xd[xidx];
                            }
                        }
                    }
                }
            }
        }
        // chain rule through the modulation: dL/dW = sum_b dL/dW_b (*) A_b
        for oc in 0..cout {
            for cl in 0..cin_per_group {
                let gc = global_in_channel(oc, cl, cout_per_group, cin_per_group);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((oc * cin_per_group + cl) * kh + ky) * kw + kx;
                        grad_w.data_mut()[widx] +=
                            grad_wb[widx] * cache.attention.at4(bi, gc, ky, kx);
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w, grad_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::max_abs_diff;

    fn params_3x3(cout: usize, cin: usize, groups: usize, tau: f64, rng: &mut Rng) -> ExplainableConvParams {
        ExplainableConvParams {
            weight: Tensor::from_fn(&[cout, cin / groups, 3, 3], |_| rng.uniform(-1.0, 1.0)),
            bias: Tensor::from_fn(&[cout], |_| rng.uniform(-0.5, 0.5)),
            tau,
            stride: 1,
            padding: 1,
            groups,
        }
    }

    /// Step-by-step pipeline oracle: materialize mask, pooled mask,
    /// attention, and the modulated kernel with independent code.
    fn pipeline_oracle(x: &Tensor, p: &ExplainableConvParams) -> Tensor {
        let (b, cin, h, w) = x.dims4("x").unwrap();
        let (cout, cpg, kh, kw) = p.weight.dims4("w").unwrap();
        let cout_pg = cout / p.groups;
        let mut outs = Vec::new();
        for bi in 0..b {
            // mask + adaptive pooling + softmax, all computed longhand
            let mut att = vec![0.0f64; cin * kh * kw];
            for c in 0..cin {
                let mut pooled = vec![0.0f64; kh * kw];
                for i in 0..kh {
                    let h0 = i * h / kh;
                    let h1 = ((i + 1) * h + kh - 1) / kh;
                    for j in 0..kw {
                        let w0 = j * w / kw;
                        let w1 = ((j + 1) * w + kw - 1) / kw;
                        let mut acc = 0.0;
                        for y in h0..h1 {
                            for z in w0..w1 {
                                let v = x.at4(bi, c, y, z);
                                acc += if v >= p.tau { 1.0 } else { 0.0 };
                            }
                        }
                        pooled[i * kw + j] = acc / ((h1 - h0) * (w1 - w0)) as f64;
                    }
                }
                let denom: f64 = pooled.iter().map(|v| v.exp()).sum();
                for (k, &v) in pooled.iter().enumerate() {
                    att[c * kh * kw + k] = v.exp() / denom;
                }
            }
            // modulated kernel and plain convolution
            let wb = Tensor::from_fn(&[cout, cpg, kh, kw], |idx| {
                let kx = idx % kw;
                let ky = (idx / kw) % kh;
                let cl = (idx / (kw * kh)) % cpg;
                let oc = idx / (kw * kh * cpg);
                let gc = (oc / cout_pg) * cpg + cl;
                p.weight.data()[idx] * att[gc * kh * kw + ky * kw + kx]
            });
            let xb = slice_sample(x, bi).unwrap();
            outs.push(conv2d(&xb, &wb, &p.bias, p.stride, p.padding, p.groups).unwrap());
        }
        stack_samples(&outs).unwrap()
    }

    #[test]
    fn constant_input_reduces_to_scaled_conv() {
        let mut rng = Rng::seed_from_u64(60);
        let p = params_3x3(3, 2, 1, 0.0, &mut rng);
        for value in [0.7, -0.7] {
            let x = Tensor::full(&[1, 2, 6, 6], value);
            let (y, _) = explainable_conv_forward(&x, &p).unwrap();
            let scaled = ExplainableConvParams {
                weight: p.weight.scale(1.0 / 9.0),
                ..p.clone()
            };
            let expected =
                conv2d(&x, &scaled.weight, &p.bias, p.stride, p.padding, p.groups).unwrap();
            assert!(max_abs_diff(&y, &expected) <= 1e-12);
        }
    }

    #[test]
    fn identical_samples_get_identical_outputs() {
        let mut rng = Rng::seed_from_u64(61);
        let p = params_3x3(3, 2, 1, 0.4, &mut rng);
        let one = Tensor::from_fn(&[1, 2, 5, 5], |_| rng.next_f64());
        let two = stack_samples(&[one.clone(), one.clone()]).unwrap();
        let (y, _) = explainable_conv_forward(&two, &p).unwrap();
        let (y1, _) = explainable_conv_forward(&one, &p).unwrap();
        let plane = y1.len();
        assert_eq!(&y.data()[..plane], y1.data());
        assert_eq!(&y.data()[plane..], y1.data());
    }

    #[test]
    fn matches_pipeline_oracle() {
        let mut rng = Rng::seed_from_u64(62);
        let p = params_3x3(3, 2, 1, 0.5, &mut rng);
        let x = Tensor::from_fn(&[1, 2, 6, 6], |_| rng.next_f64());
        let (y, _) = explainable_conv_forward(&x, &p).unwrap();
        let o = pipeline_oracle(&x, &p);
        assert!(max_abs_diff(&y, &o) <= 1e-12);
    }

    #[test]
    fn grouped_matches_pipeline_oracle() {
        let mut rng = Rng::seed_from_u64(63);
        // depthwise: groups == channels
        let p = params_3x3(4, 4, 4, 0.5, &mut rng);
        let x = Tensor::from_fn(&[2, 4, 6, 6], |_| rng.next_f64());
        let (y, _) = explainable_conv_forward(&x, &p).unwrap();
        let o = pipeline_oracle(&x, &p);
        assert!(max_abs_diff(&y, &o) <= 1e-12);
    }

    #[test]
    fn mask_ties_activate() {
        // x == tau exactly: the mask entry is 1, not 0.
        let p = ExplainableConvParams {
            weight: Tensor::full(&[1, 1, 3, 3], 1.0),
            bias: Tensor::zeros(&[1]),
            tau: 0.25,
            stride: 1,
            padding: 1,
            groups: 1,
        };
        let x = Tensor::full(&[1, 1, 3, 3], 0.25);
        let (_, cache) = explainable_conv_forward(&x, &p).unwrap();
        // all-ones mask pools to 1 everywhere -> uniform attention
        for &a in cache.attention.data() {
            assert!((a - 1.0 / 9.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn changing_one_sample_leaves_others_untouched() {
        let mut rng = Rng::seed_from_u64(64);
        let p = params_3x3(2, 2, 1, 0.5, &mut rng);
        let s0 = Tensor::from_fn(&[1, 2, 5, 5], |_| rng.next_f64());
        let s1 = Tensor::from_fn(&[1, 2, 5, 5], |_| rng.next_f64());
        let s1_alt = Tensor::from_fn(&[1, 2, 5, 5], |_| rng.next_f64());
        let (y_a, _) =
            explainable_conv_forward(&stack_samples(&[s0.clone(), s1]).unwrap(), &p).unwrap();
        let (y_b, _) =
            explainable_conv_forward(&stack_samples(&[s0, s1_alt]).unwrap(), &p).unwrap();
        let plane = y_a.len() / 2;
        assert_eq!(&y_a.data()[..plane], &y_b.data()[..plane]);
        assert_ne!(&y_a.data()[plane..], &y_b.data()[plane..]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = Rng::seed_from_u64(65);
        let p = params_3x3(3, 2, 1, 0.5, &mut rng);
        let x = Tensor::from_fn(&[1, 2, 5, 5], |_| rng.next_f64());
        let (y, cache) = explainable_conv_forward(&x, &p).unwrap();
        let gy = Tensor::zeros(y.shape());
        let (gx, gw, gb) = explainable_conv_backward(&gy, &cache, &p).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        assert_eq!(gw.max_abs(), 0.0);
        assert_eq!(gb.max_abs(), 0.0);
    }

    #[test]
    fn uniform_attention_weight_grad_is_scaled_conv_grad() {
        // Constant-sign input -> uniform attention -> grad_W must equal the
        // plain convolution weight gradient divided by Kh*Kw.
        let mut rng = Rng::seed_from_u64(66);
        let p = params_3x3(2, 2, 1, 0.0, &mut rng);
        let x = Tensor::full(&[1, 2, 5, 5], 0.8);
        let (y, cache) = explainable_conv_forward(&x, &p).unwrap();
        let gy = Tensor::from_fn(y.shape(), |_| rng.uniform(-1.0, 1.0));
        let (_, gw, _) = explainable_conv_backward(&gy, &cache, &p).unwrap();
        // plain conv weight grad by direct accumulation
        let (cout, cpg, kh, kw) = p.weight.dims4("w").unwrap();
        let mut plain = Tensor::zeros(&[cout, cpg, kh, kw]);
        let (_, cin, h, w) = x.dims4("x").unwrap();
        let (_, _, oh, ow) = gy.dims4("gy").unwrap();
        for oc in 0..cout {
            for cl in 0..cpg {
                let ic = cl % cin;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for yy in 0..oh {
                            for zz in 0..ow {
                                let iy = (yy + ky) as isize - 1;
                                let ix = (zz + kx) as isize - 1;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += gy.at4(0, oc, yy, zz)
                                        * x.at4(0, ic, iy as usize, ix as usize);
                                }
                            }
                        }
                        plain.data_mut()[((oc * cpg + cl) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
        assert!(max_abs_diff(&gw, &plain.scale(1.0 / 9.0)) <= 1e-12);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = Rng::seed_from_u64(67);
        let p = params_3x3(2, 2, 1, 0.5, &mut rng);
        let x = Tensor::from_fn(&[1, 2, 5, 5], |_| rng.next_f64());
        let (y, cache) = explainable_conv_forward(&x, &p).unwrap();
        let gy = Tensor::zeros(y.shape());
        let altered = ExplainableConvParams { tau: 0.75, ..p.clone() };
        match explainable_conv_backward(&gy, &cache, &altered) {
            Err(Error::StaleCache(_)) => {}
            other => panic!("expected stale-cache error, got {other:?}"),
        }
        let wrong_shape = Tensor::zeros(&[1, 2, 4, 4]);
        match explainable_conv_backward(&wrong_shape, &cache, &p) {
            Err(Error::StaleCache(_)) => {}
            other => panic!("expected stale-cache error, got {other:?}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Directional loss L = <G, f(X)>; inputs stay clear of tau so the
        // detached mask is locally constant and central differences are
        // exact up to O(h^2).
        let mut rng = Rng::seed_from_u64(68);
        let p = params_3x3(3, 2, 1, 0.5, &mut rng);
        let x = Tensor::from_fn(&[1, 2, 5, 5], |_| {
            let side = if rng.next_f64() < 0.5 { -0.3 } else { 0.3 };
            0.5 + side + rng.uniform(-0.1, 0.1)
        });
        let (y, cache) = explainable_conv_forward(&x, &p).unwrap();
        let gy = Tensor::from_fn(y.shape(), |_| rng.uniform(-1.0, 1.0));
        let (gx, gw, gb) = explainable_conv_backward(&gy, &cache, &p).unwrap();

        let h = 1e-5;
        let loss = |pp: &ExplainableConvParams, xx: &Tensor| -> f64 {
            let (yy, _) = explainable_conv_forward(xx, pp).unwrap();
            yy.dot(&gy).unwrap()
        };
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);

        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
            assert!(rel(fd, gx.data()[idx]) <= 1e-4, "grad_x[{idx}]: fd {fd} vs {}", gx.data()[idx]);
        }
        for idx in 0..p.weight.len() {
            let mut pp = p.clone();
            pp.weight.data_mut()[idx] += h;
            let mut pm = p.clone();
            pm.weight.data_mut()[idx] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            assert!(rel(fd, gw.data()[idx]) <= 1e-4, "grad_w[{idx}]: fd {fd} vs {}", gw.data()[idx]);
        }
        for idx in 0..p.bias.len() {
            let mut pp = p.clone();
            pp.bias.data_mut()[idx] += h;
            let mut pm = p.clone();
            pm.bias.data_mut()[idx] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            assert!(rel(fd, gb.data()[idx]) <= 1e-4, "grad_b[{idx}]: fd {fd} vs {}", gb.data()[idx]);
        }
    }
}
