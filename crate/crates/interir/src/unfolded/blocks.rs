//! Network building blocks: the gated block built around the
//! input-adaptive convolution, the small rectified convolution stack, and
//! the three per-iteration modules (image update, degradation-matrix
//! update, multiplier update).

use crate::error::{Error, Result};
use crate::tensor::{
    channel_matmul, channel_transpose, concat_channels, conv2d, split_channels_half, Tensor,
};
use crate::unfolded::conv::{explainable_conv_forward, ExplainableConvParams};

const LAYER_NORM_EPS: f64 = 1e-6;

/// 1x1 convolution parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseConv {
    /// `[Cout, Cin, 1, 1]`
    pub weight: Tensor,
    /// `[Cout]`
    pub bias: Tensor,
}

impl PointwiseConv {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, &self.bias, 1, 0, 1)
    }
}

/// Per-channel affine layer normalization over the channel axis at each
/// spatial location.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    /// `[C]` scale
    pub gamma: Tensor,
    /// `[C]` shift
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4("layer norm input")?;
        if self.gamma.shape() != [c] || self.beta.shape() != [c] {
            return Err(Error::dim(
                "channel",
                format!("layer norm parameters sized for {:?}, input has {c} channels", self.gamma.shape()),
            ));
        }
        let plane = h * w;
        let xd = x.data();
        let mut out = Tensor::zeros(&[b, c, h, w]);
        let od = out.data_mut();
        for bi in 0..b {
            for s in 0..plane {
                let mut mean = 0.0;
                for ch in 0..c {
                    mean += xd[(bi * c + ch) * plane + s];
                }
                mean /= c as f64;
                let mut var = 0.0;
                for ch in 0..c {
                    let d = xd[(bi * c + ch) * plane + s] - mean;
                    var += d * d;
                }
                var /= c as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for ch in 0..c {
                    let idx = (bi * c + ch) * plane + s;
                    od[idx] = self.gamma.data()[ch] * (xd[idx] - mean) * inv
                        + self.beta.data()[ch];
                }
            }
        }
        Ok(out)
    }
}

/// Split the channels in half and multiply the halves elementwise.
pub fn simple_gate(x: &Tensor) -> Result<Tensor> {
    let (lo, hi) = split_channels_half(x)?;
    lo.mul_elem(&hi)
}

/// Simplified channel attention: global average pool, a pointwise map on
/// the pooled vector, then a per-channel scale of the input.
fn channel_attention(x: &Tensor, map: &PointwiseConv) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4("channel attention input")?;
    let pooled = crate::tensor::adaptive_avg_pool(x, 1, 1)?;
    let scales = map.apply(&pooled)?; // [B, C, 1, 1]
    let plane = h * w;
    let mut out = x.clone();
    let od = out.data_mut();
    for bi in 0..b {
        for ch in 0..c {
            let s = scales.at4(bi, ch, 0, 0);
            for k in 0..plane {
                od[(bi * c + ch) * plane + k] *= s;
            }
        }
    }
    Ok(out)
}

/// Parameters of the gated block. Both halves add their branch back to the
/// running value through a learnable scalar scale, so a freshly seeded
/// block (scales zero) is the identity map.
#[derive(Clone, Debug, PartialEq)]
pub struct EpBlockParams {
    pub ln1: LayerNorm,
    /// C -> 2C
    pub expand1: PointwiseConv,
    /// depthwise 3x3 over 2C channels
    pub dwconv: ExplainableConvParams,
    /// C -> C map on the pooled vector
    pub sca: PointwiseConv,
    /// C -> C
    pub project1: PointwiseConv,
    pub scale1: f64,
    pub ln2: LayerNorm,
    /// C -> 2C
    pub expand2: PointwiseConv,
    /// C -> C
    pub project2: PointwiseConv,
    pub scale2: f64,
}

/// Gated block: norm -> expand -> adaptive depthwise conv -> gate ->
/// channel attention -> project -> scaled residual, then norm -> expand ->
/// gate -> project -> scaled residual.
pub fn ep_block(x: &Tensor, p: &EpBlockParams) -> Result<Tensor> {
    let n1 = p.ln1.apply(x)?;
    let e1 = p.expand1.apply(&n1)?;
    let (d1, _) = explainable_conv_forward(&e1, &p.dwconv)?;
    let g1 = simple_gate(&d1)?;
    let a1 = channel_attention(&g1, &p.sca)?;
    let p1 = p.project1.apply(&a1)?;
    let mid = x.add(&p1.scale(p.scale1))?;

    let n2 = p.ln2.apply(&mid)?;
    let e2 = p.expand2.apply(&n2)?;
    let g2 = simple_gate(&e2)?;
    let p2 = p.project2.apply(&g2)?;
    mid.add(&p2.scale(p.scale2))
}

/// Two channel-preserving 3x3 convolutions, each followed by rectification.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvsParams {
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
}

pub fn convs(x: &Tensor, p: &ConvsParams) -> Result<Tensor> {
    let a = conv2d(x, &p.conv1_weight, &p.conv1_bias, 1, 1, 1)?.relu();
    Ok(conv2d(&a, &p.conv2_weight, &p.conv2_bias, 1, 1, 1)?.relu())
}

/// Batched per-channel matmul: `[B, C, M, K] x [B, C, K, N] -> [B, C, M, N]`.
pub fn bmm(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    let (b, c, m, k) = lhs.dims4("bmm lhs")?;
    let (b2, c2, k2, n) = rhs.dims4("bmm rhs")?;
    if b != b2 || c != c2 {
        return Err(Error::dim(
            "batch",
            format!("bmm on {:?} vs {:?}", lhs.shape(), rhs.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[b, c, m, n]);
    for bi in 0..b {
        let l = Tensor::new(&[c, m, k], lhs.data()[bi * c * m * k..(bi + 1) * c * m * k].to_vec())?;
        let r = Tensor::new(
            &[c, k2, n],
            rhs.data()[bi * c * k2 * n..(bi + 1) * c * k2 * n].to_vec(),
        )?;
        let y = channel_matmul(&l, &r)?;
        out.data_mut()[bi * c * m * n..(bi + 1) * c * m * n].copy_from_slice(y.data());
    }
    Ok(out)
}

/// Batched per-channel transpose of the trailing two axes.
pub fn btranspose(x: &Tensor) -> Result<Tensor> {
    let (b, c, m, n) = x.dims4("btranspose")?;
    let mut out = Tensor::zeros(&[b, c, n, m]);
    for bi in 0..b {
        let s = Tensor::new(&[c, m, n], x.data()[bi * c * m * n..(bi + 1) * c * m * n].to_vec())?;
        let t = channel_transpose(&s)?;
        out.data_mut()[bi * c * m * n..(bi + 1) * c * m * n].copy_from_slice(t.data());
    }
    Ok(out)
}

/// Image-update module parameters: a learnable mixing weight, one
/// rectified convolution stack (shared by both uses of the same argument),
/// and one gated block per call site.
#[derive(Clone, Debug, PartialEq)]
pub struct ResmParams {
    pub w_kappa: f64,
    pub convs: ConvsParams,
    /// applied to the incoming image estimate
    pub ep_i: EpBlockParams,
    /// applied to the residual mixture
    pub ep_sum: EpBlockParams,
    /// applied to the gate complement
    pub ep_gate: EpBlockParams,
    /// applied to the residual itself
    pub ep_f: EpBlockParams,
}

/// One learned image update.
///
/// With per-sample matrix stacks `A [B, C, Hd, Hd]` and `B [B, C, Wd, Wd]`:
///
/// ```text
/// F = A^T (D - A I B) B^T + EP(EP(I) + L + w_k * Convs(L + EP(I)))
/// H = A^T A F B B^T + EP(1 - Convs(L + EP(I))) (*) EP(F)
/// I' = I - eta * H
/// ```
pub fn resm(
    i_prev: &Tensor,
    a: &Tensor,
    b: &Tensor,
    lambda: &Tensor,
    d_feat: &Tensor,
    eta: f64,
    p: &ResmParams,
) -> Result<Tensor> {
    let at = btranspose(a)?;
    let bt = btranspose(b)?;
    let ei = ep_block(i_prev, &p.ep_i)?;
    let mix = lambda.add(&ei)?;
    let cv = convs(&mix, &p.convs)?;

    let residual = d_feat.sub(&bmm(&bmm(a, i_prev)?, b)?)?;
    let data_term = bmm(&bmm(&at, &residual)?, &bt)?;
    let f = data_term.add(&ep_block(&ei.add(lambda)?.add(&cv.scale(p.w_kappa))?, &p.ep_sum)?)?;

    let ones = Tensor::full(cv.shape(), 1.0);
    let gate = ep_block(&ones.sub(&cv)?, &p.ep_gate)?;
    let curvature = bmm(&bmm(&bmm(&at, a)?, &f)?, &bmm(b, &bt)?)?;
    let h = curvature.add(&gate.mul_elem(&ep_block(&f, &p.ep_f)?)?)?;

    i_prev.sub(&h.scale(eta))
}

/// Degradation-matrix update parameters: one gated block per factor, each
/// operating on the channel concatenation with the downsampled observation.
#[derive(Clone, Debug, PartialEq)]
pub struct DmumParams {
    /// gated block over 2C channels for the left factor
    pub ep_a: EpBlockParams,
    /// gated block over 2C channels for the right factor
    pub ep_b: EpBlockParams,
}

/// Update both degradation factors from the current image estimate.
///
/// The left factor comes from splitting `EP(Concat(I B, D))` and taking the
/// normalized per-channel outer product `A0 A1^T`; the right factor from
/// `EP(Concat(A' I, D))` via `B0^T B1`. Each factor is normalized to unit
/// Frobenius norm per channel (identity fallback when the product vanishes).
pub fn dmum(
    i_new: &Tensor,
    b_prev: &Tensor,
    d_feat: &Tensor,
    p: &DmumParams,
) -> Result<(Tensor, Tensor)> {
    let ib = bmm(i_new, b_prev)?;
    let t = ep_block(&concat_channels(&ib, d_feat)?, &p.ep_a)?;
    let (a0, a1) = split_channels_half(&t)?;
    let a_new = normalized_product(&a0, &btranspose(&a1)?)?;

    let ai = bmm(&a_new, i_new)?;
    let u = ep_block(&concat_channels(&ai, d_feat)?, &p.ep_b)?;
    let (b0, b1) = split_channels_half(&u)?;
    let b_new = normalized_product(&btranspose(&b0)?, &b1)?;
    Ok((a_new, b_new))
}

/// Per-(sample, channel) matrix product normalized to unit Frobenius norm,
/// with the identity substituted when the product vanishes.
fn normalized_product(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    let mut prod = bmm(lhs, rhs)?;
    let (b, c, m, n) = prod.dims4("normalized product")?;
    if m != n {
        return Err(Error::dim(
            "matrix",
            format!("normalized product must be square, got {m}x{n}"),
        ));
    }
    let slab = m * n;
    for chunk in prod.data_mut().chunks_mut(slab) {
        let norm: f64 = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= f64::MIN_POSITIVE || !norm.is_finite() {
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = if k % (n + 1) == 0 { 1.0 } else { 0.0 };
            }
        } else {
            for v in chunk.iter_mut() {
                *v /= norm;
            }
        }
    }
    debug_assert_eq!(b * c * slab, prod.len());
    Ok(prod)
}

/// Multiplier-update parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MumParams {
    pub ep: EpBlockParams,
    pub convs: ConvsParams,
}

/// Learned multiplier update: `L' = L + EP(I) - Convs(L + EP(I))`.
pub fn mum(lambda_prev: &Tensor, i_new: &Tensor, p: &MumParams) -> Result<Tensor> {
    let e = ep_block(i_new, &p.ep)?;
    let mix = lambda_prev.add(&e)?;
    lambda_prev.add(&e)?.sub(&convs(&mix, &p.convs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::max_abs_diff;
    use crate::unfolded::{seed_model, zero_ep_block, zero_resm};

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn layer_norm_normalizes_channels() {
        let mut rng = Rng::seed_from_u64(70);
        let x = random_tensor(&[1, 8, 3, 3], &mut rng);
        let ln = LayerNorm {
            gamma: Tensor::full(&[8], 1.0),
            beta: Tensor::zeros(&[8]),
        };
        let y = ln.apply(&x).unwrap();
        for s in 0..9 {
            let mut mean = 0.0;
            for c in 0..8 {
                mean += y.at4(0, c, s / 3, s % 3);
            }
            mean /= 8.0;
            assert!(mean.abs() <= 1e-12);
        }
    }

    #[test]
    fn simple_gate_splits_and_multiplies() {
        let x = Tensor::new(&[1, 2, 1, 2], vec![2.0, 3.0, 5.0, 7.0]).unwrap();
        let y = simple_gate(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[10.0, 21.0]);
        let odd = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(simple_gate(&odd).is_err());
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut rng = Rng::seed_from_u64(71);
        let x = random_tensor(&[2, 8, 4, 4], &mut rng);
        let p = zero_ep_block(8);
        let y = ep_block(&x, &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn seeded_block_with_zero_scales_is_identity() {
        let mut rng = Rng::seed_from_u64(72);
        let model = seed_model(1, 8, 99).unwrap();
        let x = random_tensor(&[1, 8, 4, 4], &mut rng);
        let y = ep_block(&x, &model.init_block).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = Rng::seed_from_u64(73);
        let mut p = zero_ep_block(8);
        p.scale1 = 0.3;
        p.scale2 = 0.2;
        p.expand1.weight = random_tensor(&[16, 8, 1, 1], &mut rng);
        p.dwconv.weight = random_tensor(&[16, 1, 3, 3], &mut rng);
        p.sca.weight = random_tensor(&[8, 8, 1, 1], &mut rng);
        p.project1.weight = random_tensor(&[8, 8, 1, 1], &mut rng);
        p.expand2.weight = random_tensor(&[16, 8, 1, 1], &mut rng);
        p.project2.weight = random_tensor(&[8, 8, 1, 1], &mut rng);
        let x = random_tensor(&[2, 8, 5, 6], &mut rng);
        let y = ep_block(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.all_finite());
    }

    #[test]
    fn convs_rectifies() {
        let mut rng = Rng::seed_from_u64(74);
        let p = ConvsParams {
            conv1_weight: random_tensor(&[4, 4, 3, 3], &mut rng),
            conv1_bias: random_tensor(&[4], &mut rng),
            conv2_weight: random_tensor(&[4, 4, 3, 3], &mut rng),
            conv2_bias: random_tensor(&[4], &mut rng),
        };
        let x = random_tensor(&[1, 4, 4, 4], &mut rng);
        let y = convs(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn resm_eta_zero_is_identity() {
        let mut rng = Rng::seed_from_u64(75);
        let model = seed_model(1, 8, 5).unwrap();
        let p = &model.ipblocks[0].resm;
        let i = random_tensor(&[1, 8, 4, 4], &mut rng);
        let a = Tensor::from_fn(&[1, 8, 4, 4], |_| rng.uniform(-0.3, 0.3));
        let b = Tensor::from_fn(&[1, 8, 4, 4], |_| rng.uniform(-0.3, 0.3));
        let lambda = random_tensor(&[1, 8, 4, 4], &mut rng);
        let d = random_tensor(&[1, 8, 4, 4], &mut rng);
        let y = resm(&i, &a, &b, &lambda, &d, 0.0, p).unwrap();
        assert!(max_abs_diff(&y, &i) <= 1e-15);
        let moved = resm(&i, &a, &b, &lambda, &d, 0.01, p).unwrap();
        assert_eq!(moved.shape(), i.shape());
    }

    #[test]
    fn resm_zero_weights_match_transcription() {
        // All learned weights zero, A = B = identity stacks, L = 0,
        // w_k = 0: every gated block reduces to the identity, the
        // convolution stack to zero, so
        //   F = (D - I) + I = D, H = F + 1 (*) F = 2F, I' = I - 2 eta D.
        let mut rng = Rng::seed_from_u64(76);
        let c = 4;
        let n = 3;
        let p = zero_resm(c);
        let i = random_tensor(&[1, c, n, n], &mut rng);
        let d = random_tensor(&[1, c, n, n], &mut rng);
        let lambda = Tensor::zeros(&[1, c, n, n]);
        let ident = {
            let one = Tensor::channel_identity(c, n);
            Tensor::new(&[1, c, n, n], one.data().to_vec()).unwrap()
        };
        let eta = 0.01;
        let got = resm(&i, &ident, &ident, &lambda, &d, eta, &p).unwrap();
        let expected = i.sub(&d.scale(2.0 * eta)).unwrap();
        assert!(max_abs_diff(&got, &expected) <= 1e-12);
    }

    #[test]
    fn dmum_shapes_and_normalization() {
        let mut rng = Rng::seed_from_u64(77);
        let model = seed_model(1, 8, 6).unwrap();
        let p = &model.ipblocks[0].dmum;
        let (hd, wd) = (4, 5);
        let i = random_tensor(&[1, 8, hd, wd], &mut rng);
        let b_prev = random_tensor(&[1, 8, wd, wd], &mut rng);
        let d = random_tensor(&[1, 8, hd, wd], &mut rng);
        let (a_new, b_new) = dmum(&i, &b_prev, &d, p).unwrap();
        assert_eq!(a_new.shape(), &[1, 8, hd, hd]);
        assert_eq!(b_new.shape(), &[1, 8, wd, wd]);
        for chunk in a_new.data().chunks(hd * hd) {
            let norm: f64 = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-12);
        }
        for chunk in b_new.data().chunks(wd * wd) {
            let norm: f64 = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mum_zero_network_keeps_multiplier() {
        let mut rng = Rng::seed_from_u64(78);
        let c = 4;
        let p = MumParams {
            ep: zero_ep_block(c),
            convs: ConvsParams {
                conv1_weight: Tensor::zeros(&[c, c, 3, 3]),
                conv1_bias: Tensor::zeros(&[c]),
                conv2_weight: Tensor::zeros(&[c, c, 3, 3]),
                conv2_bias: Tensor::zeros(&[c]),
            },
        };
        // zero image flows through the identity block as zero, and the
        // zero convolution stack contributes nothing
        let lambda = random_tensor(&[1, c, 4, 4], &mut rng);
        let i_zero = Tensor::zeros(&[1, c, 4, 4]);
        let out = mum(&lambda, &i_zero, &p).unwrap();
        assert!(max_abs_diff(&out, &lambda) <= 1e-15);

        let i = random_tensor(&[1, c, 4, 4], &mut rng);
        let out = mum(&lambda, &i, &p).unwrap();
        assert_eq!(out.shape(), lambda.shape());
    }
}
