//! The block-unrolled restoration network.
//!
//! The degraded image is losslessly downsampled 4x by space-to-depth, an
//! init block produces the multiplier and normalized Gram factors, and a
//! stack of iteration blocks (image update, degradation-matrix update,
//! multiplier update) refines the estimate. A final image update, a
//! pointwise projection, and depth-to-space produce a full-resolution
//! residual that is added onto the input.

pub mod blocks;
pub mod conv;
pub mod weights;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::{pixel_shuffle, pixel_unshuffle, Tensor};
use blocks::{
    dmum, ep_block, mum, resm, ConvsParams, DmumParams, EpBlockParams, LayerNorm, MumParams,
    PointwiseConv, ResmParams,
};
use conv::ExplainableConvParams;

/// Space-to-depth factor between image space and feature space.
pub const DOWNSAMPLE: usize = 4;
/// Feature channels for a 3-channel input after 4x space-to-depth.
pub const FEATURE_CHANNELS: usize = 3 * DOWNSAMPLE * DOWNSAMPLE;
pub const DEFAULT_BLOCKS: usize = 16;
pub const DEFAULT_ETA: f64 = 0.01;
const DEFAULT_W_KAPPA: f64 = 0.1;

/// One unrolled iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IpBlockParams {
    pub resm: ResmParams,
    pub dmum: DmumParams,
    pub mum: MumParams,
}

/// Ordered parameter collection for the whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldedModel {
    pub init_block: EpBlockParams,
    pub ipblocks: Vec<IpBlockParams>,
    pub final_resm: ResmParams,
    /// Pointwise projection of the final feature stack.
    pub out_proj: PointwiseConv,
    /// Feature channel count (48 for RGB input).
    pub channels: usize,
    /// Step size of every image update.
    pub eta: f64,
}

impl UnfoldedModel {
    pub fn n(&self) -> usize {
        self.ipblocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ipblocks.is_empty() {
            return Err(Error::InvalidArgument(
                "model needs at least one iteration block".into(),
            ));
        }
        for (name, t) in weights::model_entries(self) {
            if !t.all_finite() {
                return Err(Error::Numerical {
                    iter: 0,
                    detail: format!("parameter {name} contains non-finite values"),
                });
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        weights::model_entries(self).iter().map(|(_, t)| t.len()).sum()
    }
}

/// Initialization of the unrolled iteration from a `[B, 3, H, W]` image
/// whose extents are divisible by 4: the estimate starts at the
/// space-to-depth features, the multiplier at `EP(I0) + I0`, and the
/// degradation factors at the per-channel normalized Gram matrices.
pub fn init_unfolded(d: &Tensor, model: &UnfoldedModel) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let (b, _, h, w) = d.dims4("network input")?;
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(Error::dim(
            "height",
            format!("input {h}x{w} not divisible by {DOWNSAMPLE}; pad before calling"),
        ));
    }
    let i0 = pixel_unshuffle(d, DOWNSAMPLE)?;
    let lambda0 = ep_block(&i0, &model.init_block)?.add(&i0)?;
    let (_, c, hd, wd) = i0.dims4("features")?;
    let mut a0 = Tensor::zeros(&[b, c, hd, hd]);
    let mut b0 = Tensor::zeros(&[b, c, wd, wd]);
    for bi in 0..b {
        let sample = Tensor::new(
            &[c, hd, wd],
            i0.data()[bi * c * hd * wd..(bi + 1) * c * hd * wd].to_vec(),
        )?;
        let (left, right, _) = crate::solver::gram_init(&sample)?;
        a0.data_mut()[bi * c * hd * hd..(bi + 1) * c * hd * hd].copy_from_slice(left.data());
        b0.data_mut()[bi * c * wd * wd..(bi + 1) * c * wd * wd].copy_from_slice(right.data());
    }
    Ok((i0, lambda0, a0, b0))
}

/// Network forward over a `[B, 3, H, W]` tensor in [0, 1]. Inputs whose
/// extents are not divisible by 4 are mirror-padded and the output cropped
/// back. Output is the clamped sum of the input and the predicted residual.
pub fn forward_batch(model: &UnfoldedModel, d: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = d.dims4("network input")?;
    if c != 3 {
        return Err(Error::InvalidChannels { expected: 3, got: c });
    }
    if model.channels != FEATURE_CHANNELS {
        return Err(Error::InvalidArgument(format!(
            "model built for {} feature channels, RGB input needs {FEATURE_CHANNELS}",
            model.channels
        )));
    }
    let pad_h = (DOWNSAMPLE - h % DOWNSAMPLE) % DOWNSAMPLE;
    let pad_w = (DOWNSAMPLE - w % DOWNSAMPLE) % DOWNSAMPLE;
    let padded = if pad_h == 0 && pad_w == 0 {
        d.clone()
    } else {
        mirror_pad(d, pad_h, pad_w)?
    };

    let (mut i, mut lambda, mut a, mut b) = init_unfolded(&padded, model)?;
    let d_feat = i.clone();
    for block in &model.ipblocks {
        i = resm(&i, &a, &b, &lambda, &d_feat, model.eta, &block.resm)?;
        let (a_new, b_new) = dmum(&i, &b, &d_feat, &block.dmum)?;
        a = a_new;
        b = b_new;
        lambda = mum(&lambda, &i, &block.mum)?;
    }
    i = resm(&i, &a, &b, &lambda, &d_feat, model.eta, &model.final_resm)?;
    let projected = model.out_proj.apply(&i)?;
    let residual = pixel_shuffle(&projected, DOWNSAMPLE)?;
    let restored = padded.add(&residual)?.clamp01();
    restored.assert_finite("network output")?;
    crop(&restored, h, w)
}

/// Restore a single image.
pub fn forward(model: &UnfoldedModel, d: &Image) -> Result<Image> {
    if d.channels() != 3 {
        return Err(Error::InvalidChannels {
            expected: 3,
            got: d.channels(),
        });
    }
    Image::from_tensor_clamped(forward_batch(model, d.pixels())?)
}

/// Mirror-pad the bottom/right spatial borders (symmetric, edge included).
fn mirror_pad(x: &Tensor, pad_h: usize, pad_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4("mirror_pad")?;
    let (nh, nw) = (h + pad_h, w + pad_w);
    let mut out = Tensor::zeros(&[b, c, nh, nw]);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..nh {
                let sy = if y < h { y } else { h - 1 - (y - h).min(h - 1) };
                for z in 0..nw {
                    let sx = if z < w { z } else { w - 1 - (z - w).min(w - 1) };
                    out.data_mut()[((bi * c + ci) * nh + y) * nw + z] = x.at4(bi, ci, sy, sx);
                }
            }
        }
    }
    Ok(out)
}

fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, c, hh, ww) = x.dims4("crop")?;
    if hh == h && ww == w {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for z in 0..w {
                    out.data_mut()[((bi * c + ci) * h + y) * w + z] = x.at4(bi, ci, y, z);
                }
            }
        }
    }
    Ok(out)
}

// Parameter construction --------------------------------------------------

/// Gated block with every parameter zero: the exact identity map.
pub fn zero_ep_block(c: usize) -> EpBlockParams {
    EpBlockParams {
        ln1: LayerNorm {
            gamma: Tensor::zeros(&[c]),
            beta: Tensor::zeros(&[c]),
        },
        expand1: PointwiseConv {
            weight: Tensor::zeros(&[2 * c, c, 1, 1]),
            bias: Tensor::zeros(&[2 * c]),
        },
        dwconv: ExplainableConvParams {
            weight: Tensor::zeros(&[2 * c, 1, 3, 3]),
            bias: Tensor::zeros(&[2 * c]),
            tau: 0.0,
            stride: 1,
            padding: 1,
            groups: 2 * c,
        },
        sca: PointwiseConv {
            weight: Tensor::zeros(&[c, c, 1, 1]),
            bias: Tensor::zeros(&[c]),
        },
        project1: PointwiseConv {
            weight: Tensor::zeros(&[c, c, 1, 1]),
            bias: Tensor::zeros(&[c]),
        },
        scale1: 0.0,
        ln2: LayerNorm {
            gamma: Tensor::zeros(&[c]),
            beta: Tensor::zeros(&[c]),
        },
        expand2: PointwiseConv {
            weight: Tensor::zeros(&[2 * c, c, 1, 1]),
            bias: Tensor::zeros(&[2 * c]),
        },
        project2: PointwiseConv {
            weight: Tensor::zeros(&[c, c, 1, 1]),
            bias: Tensor::zeros(&[c]),
        },
        scale2: 0.0,
    }
}

pub(crate) fn zero_convs(c: usize) -> ConvsParams {
    ConvsParams {
        conv1_weight: Tensor::zeros(&[c, c, 3, 3]),
        conv1_bias: Tensor::zeros(&[c]),
        conv2_weight: Tensor::zeros(&[c, c, 3, 3]),
        conv2_bias: Tensor::zeros(&[c]),
    }
}

/// Image-update module with every parameter zero (and zero mixing weight).
pub fn zero_resm(c: usize) -> ResmParams {
    ResmParams {
        w_kappa: 0.0,
        convs: zero_convs(c),
        ep_i: zero_ep_block(c),
        ep_sum: zero_ep_block(c),
        ep_gate: zero_ep_block(c),
        ep_f: zero_ep_block(c),
    }
}

/// Fully zeroed model: the network output equals its input exactly.
pub fn zero_model(n: usize, channels: usize) -> UnfoldedModel {
    UnfoldedModel {
        init_block: zero_ep_block(channels),
        ipblocks: (0..n)
            .map(|_| IpBlockParams {
                resm: zero_resm(channels),
                dmum: DmumParams {
                    ep_a: zero_ep_block(2 * channels),
                    ep_b: zero_ep_block(2 * channels),
                },
                mum: MumParams {
                    ep: zero_ep_block(channels),
                    convs: zero_convs(channels),
                },
            })
            .collect(),
        final_resm: zero_resm(channels),
        out_proj: PointwiseConv {
            weight: Tensor::zeros(&[channels, channels, 1, 1]),
            bias: Tensor::zeros(&[channels]),
        },
        channels,
        eta: DEFAULT_ETA,
    }
}

struct Seeder {
    rng: Rng,
}

impl Seeder {
    /// Fan-in scaled normal draw (std = sqrt(2 / fan_in)) for a conv
    /// weight of the given shape; biases stay zero.
    fn conv_weight(&mut self, shape: &[usize]) -> Tensor {
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| std * self.rng.next_gaussian())
    }

    fn pointwise(&mut self, cout: usize, cin: usize) -> PointwiseConv {
        PointwiseConv {
            weight: self.conv_weight(&[cout, cin, 1, 1]),
            bias: Tensor::zeros(&[cout]),
        }
    }

    fn ep_block(&mut self, c: usize) -> EpBlockParams {
        EpBlockParams {
            ln1: LayerNorm {
                gamma: Tensor::full(&[c], 1.0),
                beta: Tensor::zeros(&[c]),
            },
            expand1: self.pointwise(2 * c, c),
            dwconv: ExplainableConvParams {
                weight: self.conv_weight(&[2 * c, 1, 3, 3]),
                bias: Tensor::zeros(&[2 * c]),
                tau: 0.0,
                stride: 1,
                padding: 1,
                groups: 2 * c,
            },
            sca: self.pointwise(c, c),
            project1: self.pointwise(c, c),
            scale1: 0.0,
            ln2: LayerNorm {
                gamma: Tensor::full(&[c], 1.0),
                beta: Tensor::zeros(&[c]),
            },
            expand2: self.pointwise(2 * c, c),
            project2: self.pointwise(c, c),
            scale2: 0.0,
        }
    }

    fn convs(&mut self, c: usize) -> ConvsParams {
        ConvsParams {
            conv1_weight: self.conv_weight(&[c, c, 3, 3]),
            conv1_bias: Tensor::zeros(&[c]),
            conv2_weight: self.conv_weight(&[c, c, 3, 3]),
            conv2_bias: Tensor::zeros(&[c]),
        }
    }

    fn resm(&mut self, c: usize) -> ResmParams {
        ResmParams {
            w_kappa: DEFAULT_W_KAPPA,
            convs: self.convs(c),
            ep_i: self.ep_block(c),
            ep_sum: self.ep_block(c),
            ep_gate: self.ep_block(c),
            ep_f: self.ep_block(c),
        }
    }
}

/// Deterministically seeded, untrained model: fan-in scaled normal weights,
/// zero residual scales (every gated block starts as the identity), zero
/// thresholds, and the default step size.
pub fn seed_model(n: usize, channels: usize, seed: u64) -> Result<UnfoldedModel> {
    if n == 0 {
        return Err(Error::InvalidArgument("block count must be >= 1".into()));
    }
    if channels == 0 {
        return Err(Error::InvalidArgument("channel count must be >= 1".into()));
    }
    let mut s = Seeder {
        rng: Rng::seed_from_u64(seed),
    };
    let init_block = s.ep_block(channels);
    let ipblocks = (0..n)
        .map(|_| IpBlockParams {
            resm: s.resm(channels),
            dmum: DmumParams {
                ep_a: s.ep_block(2 * channels),
                ep_b: s.ep_block(2 * channels),
            },
            mum: MumParams {
                ep: s.ep_block(channels),
                convs: s.convs(channels),
            },
        })
        .collect();
    let final_resm = s.resm(channels);
    let out_proj = s.pointwise(channels, channels);
    Ok(UnfoldedModel {
        init_block,
        ipblocks,
        final_resm,
        out_proj,
        channels,
        eta: DEFAULT_ETA,
    })
}
