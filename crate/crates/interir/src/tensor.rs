//! Dense f64 tensors and the deterministic numeric kernels the rest of the
//! crate builds on.
//!
//! Layout is row-major over at most four axes; image-like data uses
//! `[batch, channel, height, width]`, per-channel matrix stacks use
//! `[channel, rows, cols]`. Everything is f64: this crate favors exact
//! desk-scale verification (oracles, adjoint tests, gradient checks) over
//! throughput.

use crate::error::{Error, Result};

/// Dense multi-dimensional array of f64 with row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and matching flat data.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > 4 {
            return Err(Error::dim("rank", format!("rank {} exceeds 4", shape.len())));
        }
        let mut numel: usize = 1;
        for (i, &e) in shape.iter().enumerate() {
            if e == 0 {
                return Err(Error::dim("extent", format!("axis {i} has extent 0")));
            }
            numel = numel.checked_mul(e).ok_or_else(|| {
                Error::dim("extent", format!("shape {shape:?} overflows usize"))
            })?;
        }
        if numel != data.len() {
            return Err(Error::dim(
                "elements",
                format!("shape {:?} needs {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        assert!(
            shape.iter().all(|&e| e >= 1) && shape.len() <= 4,
            "internal tensor construction with invalid shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Scalar (rank-0) tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Stack of `c` identity matrices, shape `[c, n, n]`.
    pub fn channel_identity(c: usize, n: usize) -> Self {
        let mut t = Tensor::zeros(&[c, n, n]);
        for ch in 0..c {
            for i in 0..n {
                t.data[(ch * n + i) * n + i] = 1.0;
            }
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(&mut f).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn dims3(&self, what: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::dim(
                "rank",
                format!("{what}: expected rank 3, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn dims4(&self, what: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::dim(
                "rank",
                format!("{what}: expected rank 4, got shape {:?}", self.shape),
            )),
        }
    }

    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> f64 {
        let (_, hh, ww) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * hh + h) * ww + w]
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * cc + c) * hh + h) * ww + w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::dim(
                "shape",
                format!("elementwise op on {:?} vs {:?}", self.shape, rhs.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn mul_elem(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_map(rhs, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| k * v)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn sum_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, rhs: &Tensor) -> Result<f64> {
        if self.shape != rhs.shape {
            return Err(Error::dim(
                "shape",
                format!("dot on {:?} vs {:?}", self.shape, rhs.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numerical {
                iter: 0,
                detail: format!("{what} contains non-finite values"),
            })
        }
    }
}

/// Maximum absolute difference between two same-shape tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff shape mismatch");
    a.data
        .iter()
        .zip(b.data.iter())
        .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
}

/// 2-D cross-correlation (no kernel flip) over `[B, Cin, H, W]` input with a
/// `[Cout, Cin/groups, Kh, Kw]` kernel, zero padding, and grouped channels.
///
/// Output extent per spatial axis is `(H + 2*padding - Kh) / stride + 1`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let (bs, cin, h, w) = input.dims4("conv2d input")?;
    let (cout, cpg, kh, kw) = kernel.dims4("conv2d kernel")?;
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    if groups == 0 || cin % groups != 0 {
        return Err(Error::dim(
            "channel",
            format!("input channels {cin} not divisible by groups {groups}"),
        ));
    }
    if cpg != cin / groups {
        return Err(Error::dim(
            "kernel_channel",
            format!("kernel expects {cpg} channels per group, input provides {}", cin / groups),
        ));
    }
    if cout % groups != 0 {
        return Err(Error::dim(
            "kernel_count",
            format!("output channels {cout} not divisible by groups {groups}"),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::dim(
            "kernel_size",
            format!("kernel extents must be odd, got {kh}x{kw}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::dim(
            "bias",
            format!("bias shape {:?}, expected [{cout}]", bias.shape()),
        ));
    }
    if h + 2 * padding < kh {
        return Err(Error::dim(
            "height",
            format!("padded height {} smaller than kernel {kh}", h + 2 * padding),
        ));
    }
    if w + 2 * padding < kw {
        return Err(Error::dim(
            "width",
            format!("padded width {} smaller than kernel {kw}", w + 2 * padding),
        ));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let cout_per_group = cout / groups;

    let mut out = Tensor::zeros(&[bs, cout, oh, ow]);
    let id = input.data();
    let kd = kernel.data();
    let bd = bias.data();
    let od = out.data_mut();
    for b in 0..bs {
        for oc in 0..cout {
            let g = oc / cout_per_group;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bd[oc];
                    for icl in 0..cpg {
                        let ic = g * cpg + icl;
                        for ky in 0..kh {
                            // signed arithmetic for the zero-padding margin
                            let iy = (y * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (x * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let iv = id[((b * cin + ic) * h + iy as usize) * w + ix as usize];
                                let kv = kd[((oc * cpg + icl) * kh + ky) * kw + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    od[((b * cout + oc) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Independent matrix product per channel: `[C, M, K] x [C, K, N] -> [C, M, N]`.
pub fn channel_matmul(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    let (c, m, k) = lhs.dims3("channel_matmul lhs")?;
    let (c2, k2, n) = rhs.dims3("channel_matmul rhs")?;
    if c != c2 {
        return Err(Error::dim(
            "channel",
            format!("lhs has {c} channels, rhs has {c2}"),
        ));
    }
    if k != k2 {
        return Err(Error::dim(
            "inner",
            format!("lhs inner dim {k}, rhs inner dim {k2}"),
        ));
    }
    let mut out = Tensor::zeros(&[c, m, n]);
    let ld = lhs.data();
    let rd = rhs.data();
    let od = out.data_mut();
    for ch in 0..c {
        let lb = ch * m * k;
        let rb = ch * k * n;
        let ob = ch * m * n;
        for i in 0..m {
            for p in 0..k {
                let lv = ld[lb + i * k + p];
                if lv == 0.0 {
                    continue;
                }
                for j in 0..n {
                    od[ob + i * n + j] += lv * rd[rb + p * n + j];
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel transpose: `[C, M, N] -> [C, N, M]`.
pub fn channel_transpose(x: &Tensor) -> Result<Tensor> {
    let (c, m, n) = x.dims3("channel_transpose")?;
    let mut out = Tensor::zeros(&[c, n, m]);
    let xd = x.data();
    let od = out.data_mut();
    for ch in 0..c {
        for i in 0..m {
            for j in 0..n {
                od[(ch * n + j) * m + i] = xd[(ch * m + i) * n + j];
            }
        }
    }
    Ok(out)
}

/// Softmax over the trailing two axes, one slab at a time, with
/// max-subtraction for numerical stability. Every output slab sums to 1.
pub fn softmax_lastaxes(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(Error::dim(
            "rank",
            format!("softmax_lastaxes needs rank >= 2, got {:?}", x.shape()),
        ));
    }
    let slab = x.shape()[x.rank() - 2] * x.shape()[x.rank() - 1];
    let mut out = x.clone();
    let data = out.data_mut();
    for chunk in data.chunks_mut(slab) {
        let mx = chunk.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in chunk.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in chunk.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Adaptive average pooling of `[B, C, H, W]` to `[B, C, outH, outW]`.
///
/// Output cell `(i, j)` averages input window
/// `[floor(i*H/outH), ceil((i+1)*H/outH))` x the analogous width window.
pub fn adaptive_avg_pool(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4("adaptive_avg_pool")?;
    if out_h == 0 || out_h > h {
        return Err(Error::dim(
            "height",
            format!("output height {out_h} not in 1..={h}"),
        ));
    }
    if out_w == 0 || out_w > w {
        return Err(Error::dim(
            "width",
            format!("output width {out_w} not in 1..={w}"),
        ));
    }
    let mut out = Tensor::zeros(&[b, c, out_h, out_w]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for i in 0..out_h {
                let h0 = i * h / out_h;
                let h1 = ((i + 1) * h).div_ceil(out_h);
                for j in 0..out_w {
                    let w0 = j * w / out_w;
                    let w1 = ((j + 1) * w).div_ceil(out_w);
                    let mut acc = 0.0;
                    for y in h0..h1 {
                        for z in w0..w1 {
                            acc += xd[base + y * w + z];
                        }
                    }
                    od[((bi * c + ci) * out_h + i) * out_w + j] =
                        acc / ((h1 - h0) * (w1 - w0)) as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Unnormalized forward 2-D DFT per `(batch, channel)` slab, computed by
/// row-column decomposition. Returns the real and imaginary parts.
pub fn dft2d(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = x.dims4("dft2d")?;
    // twiddle tables: tw[k] = e^{-2*pi*i*k/N}
    let tw_w: Vec<(f64, f64)> = (0..w)
        .map(|k| {
            let ang = -2.0 * std::f64::consts::PI * k as f64 / w as f64;
            (ang.cos(), ang.sin())
        })
        .collect();
    let tw_h: Vec<(f64, f64)> = (0..h)
        .map(|k| {
            let ang = -2.0 * std::f64::consts::PI * k as f64 / h as f64;
            (ang.cos(), ang.sin())
        })
        .collect();

    let mut re = Tensor::zeros(&[b, c, h, w]);
    let mut im = Tensor::zeros(&[b, c, h, w]);
    let xd = x.data();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            // transform along width: row[y][v]
            let mut row_re = vec![0.0f64; h * w];
            let mut row_im = vec![0.0f64; h * w];
            for y in 0..h {
                for v in 0..w {
                    let mut ar = 0.0;
                    let mut ai = 0.0;
                    for z in 0..w {
                        let (tr, ti) = tw_w[(v * z) % w];
                        let s = xd[base + y * w + z];
                        ar += s * tr;
                        ai += s * ti;
                    }
                    row_re[y * w + v] = ar;
                    row_im[y * w + v] = ai;
                }
            }
            // transform along height: X[u][v]
            for u in 0..h {
                for v in 0..w {
                    let mut ar = 0.0;
                    let mut ai = 0.0;
                    for y in 0..h {
                        let (tr, ti) = tw_h[(u * y) % h];
                        let (rr, ri) = (row_re[y * w + v], row_im[y * w + v]);
                        ar += rr * tr - ri * ti;
                        ai += rr * ti + ri * tr;
                    }
                    re.data[base + u * w + v] = ar;
                    im.data[base + u * w + v] = ai;
                }
            }
        }
    }
    Ok((re, im))
}

/// Space-to-depth: `[B, C, H, W] -> [B, C*r*r, H/r, W/r]`.
///
/// Block pixels are laid out row-major within each source channel, so the
/// 2x2 block `[[a, b], [c, d]]` becomes channels `(a, b, c, d)`.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4("pixel_unshuffle")?;
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_unshuffle factor must be >= 1".into()));
    }
    if h % r != 0 {
        return Err(Error::dim("height", format!("height {h} not divisible by {r}")));
    }
    if w % r != 0 {
        return Err(Error::dim("width", format!("width {w} not divisible by {r}")));
    }
    let (ho, wo) = (h / r, w / r);
    let co = c * r * r;
    let mut out = Tensor::zeros(&[b, co, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = ci * r * r + dy * r + dx;
                    for y in 0..ho {
                        for z in 0..wo {
                            od[((bi * co + oc) * ho + y) * wo + z] =
                                xd[((bi * c + ci) * h + y * r + dy) * w + z * r + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Depth-to-space, exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, co, ho, wo) = x.dims4("pixel_shuffle")?;
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_shuffle factor must be >= 1".into()));
    }
    if co % (r * r) != 0 {
        return Err(Error::dim(
            "channel",
            format!("channels {co} not divisible by {}", r * r),
        ));
    }
    let c = co / (r * r);
    let (h, w) = (ho * r, wo * r);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = ci * r * r + dy * r + dx;
                    for y in 0..ho {
                        for z in 0..wo {
                            od[((bi * c + ci) * h + y * r + dy) * w + z * r + dx] =
                                xd[((bi * co + ic) * ho + y) * wo + z];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Concatenate two `[B, C, H, W]` tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, ca, ha, wa) = a.dims4("concat_channels lhs")?;
    let (bb, cb, hb, wb) = b.dims4("concat_channels rhs")?;
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::dim(
            "shape",
            format!("concat_channels on {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let co = ca + cb;
    let mut out = Tensor::zeros(&[ba, co, ha, wa]);
    let plane = ha * wa;
    for bi in 0..ba {
        let dst = &mut out.data_mut()[bi * co * plane..(bi + 1) * co * plane];
        dst[..ca * plane].copy_from_slice(&a.data()[bi * ca * plane..(bi + 1) * ca * plane]);
        dst[ca * plane..].copy_from_slice(&b.data()[bi * cb * plane..(bi + 1) * cb * plane]);
    }
    Ok(out)
}

/// Split a `[B, 2C, H, W]` tensor at the channel midpoint.
pub fn split_channels_half(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = x.dims4("split_channels_half")?;
    if c % 2 != 0 {
        return Err(Error::dim("channel", format!("channel count {c} is odd")));
    }
    let ch = c / 2;
    let plane = h * w;
    let mut lo = Tensor::zeros(&[b, ch, h, w]);
    let mut hi = Tensor::zeros(&[b, ch, h, w]);
    for bi in 0..b {
        let src = &x.data()[bi * c * plane..(bi + 1) * c * plane];
        lo.data_mut()[bi * ch * plane..(bi + 1) * ch * plane]
            .copy_from_slice(&src[..ch * plane]);
        hi.data_mut()[bi * ch * plane..(bi + 1) * ch * plane]
            .copy_from_slice(&src[ch * plane..]);
    }
    Ok((lo, hi))
}

/// Copy one sample of a `[B, C, H, W]` tensor as `[1, C, H, W]`.
pub fn slice_sample(x: &Tensor, b: usize) -> Result<Tensor> {
    let (bs, c, h, w) = x.dims4("slice_sample")?;
    if b >= bs {
        return Err(Error::dim("batch", format!("sample {b} out of {bs}")));
    }
    let plane = c * h * w;
    Tensor::new(&[1, c, h, w], x.data()[b * plane..(b + 1) * plane].to_vec())
}

/// Stack `[1, C, H, W]` samples into `[B, C, H, W]`.
pub fn stack_samples(samples: &[Tensor]) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("stack_samples on empty list".into()));
    }
    let (_, c, h, w) = samples[0].dims4("stack_samples")?;
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        let (b1, cs, hs, ws) = s.dims4("stack_samples")?;
        if b1 != 1 || (cs, hs, ws) != (c, h, w) {
            return Err(Error::dim(
                "shape",
                format!("stack_samples on {:?} vs [1, {c}, {h}, {w}]", s.shape()),
            ));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(&[samples.len(), c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    /// Naive quadruple-loop convolution used as the in-module oracle.
    fn conv2d_loops(
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Tensor {
        let (bs, _cin, h, w) = input.dims4("i").unwrap();
        let (cout, cpg, kh, kw) = kernel.dims4("k").unwrap();
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let cpgo = cout / groups;
        Tensor::from_fn(&[bs, cout, oh, ow], |idx| {
            let x = idx % ow;
            let y = (idx / ow) % oh;
            let oc = (idx / (ow * oh)) % cout;
            let b = idx / (ow * oh * cout);
            let g = oc / cpgo;
            let mut acc = bias.data()[oc];
            for icl in 0..cpg {
                let ic = g * cpg + icl;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (y * stride + ky) as isize - padding as isize;
                        let ix = (x * stride + kx) as isize - padding as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            acc += input.at4(b, ic, iy as usize, ix as usize)
                                * kernel.data()[((oc * cpg + icl) * kh + ky) * kw + kx];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(&[], vec![1.0]).is_ok());
    }

    #[test]
    fn conv2d_zero_input_yields_bias() {
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        let k = Tensor::new(&[2, 1, 3, 3], (0..18).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::new(&[2], vec![0.5, -1.25]).unwrap();
        let y = conv2d(&x, &k, &b, 1, 1, 1).unwrap();
        for c in 0..2 {
            for i in 0..9 {
                assert_eq!(y.data()[c * 9 + i], b.data()[c]);
            }
        }
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = Rng::seed_from_u64(1);
        let x = random_tensor(&[1, 1, 4, 5], &mut rng);
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        let y = conv2d(&x, &k, &b, 1, 0, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        let mut rng = Rng::seed_from_u64(2);
        let x = random_tensor(&[1, 2, 5, 5], &mut rng);
        let k = random_tensor(&[3, 2, 3, 3], &mut rng);
        let b = random_tensor(&[3], &mut rng);
        let y = conv2d(&x, &k, &b, 1, 1, 1).unwrap();
        let o = conv2d_loops(&x, &k, &b, 1, 1, 1);
        assert!(max_abs_diff(&y, &o) <= 1e-12);
    }

    #[test]
    fn conv2d_grouped_and_strided_matches_oracle() {
        let mut rng = Rng::seed_from_u64(3);
        let x = random_tensor(&[2, 4, 7, 9], &mut rng);
        let k = random_tensor(&[6, 2, 3, 3], &mut rng);
        let b = random_tensor(&[6], &mut rng);
        let y = conv2d(&x, &k, &b, 2, 1, 2).unwrap();
        let o = conv2d_loops(&x, &k, &b, 2, 1, 2);
        assert_eq!(y.shape(), &[2, 6, 4, 5]);
        assert!(max_abs_diff(&y, &o) <= 1e-12);
    }

    #[test]
    fn conv2d_shape_errors_name_axis() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let k = Tensor::zeros(&[2, 2, 3, 3]);
        let b = Tensor::zeros(&[2]);
        match conv2d(&x, &k, &b, 1, 1, 1) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "kernel_channel"),
            other => panic!("expected dimension error, got {other:?}"),
        }
        let k_even = Tensor::zeros(&[2, 3, 2, 2]);
        match conv2d(&x, &k_even, &b, 1, 1, 1) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "kernel_size"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn channel_matmul_identity() {
        let mut rng = Rng::seed_from_u64(4);
        let rhs = random_tensor(&[3, 4, 5], &mut rng);
        let id = Tensor::channel_identity(3, 4);
        let y = channel_matmul(&id, &rhs).unwrap();
        assert!(max_abs_diff(&y, &rhs) <= 1e-15);
    }

    #[test]
    fn channel_matmul_hand_product() {
        // [[1, 2], [3, 4]] x [[5, 6], [7, 8]] = [[19, 22], [43, 50]]
        let a = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let y = channel_matmul(&a, &b).unwrap();
        assert_eq!(y.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn channel_matmul_matches_triple_loop() {
        let mut rng = Rng::seed_from_u64(5);
        let a = random_tensor(&[3, 4, 5], &mut rng);
        let b = random_tensor(&[3, 5, 4], &mut rng);
        let y = channel_matmul(&a, &b).unwrap();
        let mut o = Tensor::zeros(&[3, 4, 4]);
        for c in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for p in 0..5 {
                        acc += a.at3(c, i, p) * b.at3(c, p, j);
                    }
                    o.data_mut()[(c * 4 + i) * 4 + j] = acc;
                }
            }
        }
        assert!(max_abs_diff(&y, &o) <= 1e-12);
    }

    #[test]
    fn channel_matmul_inner_mismatch() {
        let a = Tensor::zeros(&[1, 2, 3]);
        let b = Tensor::zeros(&[1, 4, 2]);
        match channel_matmul(&a, &b) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "inner"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_constant_slab_is_uniform() {
        let x = Tensor::full(&[2, 3, 3], 4.2);
        let y = softmax_lastaxes(&x).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 9.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let x = Tensor::new(&[1, 2], vec![0.0, 3.0f64.ln()]).unwrap();
        let y = softmax_lastaxes(&x).unwrap();
        assert!((y.data()[0] - 0.25).abs() <= 1e-12);
        assert!((y.data()[1] - 0.75).abs() <= 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut rng = Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x = random_tensor(&[2, 3, 3], &mut rng);
            let y = softmax_lastaxes(&x).unwrap();
            for slab in y.data().chunks(9) {
                let s: f64 = slab.iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
            // direct exp/sum oracle
            let mut o = x.clone();
            for chunk in o.data_mut().chunks_mut(9) {
                let sum: f64 = chunk.iter().map(|v| v.exp()).sum();
                for v in chunk.iter_mut() {
                    *v = v.exp() / sum;
                }
            }
            assert!(max_abs_diff(&y, &o) <= 1e-12);
            let shifted = softmax_lastaxes(&x.map(|v| v + 17.5)).unwrap();
            assert!(max_abs_diff(&y, &shifted) <= 1e-12);
        }
    }

    #[test]
    fn pool_identity_and_constant() {
        let mut rng = Rng::seed_from_u64(7);
        let x = random_tensor(&[1, 2, 5, 4], &mut rng);
        let y = adaptive_avg_pool(&x, 5, 4).unwrap();
        assert!(max_abs_diff(&x, &y) <= 1e-15);
        let c = Tensor::full(&[1, 1, 6, 7], 0.37);
        let p = adaptive_avg_pool(&c, 2, 3).unwrap();
        for &v in p.data() {
            assert!((v - 0.37).abs() <= 1e-15);
        }
    }

    #[test]
    fn pool_ramp_hand_values() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let y = adaptive_avg_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn pool_preserves_mean_on_even_partition() {
        let mut rng = Rng::seed_from_u64(8);
        let x = random_tensor(&[1, 1, 8, 6], &mut rng);
        let y = adaptive_avg_pool(&x, 4, 3).unwrap();
        assert!((x.mean() - y.mean()).abs() <= 1e-12);
    }

    #[test]
    fn pool_rejects_oversized_output() {
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(adaptive_avg_pool(&x, 4, 1).is_err());
    }

    #[test]
    fn dft_zeros_and_constant() {
        let z = Tensor::zeros(&[1, 1, 5, 3]);
        let (re, im) = dft2d(&z).unwrap();
        assert_eq!(re.max_abs(), 0.0);
        assert_eq!(im.max_abs(), 0.0);

        let c = Tensor::full(&[1, 1, 4, 6], 0.7);
        let (re, im) = dft2d(&c).unwrap();
        assert!((re.data()[0] - 0.7 * 24.0).abs() <= 1e-9);
        for (i, (&r, &m)) in re.data().iter().zip(im.data().iter()).enumerate() {
            if i != 0 {
                assert!(r.abs() <= 1e-9, "bin {i} re {r}");
            }
            assert!(m.abs() <= 1e-9, "bin {i} im {m}");
        }
    }

    #[test]
    fn dft_linearity() {
        let mut rng = Rng::seed_from_u64(9);
        let x = random_tensor(&[1, 1, 8, 8], &mut rng);
        let y = random_tensor(&[1, 1, 8, 8], &mut rng);
        let (a, b) = (2.5, -1.25);
        let combo = x.scale(a).add(&y.scale(b)).unwrap();
        let (cr, ci) = dft2d(&combo).unwrap();
        let (xr, xi) = dft2d(&x).unwrap();
        let (yr, yi) = dft2d(&y).unwrap();
        let lr = xr.scale(a).add(&yr.scale(b)).unwrap();
        let li = xi.scale(a).add(&yi.scale(b)).unwrap();
        assert!(max_abs_diff(&cr, &lr) <= 1e-9);
        assert!(max_abs_diff(&ci, &li) <= 1e-9);
    }

    #[test]
    fn pixel_unshuffle_definition() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_unshuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let r1 = pixel_unshuffle(&x, 1).unwrap();
        assert_eq!(r1, x);
    }

    #[test]
    fn pixel_shuffle_roundtrip_bit_exact() {
        let mut rng = Rng::seed_from_u64(10);
        let x = random_tensor(&[1, 3, 8, 8], &mut rng);
        let back = pixel_shuffle(&pixel_unshuffle(&x, 4).unwrap(), 4).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn pixel_unshuffle_rejects_indivisible() {
        let x = Tensor::zeros(&[1, 1, 5, 4]);
        match pixel_unshuffle(&x, 2) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "height"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let mut rng = Rng::seed_from_u64(11);
        let a = random_tensor(&[2, 3, 4, 4], &mut rng);
        let b = random_tensor(&[2, 3, 4, 4], &mut rng);
        let cat = concat_channels(&a, &b).unwrap();
        let (lo, hi) = split_channels_half(&cat).unwrap();
        assert_eq!(lo, a);
        assert_eq!(hi, b);
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = Rng::seed_from_u64(12);
        let a = random_tensor(&[3, 4, 6], &mut rng);
        let back = channel_transpose(&channel_transpose(&a).unwrap()).unwrap();
        assert_eq!(back, a);
    }
}
