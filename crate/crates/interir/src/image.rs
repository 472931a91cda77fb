//! Bit-exact binary PPM (P6) / PGM (P5) I/O and color conversion.
//!
//! Only maxval-255 binary netpbm is supported: it is trivially bit-exact
//! and needs no codec dependency. Pixels live in a `[1, C, H, W]` tensor
//! with values in [0, 1]; saving quantizes with round-half-away-from-zero
//! so that save -> load is the identity on already-quantized images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An 8-bit image held as `[1, C, H, W]` f64 in [0, 1], C in {1, 3}.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Tensor,
}

impl Image {
    /// Wrap a `[1, C, H, W]` tensor, validating channel count and range.
    pub fn new(pixels: Tensor) -> Result<Self> {
        let (b, c, _, _) = pixels.dims4("image pixels")?;
        if b != 1 {
            return Err(Error::dim("batch", format!("images are single-sample, got batch {b}")));
        }
        if c != 1 && c != 3 {
            return Err(Error::InvalidChannels { expected: 3, got: c });
        }
        if !pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "image pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Image { pixels })
    }

    /// Wrap a `[1, C, H, W]` tensor, clamping values into [0, 1].
    pub fn from_tensor_clamped(pixels: Tensor) -> Result<Self> {
        Image::new(pixels.clamp01())
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[3]
    }

    /// The image as `[C, H, W]` (drops the unit batch axis).
    pub fn channel_tensor(&self) -> Tensor {
        let s = self.pixels.shape();
        self.pixels.reshaped(&[s[1], s[2], s[3]]).expect("same element count")
    }

    /// Wrap a `[C, H, W]` tensor back into an image, clamping to [0, 1].
    pub fn from_channel_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3("image channels")?;
        Image::from_tensor_clamped(t.reshaped(&[1, c, h, w])?)
    }
}

const MAXVAL: u32 = 255;
// Caps on parsed header fields; anything larger is a hostile or corrupt file.
const MAX_EXTENT: usize = 1 << 20;

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    fn take(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.pos, "unexpected end of file"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Skip whitespace and `#` comments (comments run to end of line).
    fn skip_space(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(Error::parse(self.pos, "unexpected end of header")),
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<usize> {
        self.skip_space()?;
        let start = self.pos;
        let mut value: usize = 0;
        let mut digits = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(|| Error::parse(start, format!("{what} overflows")))?;
            digits += 1;
            self.pos += 1;
        }
        if digits == 0 {
            return Err(Error::parse(self.pos, format!("expected digits for {what}")));
        }
        Ok(value)
    }
}

/// Decode a binary PPM (P6) or PGM (P5) byte stream.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Image> {
    let mut cur = ByteCursor::new(bytes);
    let m0 = cur.take()?;
    let m1 = cur.take()?;
    let channels = match (m0, m1) {
        (b'P', b'6') => 3,
        (b'P', b'5') => 1,
        _ => return Err(Error::parse(0, format!("bad magic bytes {m0:#04x} {m1:#04x}"))),
    };
    let width = cur.read_number("width")?;
    let height = cur.read_number("height")?;
    let maxval = cur.read_number("maxval")?;
    if width == 0 || height == 0 || width > MAX_EXTENT || height > MAX_EXTENT {
        return Err(Error::parse(
            2,
            format!("image extent {width}x{height} out of range"),
        ));
    }
    if maxval != MAXVAL as usize {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval} (only {MAXVAL} is supported)"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    let sep = cur.take()?;
    if !sep.is_ascii_whitespace() {
        return Err(Error::parse(cur.pos - 1, "expected single whitespace after maxval"));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::parse(cur.pos, "payload size overflows"))?;
    let remaining = bytes.len() - cur.pos;
    if remaining < expected {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: need {expected} bytes, have {remaining}"),
        ));
    }
    if remaining > expected {
        return Err(Error::parse(
            cur.pos + expected,
            format!("{} trailing bytes after payload", remaining - expected),
        ));
    }
    let payload = &bytes[cur.pos..];
    // interleaved RGB -> planar [1, C, H, W]
    let mut data = vec![0.0f64; expected];
    let plane = width * height;
    for i in 0..plane {
        for c in 0..channels {
            data[c * plane + i] = payload[i * channels + c] as f64 / MAXVAL as f64;
        }
    }
    Image::new(Tensor::new(&[1, channels, height, width], data)?)
}

/// Encode to canonical binary PPM/PGM: `P6\n{w} {h}\n255\n` + payload.
///
/// Values are clamped to [0, 1] and quantized with round-half-away-from-zero
/// (0.5 scales to 127.5 and stores as 128).
pub fn encode_netpbm(image: &Image) -> Vec<u8> {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{w} {h}\n{MAXVAL}\n").into_bytes();
    let plane = w * h;
    let data = image.pixels.data();
    for i in 0..plane {
        for ch in 0..c {
            let v = data[ch * plane + i].clamp(0.0, 1.0);
            // f64::round ties away from zero, which is the quantization rule
            out.push((v * MAXVAL as f64).round() as u8);
        }
    }
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes)
}

pub fn save_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_netpbm(image)).map_err(|e| Error::io(path, e))
}

/// ITU-R BT.601 luma with studio offsets:
/// `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255` for inputs in [0, 1].
/// Returns a `[1, 1, H, W]` tensor.
pub fn rgb_to_y(image: &Image) -> Result<Tensor> {
    if image.channels() != 3 {
        return Err(Error::InvalidChannels {
            expected: 3,
            got: image.channels(),
        });
    }
    let (h, w) = (image.height(), image.width());
    let plane = h * w;
    let data = image.pixels.data();
    let mut y = vec![0.0f64; plane];
    for i in 0..plane {
        let (r, g, b) = (data[i], data[plane + i], data[2 * plane + i]);
        y[i] = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0;
    }
    Tensor::new(&[1, 1, h, w], y)
}
