//! RGB raster images, binary PPM I/O and bilinear resizing.

use thiserror::Error;

pub const CHANNELS: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("bad PPM magic at byte {offset}: expected \"P6\"")]
    BadMagic { offset: usize },
    #[error("malformed PPM header at byte {offset}: {reason}")]
    BadHeader { offset: usize, reason: String },
    #[error("unsupported PPM maxval {maxval} at byte {offset}: only 255 is accepted")]
    UnsupportedMaxval { offset: usize, maxval: u64 },
    #[error(
        "truncated PPM payload at byte {offset}: expected {expected} sample bytes, found {found}"
    )]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("image dimensions must be nonzero, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer holds {found} bytes, {width}x{height} RGB needs {expected}")]
    BufferSize {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },
}

/// Row-major, RGB-interleaved 8-bit image with a top-left origin.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroDimension { width, height });
        }
        let expected = width * height * CHANNELS;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                width,
                height,
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, RasterError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * CHANNELS)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Copy out the `w`×`h` rectangle whose top-left corner is (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, RasterError> {
        assert!(
            x0 + w <= self.width && y0 + h <= self.height,
            "crop out of bounds"
        );
        let mut pixels = Vec::with_capacity(w * h * CHANNELS);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * CHANNELS;
            pixels.extend_from_slice(&self.pixels[start..start + w * CHANNELS]);
        }
        Self::new(w, h, pixels)
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, RasterError> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(RasterError::BadHeader {
                offset: start,
                reason: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RasterError::BadHeader {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

/// Parses a binary (P6) PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RasterImage, RasterError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(RasterError::BadMagic { offset: 0 });
    }
    let mut rd = HeaderReader { bytes, pos: 2 };
    if !rd
        .bytes
        .get(rd.pos)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(RasterError::BadMagic { offset: 2 });
    }
    let dims_at = rd.pos;
    let width = rd.number("width")? as usize;
    let height = rd.number("height")? as usize;
    if width == 0 || height == 0 {
        return Err(RasterError::BadHeader {
            offset: dims_at,
            reason: format!("zero dimension {width}x{height}"),
        });
    }
    rd.skip_separators();
    let maxval_at = rd.pos;
    let maxval = rd.number("maxval")?;
    if maxval != 255 {
        return Err(RasterError::UnsupportedMaxval {
            offset: maxval_at,
            maxval,
        });
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(rd.pos) {
        Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
        _ => {
            return Err(RasterError::BadHeader {
                offset: rd.pos,
                reason: "expected whitespace after maxval".into(),
            })
        }
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(CHANNELS))
        .ok_or_else(|| RasterError::BadHeader {
            offset: dims_at,
            reason: "dimensions overflow".into(),
        })?;
    let payload = &bytes[rd.pos..];
    if payload.len() < expected {
        return Err(RasterError::Truncated {
            offset: rd.pos + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    RasterImage::new(width, height, payload[..expected].to_vec())
}

pub fn encode_ppm(image: &RasterImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&image.pixels);
    out
}

/// Source taps and blend weight for one output coordinate.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize with half-pixel centres, rounding half away from zero.
pub fn resize_bilinear(
    image: &RasterImage,
    out_w: usize,
    out_h: usize,
) -> Result<RasterImage, RasterError> {
    if out_w == 0 || out_h == 0 {
        return Err(RasterError::ZeroDimension {
            width: out_w,
            height: out_h,
        });
    }
    let xs = taps(image.width, out_w);
    let ys = taps(image.height, out_h);
    let stride = image.width * CHANNELS;
    let src = &image.pixels;
    let mut pixels = Vec::with_capacity(out_w * out_h * CHANNELS);
    for ty in &ys {
        let row0 = &src[ty.lo * stride..(ty.lo + 1) * stride];
        let row1 = &src[ty.hi * stride..(ty.hi + 1) * stride];
        for tx in &xs {
            for c in 0..CHANNELS {
                let p00 = row0[tx.lo * CHANNELS + c] as f64;
                let p01 = row0[tx.hi * CHANNELS + c] as f64;
                let p10 = row1[tx.lo * CHANNELS + c] as f64;
                let p11 = row1[tx.hi * CHANNELS + c] as f64;
                let top = p00 + (p01 - p00) * tx.frac;
                let bottom = p10 + (p11 - p10) * tx.frac;
                let v = top + (bottom - top) * ty.frac;
                // f64::round is half-away-from-zero.
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::new(out_w, out_h, pixels)
}
