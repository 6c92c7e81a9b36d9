//! Images in `[0,1]`, binary netpbm I/O, cropping and heatmap rendering.
//!
//! Pixels are stored planar (`[C,H,W]`), matching the tensor layout the
//! network consumes. On disk the only format is binary netpbm: `P6` for RGB,
//! `P5` for grayscale, 8-bit samples for `maxval ≤ 255` and big-endian 16-bit
//! samples above that.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("netpbm parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sample depth used when writing netpbm files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Planar `[C,H,W]` data; `channels` is 1 or 3 and every value lies in `[0,1]`.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels (expected 1 or 3)")));
        }
        if height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(ImageError::Invalid(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Invalid(format!("value {v} outside [0,1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self, ImageError> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Converts a `[C,H,W]` tensor, clamping values into `[0,1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self, ImageError> {
        let [c, h, w] = match t.shape() {
            &[c, h, w] => [c, h, w],
            s => return Err(ImageError::Invalid(format!("tensor shape {s:?} is not [C,H,W]"))),
        };
        let data = t
            .data()
            .iter()
            .map(|v| {
                let v = v.to_f32().unwrap_or(f32::NAN);
                if v.is_nan() {
                    Err(ImageError::Invalid("non-finite pixel".into()))
                } else {
                    Ok(v.clamp(0.0, 1.0))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(c, h, w, data)
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            [self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f32(v).unwrap()).collect(),
        )
        .expect("image extents are positive")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    /// Axis-aligned `size_h × size_w` window with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Image, ImageError> {
        if size_h == 0 || size_w == 0 || top + size_h > self.height || left + size_w > self.width {
            return Err(ImageError::Invalid(format!(
                "crop {size_h}x{size_w} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * size_h * size_w);
        for c in 0..self.channels {
            for y in top..top + size_h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + size_w]);
            }
        }
        Image::new(self.channels, size_h, size_w, data)
    }

    /// Encodes as binary netpbm (`P6` or `P5`), clamping into `[0,1]`.
    pub fn encode(&self, depth: BitDepth) -> Vec<u8> {
        let maxval = depth.maxval();
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n{maxval}\n", self.width, self.height).into_bytes();
        let plane = self.height * self.width;
        for i in 0..plane {
            for c in 0..self.channels {
                let v = (self.data[c * plane + i].clamp(0.0, 1.0) * maxval as f32).round() as u32;
                match depth {
                    BitDepth::Eight => out.push(v as u8),
                    BitDepth::Sixteen => out.extend_from_slice(&(v as u16).to_be_bytes()),
                }
            }
        }
        out
    }

    /// Decodes a binary `P5`/`P6` file with `maxval` in `1..=65535`.
    pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
        let mut p = HeaderParser { bytes, pos: 0 };
        let channels = match bytes.get(..2) {
            Some(b"P6") => 3,
            Some(b"P5") => 1,
            _ => return Err(p.error("expected magic P5 or P6")),
        };
        p.pos = 2;
        let width = p.number("width")?;
        let height = p.number("height")?;
        let maxval = p.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(p.error("zero image extent"));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(p.error("maxval must be in 1..=65535"));
        }
        match bytes.get(p.pos) {
            Some(b) if b.is_ascii_whitespace() => p.pos += 1,
            _ => return Err(p.error("expected one whitespace byte before the raster")),
        }
        let sample_bytes = if maxval > 255 { 2 } else { 1 };
        let count = channels * width * height;
        let raster = &bytes[p.pos..];
        if raster.len() < count * sample_bytes {
            return Err(ImageError::Parse {
                offset: bytes.len(),
                message: format!(
                    "truncated raster: need {} bytes, have {}",
                    count * sample_bytes,
                    raster.len()
                ),
            });
        }
        let plane = width * height;
        let mut data = vec![0f32; count];
        let scale = maxval as f32;
        for i in 0..count {
            let raw = if sample_bytes == 2 {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
            } else {
                raster[i] as usize
            };
            if raw > maxval {
                return Err(ImageError::Parse {
                    offset: p.pos + i * sample_bytes,
                    message: format!("sample {raw} exceeds maxval {maxval}"),
                });
            }
            data[(i % channels) * plane + i / channels] = raw as f32 / scale;
        }
        Image::new(channels, height, width, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image, ImageError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Image::decode(&bytes)
    }

    /// Writes an 8-bit netpbm file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        self.save_with_depth(path, BitDepth::Eight)
    }

    pub fn save_with_depth(&self, path: impl AsRef<Path>, depth: BitDepth) -> Result<(), ImageError> {
        let path = path.as_ref();
        fs::write(path, self.encode(depth)).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn error(&self, message: &str) -> ImageError {
        ImageError::Parse {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        let start = self.pos;
        self.skip_separators();
        if self.pos == start {
            return Err(self.error(&format!("expected whitespace before {what}")));
        }
        let digits_start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(self.error(&format!("expected decimal {what}")));
        }
        std::str::from_utf8(&self.bytes[digits_start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| ImageError::Parse {
                offset: digits_start,
                message: format!("{what} does not fit"),
            })
    }
}

/// Top-left offsets of a `size × size` crop drawn from `seed`.
///
/// Generator: `ChaCha8Rng::seed_from_u64(seed)`; the first `next_u64()`
/// modulo `(height − size + 1)` is the row, the second modulo
/// `(width − size + 1)` the column.
pub fn crop_offsets(height: usize, width: usize, size: usize, seed: u64) -> Result<(usize, usize), ImageError> {
    if size == 0 || size > height || size > width {
        return Err(ImageError::Invalid(format!(
            "crop {size} does not fit in {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = (rng.next_u64() % (height - size + 1) as u64) as usize;
    let left = (rng.next_u64() % (width - size + 1) as u64) as usize;
    Ok((top, left))
}

/// Seeded square crop; see [`crop_offsets`] for the generator.
pub fn random_crop(image: &Image, size: usize, seed: u64) -> Result<Image, ImageError> {
    let (top, left) = crop_offsets(image.height(), image.width(), size, seed)?;
    image.crop(top, left, size, size)
}

/// Gray heatmap of an `[H,W]` tensor, min-max normalized; a constant input
/// renders as uniform 0.5.
pub fn heatmap<T: Real>(t: &Tensor<T>) -> Result<Image, ImageError> {
    let (h, w) = match t.shape() {
        &[h, w] => (h, w),
        s => return Err(ImageError::Invalid(format!("heatmap needs [H,W], got {s:?}"))),
    };
    let vals: Vec<f64> = t.data().iter().map(|v| v.to_f64().unwrap()).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(ImageError::Invalid("heatmap of non-finite values".into()));
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        vals.iter().map(|v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.5; vals.len()]
    };
    Image::new(1, h, w, data)
}
