//! Dense image buffers and their on-disk codecs.
//!
//! RGB images are stored as linear `f64` triples in row-major order with
//! values nominally in `[0, 1]`. Single-channel maps (depth, uncertainty,
//! accumulated opacity) share the same layout with one value per pixel.
//! RGB is exchanged as 8-bit PNG; scalar maps as little-endian PFM.

use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel coordinates, where the center of
    /// pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`. Coordinates are clamped to
    /// the outermost pixel centers.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let fx = (u - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (v - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = a[ch] + (b[ch] - a[ch]) * tx;
            let bottom = c[ch] + (d[ch] - c[ch]) * tx;
            out[ch] = top + (bottom - top) * ty;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    /// True when every channel of every pixel lies in `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.data.iter().flatten().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn map(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Encodes as 8-bit RGB PNG, rounding each channel to the nearest level.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut raw = Vec::with_capacity(self.data.len() * 3);
        for p in &self.data {
            for &c in p {
                raw.push(quantize(c));
            }
        }
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            &raw,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .expect("PNG encoding into memory cannot fail");
        out
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Data(format!("PNG decode: {e}")))?
            .to_rgb8();
        let (w, h) = decoded.dimensions();
        let data = decoded
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png_bytes(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major single-channel map.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} map",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Portable float map, single channel, little-endian (scale `-1.0`).
    /// Rows are written bottom-to-top as the format requires. Values are
    /// stored as `f32`.
    pub fn to_pfm_bytes(&self) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 4);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.extend_from_slice(&(self.get(x, y) as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("PFM: {msg}"));
        let mut cursor = Cursor::new(bytes);
        let mut line = String::new();
        let mut next_line = |cursor: &mut Cursor<&[u8]>| -> Result<String> {
            line.clear();
            cursor
                .read_line(&mut line)
                .map_err(|e| Error::Data(format!("PFM header: {e}")))?;
            Ok(line.trim().to_string())
        };
        if next_line(&mut cursor)? != "Pf" {
            return Err(bad("expected single-channel `Pf` magic"));
        }
        let dims = next_line(&mut cursor)?;
        let mut parts = dims.split_whitespace().map(str::parse::<usize>);
        let (width, height) = match (parts.next(), parts.next()) {
            (Some(Ok(w)), Some(Ok(h))) => (w, h),
            _ => return Err(bad("malformed dimensions")),
        };
        let scale: f64 = next_line(&mut cursor)?
            .parse()
            .map_err(|_| bad("malformed scale"))?;
        let little_endian = scale < 0.0;
        let mut rows = vec![0.0; width * height];
        let mut buf = [0u8; 4];
        for y in (0..height).rev() {
            for x in 0..width {
                cursor
                    .read_exact(&mut buf)
                    .map_err(|_| bad("truncated payload"))?;
                let v = if little_endian {
                    f32::from_le_bytes(buf)
                } else {
                    f32::from_be_bytes(buf)
                };
                rows[y * width + x] = v as f64;
            }
        }
        Ok(Self {
            width,
            height,
            data: rows,
        })
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pfm_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pfm_bytes(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Per-pixel validity flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, fill: bool) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_flags(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} flags for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn flags(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}
