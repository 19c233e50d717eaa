use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbaImage};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Premultiplied RGBA image, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBA {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 4]>,
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl ImageRGBA {
    pub fn new(width: usize, height: usize, fill: [f64; 4]) -> Self {
        Self { width, height, pixels: vec![fill; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 4]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::LengthMismatch { expected: width * height, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 4] {
        self.pixels[y * self.width + x]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Color composited over an opaque background.
    pub fn over_background(&self, bg: [f64; 3]) -> Vec<[f64; 3]> {
        self.pixels.iter().map(|p| std::array::from_fn(|c| p[c] + (1.0 - p[3]) * bg[c])).collect()
    }

    /// 8-bit straight-alpha RGBA bytes.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.pixels.len());
        for p in &self.pixels {
            let a = p[3];
            for c in 0..3 {
                out.push(if a > 0.0 { to_byte(p[c] / a) } else { 0 });
            }
            out.push(to_byte(a));
        }
        out
    }

    pub fn from_rgba8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 4 * width * height {
            return Err(Error::LengthMismatch { expected: 4 * width * height, got: bytes.len() });
        }
        let pixels = bytes
            .chunks_exact(4)
            .map(|p| {
                let a = p[3] as f64 / 255.0;
                [p[0] as f64 / 255.0 * a, p[1] as f64 / 255.0 * a, p[2] as f64 / 255.0 * a, a]
            })
            .collect();
        Ok(Self { width, height, pixels })
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img = RgbaImage::from_raw(self.width as u32, self.height as u32, self.to_rgba8())
            .ok_or(Error::SizeMismatch { a: (self.width, self.height), b: (0, 0) })?;
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgba8();
        Self::from_rgba8(img.width() as usize, img.height() as usize, img.as_raw())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_png(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Binary PPM of the image composited over `bg`.
    pub fn to_ppm(&self, bg: [f64; 3]) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in self.over_background(bg) {
            out.extend(p.iter().map(|&v| to_byte(v)));
        }
        out
    }

    /// SHA-256 over the little-endian bytes of all channels, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        for p in &self.pixels {
            for v in p {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
