use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image, interleaved channels, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    /// len = width * height * 3
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        ImageRgb {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Round-trip through 8-bit quantization. Metrics compare quantized
    /// images so that in-process evaluation agrees exactly with evaluation
    /// of the PNGs on disk.
    pub fn quantized(&self) -> ImageRgb {
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                buf.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]),
                );
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<ImageRgb> {
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.pixels().flat_map(|p| p.0).map(|v| v as f64 / 255.0).collect();
        Ok(ImageRgb {
            width: w,
            height: h,
            data,
        })
    }

    /// Plain-text PPM (P3), one pixel per line.
    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.width * self.height * 12 + 32);
        out.push_str(&format!("P3\n{} {}\n255\n", self.width, self.height));
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                out.push_str(&format!("{} {} {}\n", to_u8(p[0]), to_u8(p[1]), to_u8(p[2])));
            }
        }
        write_bytes(path, out.as_bytes())
    }
}

/// Row-major scalar plane (depth, accumulated alpha).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize) -> Self {
        ScalarImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        ScalarImage {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 16-bit grayscale PNG with values scaled by `scale` (callers pass the
    /// camera far plane so the full depth range maps onto [0, 65535]).
    pub fn save_png16(&self, path: &Path, scale: f64) -> Result<()> {
        let mut buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = (self.at(x, y) / scale).clamp(0.0, 1.0);
                buf.put_pixel(x as u32, y as u32, image::Luma([(v * 65535.0).round() as u16]));
            }
        }
        buf.save(path)?;
        Ok(())
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
