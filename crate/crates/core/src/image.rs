//! Minimal RGB float image used throughout the pipeline.
//!
//! Pixels are stored row-major, interleaved RGB, with channel values in
//! `[0, 1]`. PNG files are read and written through the `image` crate at 8 or
//! 16 bits per channel.

use std::path::Path;

use image::{imageops::FilterType, ImageBuffer, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "raw buffer of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
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

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    /// Interleaved RGB values, row-major.
    pub fn as_raw(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&value);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Fills the rectangle `[x0, x0+w) x [y0, y0+h)` (clamped to the image).
    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, value: [f32; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.set_pixel(x, y, value);
            }
        }
    }

    /// Mean absolute difference over all channels.
    pub fn l1_distance(&self, other: &Image) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::invalid("image dimensions differ"));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    /// Largest centered square crop.
    pub fn center_crop_square(&self) -> Image {
        let side = self.width.min(self.height);
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        let mut data = Vec::with_capacity(side * side * 3);
        for y in y0..y0 + side {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + side * 3]);
        }
        Image {
            width: side,
            height: side,
            data,
        }
    }

    /// Bilinear (triangle filter) resize. Same-size requests return a copy.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length checked at construction");
        let out = image::imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Image {
            width,
            height,
            data: out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn save_png(&self, path: &Path, depth: BitDepth) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match depth {
            BitDepth::Eight => {
                let raw: Vec<u8> = self
                    .data
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw)
                    .expect("length checked")
                    .save(path)
            }
            BitDepth::Sixteen => {
                let raw: Vec<u16> = self
                    .data
                    .iter()
                    .map(|&v| quantize16(v as f64))
                    .collect();
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw)
                    .expect("length checked")
                    .save(path)
            }
        };
        res.map_err(|e| Error::Decode(format!("writing {}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
        let rgb = img.into_rgb32f();
        let (w, h) = rgb.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            data: rgb.into_raw(),
        })
    }
}

pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_crop_then_resize_constant_image() {
        let img = Image::new(64, 48, [0.2, 0.4, 0.6]);
        let out = img.center_crop_square().resize(16, 16);
        assert_eq!(out.dims(), (16, 16));
        for v in out.as_raw().chunks(3) {
            assert!((v[0] - 0.2).abs() < 1e-6);
            assert!((v[1] - 0.4).abs() < 1e-6);
            assert!((v[2] - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn png_sixteen_bit_round_trip_is_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = Image::new(4, 3, [0.0; 3]);
        img.set_pixel(1, 2, [0.123456, 0.654321, 0.999]);
        img.save_png(&path, BitDepth::Sixteen).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.dims(), (4, 3));
        let p = back.pixel(1, 2);
        assert!((p[0] - 0.123456).abs() <= 1.0 / 65535.0);
        assert!((p[2] - 0.999).abs() <= 1.0 / 65535.0);
    }

    #[test]
    fn crop_keeps_center() {
        let mut img = Image::new(6, 2, [0.0; 3]);
        img.set_pixel(2, 0, [1.0, 0.0, 0.0]);
        let c = img.center_crop_square();
        assert_eq!(c.dims(), (2, 2));
        assert_eq!(c.pixel(0, 0), [1.0, 0.0, 0.0]);
    }
}
