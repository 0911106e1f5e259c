//! Image records and PNG I/O.

use std::path::Path;

use image::{imageops::FilterType, ImageBuffer, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRole {
    Content,
    Style,
}

/// An RGB image with unit-interval pixel values, stored `H x W x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Array3<f64>,
    pub role: ImageRole,
    pub source_path: String,
}

impl ImageRecord {
    /// Builds a record, rejecting pixel values outside `[0, 1]`.
    pub fn new(id: impl Into<String>, pixels: Array3<f64>, role: ImageRole) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("expected HxWx3 pixels, got {h}x{w}x{c}")));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            id: id.into(),
            pixels,
            role,
            source_path: String::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn load(path: &Path, role: ImageRole) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".to_string());
        let mut rec = Self::from_rgb8(id, &img, role);
        rec.source_path = path.display().to_string();
        Ok(rec)
    }

    /// Decodes an in-memory encoded image (PNG, or anything the `image` crate reads).
    pub fn decode(id: impl Into<String>, bytes: &[u8], role: ImageRole) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self::from_rgb8(id, &img, role))
    }

    pub fn from_rgb8(id: impl Into<String>, img: &RgbImage, role: ImageRole) -> Self {
        let (w, h) = img.dimensions();
        let mut pixels = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[[y as usize, x as usize, c]] = f64::from(p[c]) / 255.0;
            }
        }
        Self {
            id: id.into(),
            pixels,
            role,
            source_path: String::new(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w, _) = self.pixels.dim();
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |c| (self.pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    /// SHA-256 over the quantized 8-bit pixels and dimensions.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.height() as u64).to_le_bytes());
        hasher.update((self.width() as u64).to_le_bytes());
        hasher.update(self.to_rgb8().as_raw());
        hex::encode(hasher.finalize())
    }

    /// Resized copy (Catmull-Rom); identity when the size already matches.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if self.height() == height && self.width() == width {
            return self.clone();
        }
        let img = image::imageops::resize(&self.to_rgb8(), width as u32, height as u32, FilterType::CatmullRom);
        let mut out = Self::from_rgb8(self.id.clone(), &img, self.role);
        out.source_path = self.source_path.clone();
        out
    }

    /// Center-crops to a square and resizes to `side x side`.
    pub fn center_square(&self, side: usize) -> Self {
        let (h, w) = (self.height(), self.width());
        let s = h.min(w);
        let (y0, x0) = ((h - s) / 2, (w - s) / 2);
        let crop = self
            .pixels
            .slice(ndarray::s![y0..y0 + s, x0..x0 + s, ..])
            .to_owned();
        let cropped = Self {
            id: self.id.clone(),
            pixels: crop,
            role: self.role,
            source_path: self.source_path.clone(),
        };
        cropped.resized(side, side)
    }

    /// Rec. 601 luma plane.
    pub fn luminance(&self) -> Array2<f64> {
        let (h, w, _) = self.pixels.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            0.299 * self.pixels[[y, x, 0]] + 0.587 * self.pixels[[y, x, 1]] + 0.114 * self.pixels[[y, x, 2]]
        })
    }

    /// Mean of each channel over non-overlapping `stride x stride` cells.
    pub fn pooled_channels(&self, stride: usize) -> Array3<f64> {
        let (h, w, _) = self.pixels.dim();
        let (gh, gw) = (h / stride, w / stride);
        let norm = (stride * stride) as f64;
        let mut out = Array3::zeros((3, gh, gw));
        for y in 0..gh * stride {
            for x in 0..gw * stride {
                for c in 0..3 {
                    out[[c, y / stride, x / stride]] += self.pixels[[y, x, c]] / norm;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        let mut px = Array3::zeros((4, 4, 3));
        px[[1, 1, 0]] = 1.5;
        assert!(ImageRecord::new("x", px, ImageRole::Content).is_err());
    }

    #[test]
    fn png_round_trip_preserves_quantized_pixels() {
        let px = Array3::from_shape_fn((8, 6, 3), |(y, x, c)| ((y * 31 + x * 7 + c * 50) % 256) as f64 / 255.0);
        let rec = ImageRecord::new("a", px, ImageRole::Style).unwrap();
        let back = ImageRecord::decode("a", &rec.encode_png().unwrap(), ImageRole::Style).unwrap();
        assert_eq!(back.pixels, rec.pixels);
        assert_eq!(back.content_hash(), rec.content_hash());
    }

    #[test]
    fn center_square_crops_the_long_side() {
        let px = Array3::from_shape_fn((4, 8, 3), |(_, x, _)| if (2..6).contains(&x) { 1.0 } else { 0.0 });
        let rec = ImageRecord::new("a", px, ImageRole::Style).unwrap();
        let sq = rec.center_square(4);
        assert_eq!(sq.pixels.dim(), (4, 4, 3));
        assert!(sq.pixels.iter().all(|&v| v == 1.0));
    }
}
