//! Single-channel float images and PNG I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("image is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    Shape {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
}

/// Canonical frame dimensions in pixels, height along the shoe's long axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
}

impl Frame {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Center in pixel-center coordinates, `(x, y)`.
    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }
}

impl Default for Frame {
    fn default() -> Self {
        Self::new(384, 192)
    }
}

/// Row-major single-channel float image. Pixel values are expected in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "pixel buffer length mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame(&self) -> Frame {
        Frame::new(self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at pixel-center coordinates; zero outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |yy: i64, xx: i64| -> f64 {
            if yy < 0 || xx < 0 || yy >= self.height as i64 || xx >= self.width as i64 {
                0.0
            } else {
                self.data[yy as usize * self.width + xx as usize] as f64
            }
        };
        let mut acc = 0.0;
        // Skip zero-weight taps so exact-integer coordinates reproduce pixels exactly.
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                acc += wy * wx * at(y0 + dy, x0 + dx);
            }
        }
        acc as f32
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn count_above(&self, threshold: f32) -> usize {
        self.data.iter().filter(|&&v| v > threshold).count()
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.frame(), other.frame());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn ensure_frame(&self, frame: Frame) -> Result<(), ImageError> {
        if self.frame() != frame {
            return Err(ImageError::Shape {
                got_h: self.height,
                got_w: self.width,
                want_h: frame.height,
                want_w: frame.width,
            });
        }
        Ok(())
    }

    /// Decodes an 8- or 16-bit grayscale PNG, dividing by the maximum code value.
    /// Color images are converted to luma first.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, image::ImageError> {
        let dynamic = image::load_from_memory(bytes)?;
        Ok(Self::from_dynamic(dynamic))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let dynamic = image::open(path).map_err(|source| ImageError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_dynamic(dynamic))
    }

    fn from_dynamic(dynamic: DynamicImage) -> Self {
        match dynamic {
            DynamicImage::ImageLuma16(buf) => {
                let (w, h) = buf.dimensions();
                let data = buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
                Self::from_vec(h as usize, w as usize, data)
            }
            DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
                let buf = dynamic.to_luma16();
                let (w, h) = buf.dimensions();
                let data = buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
                Self::from_vec(h as usize, w as usize, data)
            }
            other => {
                let buf = other.to_luma8();
                let (w, h) = buf.dimensions();
                let data = buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                Self::from_vec(h as usize, w as usize, data)
            }
        }
    }

    /// Encodes as a 16-bit grayscale PNG.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let raw: Vec<u16> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                .expect("buffer size matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(buf)
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png_bytes()).map_err(|e| ImageError::Write {
            path: path.display().to_string(),
            source: image::ImageError::IoError(e),
        })
    }
}
