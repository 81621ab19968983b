//! Visibility masks and masked, re-normalized feature vectors.

use std::path::Path;

use rand::Rng;

use crate::image::{Frame, Image, ImageError};

use super::{EncoderError, SpatialFeatureMap};

/// Binary pixel mask at canonical resolution; `true` marks trusted pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    height: usize,
    width: usize,
    pixels: Vec<bool>,
}

impl VisibilityMask {
    pub fn full(frame: Frame) -> Self {
        Self { height: frame.height, width: frame.width, pixels: vec![true; frame.area()] }
    }

    pub fn empty(frame: Frame) -> Self {
        Self { height: frame.height, width: frame.width, pixels: vec![false; frame.area()] }
    }

    pub fn from_pixels(frame: Frame, pixels: Vec<bool>) -> Self {
        assert_eq!(pixels.len(), frame.area(), "mask buffer length mismatch");
        Self { height: frame.height, width: frame.width, pixels }
    }

    /// Axis-aligned rectangle `(x, y, w, h)` in pixels, clipped to the frame.
    pub fn from_rect(frame: Frame, x: usize, y: usize, w: usize, h: usize) -> Self {
        let mut m = Self::empty(frame);
        let x1 = (x + w).min(frame.width);
        let y1 = (y + h).min(frame.height);
        for yy in y.min(frame.height)..y1 {
            for xx in x.min(frame.width)..x1 {
                m.pixels[yy * frame.width + xx] = true;
            }
        }
        m
    }

    /// Nonzero pixels are visible.
    pub fn from_image(image: &Image) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            pixels: image.pixels().iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Ok(Self::from_image(&Image::load_png(path)?))
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(self.height, self.width, self.pixels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn frame(&self) -> Frame {
        Frame::new(self.height, self.width)
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn visible_count(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }

    /// Reduces to an `hf x wf` cell grid by area average, keeping cells whose
    /// visible fraction is at least 0.5.
    pub fn cells(&self, hf: usize, wf: usize) -> Result<CellMask, EncoderError> {
        if hf == 0 || wf == 0 || self.height % hf != 0 || self.width % wf != 0 {
            return Err(EncoderError::ShapeMismatch(format!(
                "mask {}x{} does not tile into a {hf}x{wf} feature grid",
                self.height, self.width
            )));
        }
        let (ch, cw) = (self.height / hf, self.width / wf);
        let mut cells = Vec::with_capacity(hf * wf);
        for cy in 0..hf {
            for cx in 0..wf {
                let mut on = 0usize;
                for y in cy * ch..(cy + 1) * ch {
                    let row = &self.pixels[y * self.width + cx * cw..y * self.width + (cx + 1) * cw];
                    on += row.iter().filter(|&&b| b).count();
                }
                cells.push(2 * on >= ch * cw);
            }
        }
        Ok(CellMask { hf, wf, cells })
    }
}

/// Binary mask over feature cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMask {
    pub hf: usize,
    pub wf: usize,
    pub cells: Vec<bool>,
}

impl CellMask {
    pub fn full(hf: usize, wf: usize) -> Self {
        Self { hf, wf, cells: vec![true; hf * wf] }
    }

    pub fn covered(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Indices of covered cells, in row-major order.
    pub fn covered_indices(&self) -> Vec<usize> {
        self.cells.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

/// A masked, flattened, unit-norm feature vector of length `C * Hf * Wf`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedFeatures {
    pub values: Vec<f32>,
    /// L2 norm of the masked vector before normalization.
    pub norm: f64,
}

impl MaskedFeatures {
    pub fn dot(&self, other: &MaskedFeatures) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| *a as f64 * *b as f64).sum()
    }
}

/// Zeroes feature cells outside `mask` (after reduction to the feature grid),
/// flattens and L2-normalizes.
pub fn mask_features(z: &SpatialFeatureMap, mask: &VisibilityMask) -> Result<MaskedFeatures, EncoderError> {
    let cells = mask.cells(z.hf, z.wf)?;
    mask_features_cells(z, &cells)
}

pub fn mask_features_cells(z: &SpatialFeatureMap, cells: &CellMask) -> Result<MaskedFeatures, EncoderError> {
    if (cells.hf, cells.wf) != (z.hf, z.wf) {
        return Err(EncoderError::ShapeMismatch(format!(
            "cell mask {}x{} vs feature grid {}x{}",
            cells.hf, cells.wf, z.hf, z.wf
        )));
    }
    if cells.covered() == 0 {
        return Err(EncoderError::EmptyMask);
    }
    let plane = z.hf * z.wf;
    let mut values = vec![0.0f32; z.values.len()];
    let mut sq = 0.0f64;
    for c in 0..z.c {
        for (i, &on) in cells.cells.iter().enumerate() {
            if on {
                let v = z.values[c * plane + i];
                values[c * plane + i] = v;
                sq += v as f64 * v as f64;
            }
        }
    }
    let norm = sq.sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(EncoderError::ZeroVector);
    }
    for v in &mut values {
        *v = (*v as f64 / norm) as f32;
    }
    Ok(MaskedFeatures { values, norm })
}

/// Gradient of a scalar with respect to the raw features `z`, given its
/// gradient with respect to the masked-normalized output.
pub fn mask_features_backward(masked: &MaskedFeatures, cells: &CellMask, c: usize, grad_out: &[f64]) -> Vec<f32> {
    let n = masked.values.len();
    assert_eq!(grad_out.len(), n);
    let proj: f64 = masked.values.iter().zip(grad_out).map(|(v, g)| *v as f64 * g).sum();
    let plane = cells.hf * cells.wf;
    let mut grad = vec![0.0f32; n];
    for ch in 0..c {
        for (i, &on) in cells.cells.iter().enumerate() {
            if on {
                let k = ch * plane + i;
                grad[k] = ((grad_out[k] - masked.values[k] as f64 * proj) / masked.norm) as f32;
            }
        }
    }
    grad
}

/// Axis-aligned rectangle whose area fraction is uniform in `[lo, hi]`,
/// placed uniformly subject to containment. Pixel rounding only ever grows
/// the rectangle, so its area never falls below the sampled fraction.
pub fn sample_rect_mask<R: Rng + ?Sized>(rng: &mut R, area_fraction_range: [f64; 2], frame: Frame) -> VisibilityMask {
    let [lo, hi] = area_fraction_range;
    assert!(0.0 < lo && lo <= hi && hi <= 1.0, "area fraction range must lie in (0, 1]");
    let a = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let (fh, fw) = (frame.height as f64, frame.width as f64);
    let target = a * fh * fw;
    // Width range that keeps the matching height inside the frame.
    let min_w = (target / fh).max(1.0);
    let w = if fw > min_w { rng.gen_range(min_w..=fw) } else { fw };
    let w_px = (w.ceil() as usize).clamp(1, frame.width);
    let h_px = ((target / w_px as f64).ceil() as usize).clamp(1, frame.height);
    let x = rng.gen_range(0..=frame.width - w_px);
    let y = rng.gen_range(0..=frame.height - h_px);
    VisibilityMask::from_rect(frame, x, y, w_px, h_px)
}
