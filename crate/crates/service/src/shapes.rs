//! Request-side geometry: mask shapes and the print placement transform.

use serde::{Deserialize, Serialize};
use treadmatch::{Frame, Image, VisibilityMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskShape {
    /// Pixel rectangle `[x, x + w) x [y, y + h)`, clipped to the frame.
    Rect { x: i64, y: i64, w: i64, h: i64 },
    /// Vertices in canonical pixel coordinates; pixel `(x, y)` spans
    /// `[x, x + 1) x [y, y + 1)` and is inside when its center is.
    Polygon { points: Vec<[f64; 2]> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentTransform {
    pub tx: f64,
    pub ty: f64,
    pub rotation_deg: f64,
    pub scale: f64,
}

impl Default for AlignmentTransform {
    fn default() -> Self {
        Self { tx: 0.0, ty: 0.0, rotation_deg: 0.0, scale: 1.0 }
    }
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum ShapeError {
    #[error("polygon needs at least 3 vertices")]
    TooFewVertices,
    #[error("polygon has non-finite coordinates")]
    NonFinite,
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("rectangle does not overlap the frame")]
    EmptyRect,
    #[error("transform scale must be positive and finite")]
    BadScale,
    #[error("transform parameters must be finite")]
    NonFiniteTransform,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (d1, d2, d3, d4) = (cross(c, d, a), cross(c, d, b), cross(a, b, c), cross(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// Rejects polygons that are too short, degenerate or self-intersecting.
pub fn validate_polygon(points: &[[f64; 2]]) -> Result<(), ShapeError> {
    if points.len() < 3 {
        return Err(ShapeError::TooFewVertices);
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ShapeError::NonFinite);
    }
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (points[i], points[(i + 1) % n]);
            let (c, d) = (points[j], points[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Err(ShapeError::SelfIntersecting(i, j));
            }
        }
    }
    let area2: f64 = (0..n).map(|i| {
        let (a, b) = (points[i], points[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    }).sum();
    if area2.abs() < 1e-9 {
        return Err(ShapeError::ZeroArea);
    }
    Ok(())
}

/// Even-odd fill sampled at pixel centers.
pub fn rasterize_polygon(points: &[[f64; 2]], frame: Frame) -> VisibilityMask {
    let mut mask = VisibilityMask::empty(frame);
    let n = points.len();
    let mut xs = Vec::new();
    for y in 0..frame.height {
        let cy = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (points[i], points[(i + 1) % n]);
            // Half-open rule so a vertex on the scanline counts once.
            if (a[1] <= cy) != (b[1] <= cy) {
                xs.push(a[0] + (cy - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Pixel x is inside when span[0] <= x + 0.5 < span[1].
            let start = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(frame.width as f64);
            let mut x = start;
            while x < end {
                mask.set(y, x as usize, true);
                x += 1.0;
            }
        }
    }
    mask
}

impl MaskShape {
    pub fn rasterize(&self, frame: Frame) -> Result<VisibilityMask, ShapeError> {
        match self {
            MaskShape::Rect { x, y, w, h } => {
                let x0 = (*x).clamp(0, frame.width as i64);
                let y0 = (*y).clamp(0, frame.height as i64);
                let x1 = x.saturating_add(*w).clamp(0, frame.width as i64);
                let y1 = y.saturating_add(*h).clamp(0, frame.height as i64);
                if *w <= 0 || *h <= 0 || x1 <= x0 || y1 <= y0 {
                    return Err(ShapeError::EmptyRect);
                }
                Ok(VisibilityMask::from_rect(frame, x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize))
            }
            MaskShape::Polygon { points } => {
                validate_polygon(points)?;
                Ok(rasterize_polygon(points, frame))
            }
        }
    }
}

impl AlignmentTransform {
    pub fn validate(&self) -> Result<(), ShapeError> {
        if ![self.tx, self.ty, self.rotation_deg].iter().all(|v| v.is_finite()) {
            return Err(ShapeError::NonFiniteTransform);
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(ShapeError::BadScale);
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Places `upload` on the canonical frame: its center goes to the frame
    /// center offset by `(tx, ty)`, scaled by `scale` and rotated by
    /// `rotation_deg` (clockwise on screen, y down). Bilinear, zero outside.
    pub fn apply(&self, upload: &Image, frame: Frame) -> Image {
        let (ucx, ucy) = upload.frame().center();
        let (fcx, fcy) = frame.center();
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        Image::from_fn(frame.height, frame.width, |v, u| {
            let dx = u as f64 - fcx - self.tx;
            let dy = v as f64 - fcy - self.ty;
            // Inverse rotation, then inverse scale.
            let rx = (c * dx + s * dy) / self.scale;
            let ry = (-s * dx + c * dy) / self.scale;
            upload.sample_bilinear(ucx + rx, ucy + ry)
        })
    }
}
