//! Moment-based similarity alignment into the canonical frame.

use crate::image::{Frame, Image};

use super::DatasetError;

/// Minimum number of foreground pixels needed to estimate moments.
pub const MIN_FOREGROUND_PIXELS: usize = 50;

/// Fraction of frame height occupied by the foreground's major-axis extent.
pub const EXTENT_FRACTION: f64 = 0.9;

pub const DEFAULT_FOREGROUND_THRESHOLD: f32 = 0.05;

/// Transforms that move no foreground pixel by this much are below what the
/// binary-support estimate can resolve and are treated as the identity.
pub const SUBPIXEL_SNAP: f64 = 0.5;

/// Output of [`align`] along with the estimated transform.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub image: Image,
    /// Set when the foreground was isotropic: only translation and scale were applied.
    pub degenerate_moments: bool,
    /// Input-frame foreground centroid `(x, y)`.
    pub centroid: (f64, f64),
    /// Input-frame unit vector of the major axis `(x, y)`, oriented with `y >= 0`.
    pub major_axis: (f64, f64),
    /// Output pixels per input pixel.
    pub scale: f64,
    /// The transform was below [`SUBPIXEL_SNAP`] and the input was passed through.
    pub snapped: bool,
}

impl Alignment {
    /// Applies the same transform to a companion image of the same raw frame,
    /// e.g. the print of a depth map that was aligned.
    pub fn apply_to(&self, companion: &Image, frame: Frame) -> Image {
        let mut out = if self.snapped {
            companion.clone()
        } else {
            warp(companion, self.centroid, self.major_axis, self.scale, frame)
        };
        out.clamp_unit();
        out
    }
}

fn warp(raw: &Image, (cx, cy): (f64, f64), (ax, ay): (f64, f64), scale: f64, frame: Frame) -> Image {
    // Minor axis completes a proper rotation whose second column is the major axis.
    let (bx, by) = (ay, -ax);
    let (cu, cv) = frame.center();
    Image::from_fn(frame.height, frame.width, |v, u| {
        let du = (u as f64 - cu) / scale;
        let dv = (v as f64 - cv) / scale;
        raw.sample_bilinear(cx + du * bx + dv * ax, cy + du * by + dv * ay)
    })
}

/// Binary-foreground centroid and second moments.
#[derive(Clone, Copy, Debug)]
pub struct Moments {
    pub count: usize,
    pub cx: f64,
    pub cy: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
}

impl Moments {
    pub fn of(image: &Image, threshold: f32) -> Self {
        let (mut n, mut sx, mut sy) = (0usize, 0.0f64, 0.0f64);
        for y in 0..image.height() {
            for x in 0..image.width() {
                if image.get(y, x) > threshold {
                    n += 1;
                    sx += x as f64;
                    sy += y as f64;
                }
            }
        }
        if n == 0 {
            return Self { count: 0, cx: 0.0, cy: 0.0, sxx: 0.0, syy: 0.0, sxy: 0.0 };
        }
        let (cx, cy) = (sx / n as f64, sy / n as f64);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for y in 0..image.height() {
            for x in 0..image.width() {
                if image.get(y, x) > threshold {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    sxx += dx * dx;
                    syy += dy * dy;
                    sxy += dx * dy;
                }
            }
        }
        let n = n as f64;
        Self { count: n as usize, cx, cy, sxx: sxx / n, syy: syy / n, sxy: sxy / n }
    }

    /// Major-axis unit vector oriented so that `y >= 0`, or `None` if the
    /// second-moment matrix is (numerically) isotropic.
    pub fn major_axis(&self) -> Option<(f64, f64)> {
        let half_diff = (self.sxx - self.syy) / 2.0;
        let spread = (half_diff * half_diff + self.sxy * self.sxy).sqrt();
        let mean_var = (self.sxx + self.syy) / 2.0;
        if mean_var <= 0.0 || spread < 1e-3 * mean_var {
            return None;
        }
        let phi = 0.5 * (2.0 * self.sxy).atan2(self.sxx - self.syy);
        let (mut ax, mut ay) = (phi.cos(), phi.sin());
        if ay < 0.0 {
            ax = -ax;
            ay = -ay;
        }
        Some((ax, ay))
    }

    /// Angle between the major axis and the vertical, in degrees (0 when isotropic).
    pub fn tilt_from_vertical_deg(&self) -> f64 {
        match self.major_axis() {
            Some((ax, ay)) => ax.atan2(ay).to_degrees(),
            None => 0.0,
        }
    }
}

/// Aligns `raw` so the foreground centroid sits at the frame center, the
/// principal axis is vertical and the major-axis extent spans 90% of the
/// frame height. Resampling is bilinear, out-of-frame samples are 0.
pub fn align(raw: &Image, foreground_threshold: f32, frame: Frame) -> Result<Alignment, DatasetError> {
    let moments = Moments::of(raw, foreground_threshold);
    if moments.count < MIN_FOREGROUND_PIXELS {
        return Err(DatasetError::TooFewForegroundPixels {
            count: moments.count,
            required: MIN_FOREGROUND_PIXELS,
        });
    }
    let (axis, degenerate) = match moments.major_axis() {
        Some(a) => (a, false),
        None => ((0.0, 1.0), true),
    };
    if degenerate {
        log::warn!("isotropic foreground moments, aligning with translation and scale only");
    }
    let (ax, ay) = axis;

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..raw.height() {
        for x in 0..raw.width() {
            if raw.get(y, x) > foreground_threshold {
                let t = (x as f64 - moments.cx) * ax + (y as f64 - moments.cy) * ay;
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
    }
    let extent = hi - lo + 1.0;
    let scale = EXTENT_FRACTION * frame.height as f64 / extent;

    let (cu, cv) = frame.center();
    if raw.frame() == frame && max_foreground_shift(raw, foreground_threshold, &moments, axis, scale, (cu, cv)) < SUBPIXEL_SNAP {
        let mut out = raw.clone();
        out.clamp_unit();
        return Ok(Alignment {
            image: out,
            degenerate_moments: degenerate,
            centroid: (moments.cx, moments.cy),
            major_axis: axis,
            scale,
            snapped: true,
        });
    }
    let mut out = warp(raw, (moments.cx, moments.cy), axis, scale, frame);
    out.clamp_unit();
    Ok(Alignment {
        image: out,
        degenerate_moments: degenerate,
        centroid: (moments.cx, moments.cy),
        major_axis: axis,
        scale,
        snapped: false,
    })
}

/// Largest distance any foreground pixel would travel under the forward map.
fn max_foreground_shift(
    raw: &Image,
    threshold: f32,
    m: &Moments,
    (ax, ay): (f64, f64),
    scale: f64,
    (cu, cv): (f64, f64),
) -> f64 {
    let (bx, by) = (ay, -ax);
    let mut worst = 0.0f64;
    for y in 0..raw.height() {
        for x in 0..raw.width() {
            if raw.get(y, x) > threshold {
                let (dx, dy) = (x as f64 - m.cx, y as f64 - m.cy);
                let u = cu + scale * (dx * bx + dy * by);
                let v = cv + scale * (dx * ax + dy * ay);
                worst = worst.max((u - x as f64).hypot(v - y as f64));
            }
        }
    }
    worst
}
