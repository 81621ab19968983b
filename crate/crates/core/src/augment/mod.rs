//! Simulated crime-scene degradation of clean prints.
//!
//! [`augment`] samples a [`DegradationRecipe`] and applies it. Stages run in a
//! fixed order (occlusion, erasure, noise) and each fires independently with
//! its configured probability. A recipe holds every sampled parameter,
//! including the seeds of its noise fields, so [`DegradationRecipe::apply`]
//! replays an augmentation bit-exactly.

mod noise;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Frame, Image};

pub use noise::{make_gaussian, make_perlin, FieldKind, NoiseField};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augment config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldKindWeights {
    pub gaussian: f64,
    pub perlin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_occlusion: f64,
    pub p_erasure: f64,
    pub p_noise: f64,
    /// Bound on the absolute overlap rotation, degrees.
    pub overlap_rotation_range: f64,
    /// Bound on the absolute overlap translation, as a fraction of frame size.
    pub overlap_translation_range: f64,
    /// Probability that a firing occlusion stage is an overlapping print (else quads).
    pub p_overlap: f64,
    pub quad_count_range: [usize; 2],
    /// Quad area as a fraction of frame area.
    pub quad_size_range: [f64; 2],
    pub erase_fraction_range: [f64; 2],
    pub noise_amplitude_range: [f64; 2],
    pub field_kind_weights: FieldKindWeights,
    pub perlin_octaves: u32,
    pub perlin_base_scale: f64,
    /// Block size of Gaussian fields, pixels.
    pub gaussian_grain: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_occlusion: 0.5,
            p_erasure: 0.5,
            p_noise: 0.5,
            overlap_rotation_range: 20.0,
            overlap_translation_range: 0.15,
            p_overlap: 0.5,
            quad_count_range: [1, 3],
            quad_size_range: [0.05, 0.25],
            erase_fraction_range: [0.2, 0.7],
            noise_amplitude_range: [0.1, 0.5],
            field_kind_weights: FieldKindWeights {
                gaussian: 1.0,
                perlin: 1.0,
            },
            perlin_octaves: 4,
            perlin_base_scale: 32.0,
            gaussian_grain: 2,
        }
    }
}

impl AugmentConfig {
    /// A config that never changes its input.
    pub fn disabled() -> Self {
        Self {
            p_occlusion: 0.0,
            p_erasure: 0.0,
            p_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidConfig(m));
        for (name, p) in [
            ("p_occlusion", self.p_occlusion),
            ("p_erasure", self.p_erasure),
            ("p_noise", self.p_noise),
            ("p_overlap", self.p_overlap),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability, got {p}"));
            }
        }
        let unit_ranges = [
            ("quad_size_range", self.quad_size_range),
            ("erase_fraction_range", self.erase_fraction_range),
            ("noise_amplitude_range", self.noise_amplitude_range),
        ];
        for (name, [lo, hi]) in unit_ranges {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} must be an ordered range within [0, 1], got [{lo}, {hi}]"));
            }
        }
        if self.quad_count_range[0] > self.quad_count_range[1] {
            return bad("quad_count_range must be ordered".into());
        }
        if self.overlap_rotation_range < 0.0 || self.overlap_translation_range < 0.0 {
            return bad("overlap ranges must be non-negative".into());
        }
        let w = self.field_kind_weights;
        if w.gaussian < 0.0 || w.perlin < 0.0 || w.gaussian + w.perlin <= 0.0 {
            return bad("field_kind_weights must be non-negative with a positive sum".into());
        }
        if self.perlin_octaves < 1 || self.perlin_base_scale < 2.0 {
            return bad("perlin needs octaves >= 1 and base_scale >= 2".into());
        }
        Ok(())
    }
}

/// Everything needed to regenerate a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub seed: u64,
    pub octaves: u32,
    pub base_scale: f64,
    pub grain: usize,
}

impl FieldSpec {
    pub fn generate(&self, frame: Frame) -> NoiseField {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match self.kind {
            FieldKind::Perlin => make_perlin(frame.height, frame.width, self.octaves, self.base_scale, &mut rng),
            FieldKind::Gaussian => make_gaussian(frame.height, frame.width, self.grain, &mut rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum QuadFill {
    Erase,
    Saturate(f32),
}

/// A filled convex quadrilateral in pixel-center coordinates `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub vertices: [(f64, f64); 4],
    pub fill: QuadFill,
}

impl Quad {
    /// Inside test for a convex polygon with either winding.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut sign = 0.0f64;
        for i in 0..4 {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % 4];
            let cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
            if cross != 0.0 {
                if sign == 0.0 {
                    sign = cross.signum();
                } else if cross.signum() != sign {
                    return false;
                }
            }
        }
        true
    }

    /// Random parallelogram (convex) with area `area_fraction` of the frame,
    /// random aspect, rotation and shear, centered anywhere in the frame.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, frame: Frame, area_fraction: f64) -> Self {
        let area = area_fraction * frame.area() as f64;
        let aspect: f64 = rng.gen_range(0.2f64..5.0).sqrt();
        let w = area.sqrt() * aspect;
        let h = area / w;
        let shear: f64 = rng.gen_range(-0.5..0.5);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let cx = rng.gen_range(0.0..frame.width as f64);
        let cy = rng.gen_range(0.0..frame.height as f64);
        let (s, c) = theta.sin_cos();
        let local = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)];
        let vertices = local.map(|(u, v)| {
            let lx = u * w + shear * v * h;
            let ly = v * h;
            (cx + c * lx - s * ly, cy + s * lx + c * ly)
        });
        let fill = if rng.gen_bool(0.5) {
            QuadFill::Erase
        } else {
            QuadFill::Saturate(rng.gen_range(0.5..=1.0))
        };
        Self { vertices, fill }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Occlusion {
    Overlap { rotation_deg: f64, tx: f64, ty: f64 },
    Quads { quads: Vec<Quad> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Erasure {
    pub field: FieldSpec,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseOverlay {
    pub field: FieldSpec,
    pub amplitude: f64,
}

/// The fully sampled parameter set of one augmentation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub occlusion: Option<Occlusion>,
    pub erasure: Option<Erasure>,
    pub noise: Option<NoiseOverlay>,
}

impl DegradationRecipe {
    pub fn is_identity(&self) -> bool {
        self.occlusion.is_none() && self.erasure.is_none() && self.noise.is_none()
    }

    pub fn sample<R: Rng + ?Sized>(config: &AugmentConfig, frame: Frame, rng: &mut R) -> Self {
        let mut recipe = DegradationRecipe::default();
        if rng.gen_bool(config.p_occlusion) {
            recipe.occlusion = Some(if rng.gen_bool(config.p_overlap) {
                let r = config.overlap_rotation_range;
                let t = config.overlap_translation_range;
                Occlusion::Overlap {
                    rotation_deg: uniform(rng, -r, r),
                    tx: uniform(rng, -t, t) * frame.width as f64,
                    ty: uniform(rng, -t, t) * frame.height as f64,
                }
            } else {
                let [lo, hi] = config.quad_count_range;
                let count = rng.gen_range(lo..=hi);
                Occlusion::Quads {
                    quads: sample_quads(rng, frame, count, config.quad_size_range),
                }
            });
        }
        if rng.gen_bool(config.p_erasure) {
            let [lo, hi] = config.erase_fraction_range;
            recipe.erasure = Some(Erasure {
                field: sample_field_spec(config, rng),
                fraction: uniform(rng, lo, hi),
            });
        }
        if rng.gen_bool(config.p_noise) {
            let [lo, hi] = config.noise_amplitude_range;
            recipe.noise = Some(NoiseOverlay {
                field: sample_field_spec(config, rng),
                amplitude: uniform(rng, lo, hi),
            });
        }
        recipe
    }

    pub fn apply(&self, print: &Image) -> Image {
        let frame = print.frame();
        let mut out = print.clone();
        match &self.occlusion {
            Some(Occlusion::Overlap { rotation_deg, tx, ty }) => {
                out = occlude_overlap(&out, *rotation_deg, (*tx, *ty));
            }
            Some(Occlusion::Quads { quads }) => out = apply_quads(&out, quads),
            None => {}
        }
        if let Some(e) = &self.erasure {
            out = erase(&out, &e.field.generate(frame), e.fraction);
        }
        if let Some(n) = &self.noise {
            out = add_noise(&out, &n.field.generate(frame), n.amplitude);
        }
        out
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn sample_field_spec<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> FieldSpec {
    let w = config.field_kind_weights;
    let kind = if rng.gen_bool(w.perlin / (w.gaussian + w.perlin)) {
        FieldKind::Perlin
    } else {
        FieldKind::Gaussian
    };
    FieldSpec {
        kind,
        seed: rng.next_u64(),
        octaves: config.perlin_octaves,
        base_scale: config.perlin_base_scale,
        grain: config.gaussian_grain,
    }
}

fn sample_quads<R: Rng + ?Sized>(rng: &mut R, frame: Frame, count: usize, size_fracs: [f64; 2]) -> Vec<Quad> {
    (0..count)
        .map(|_| {
            let a = uniform(rng, size_fracs[0], size_fracs[1]);
            Quad::sample(rng, frame, a)
        })
        .collect()
}

/// Samples and applies a degradation. With every probability at 0 the output
/// equals the input.
pub fn augment<R: Rng + ?Sized>(print: &Image, config: &AugmentConfig, rng: &mut R) -> (Image, DegradationRecipe) {
    let recipe = DegradationRecipe::sample(config, print.frame(), rng);
    (recipe.apply(print), recipe)
}

/// Pixelwise max of the print and a copy rotated about the frame center and
/// then translated by `translation_px = (tx, ty)`.
pub fn occlude_overlap(print: &Image, rotation_deg: f64, translation_px: (f64, f64)) -> Image {
    let (cx, cy) = print.frame().center();
    let (s, c) = rotation_deg.to_radians().sin_cos();
    let (tx, ty) = translation_px;
    let mut out = print.clone();
    for y in 0..print.height() {
        for x in 0..print.width() {
            // Inverse map: undo translation, then rotation.
            let dx = x as f64 - tx - cx;
            let dy = y as f64 - ty - cy;
            let sx = cx + c * dx + s * dy;
            let sy = cy - s * dx + c * dy;
            let v = print.sample_bilinear(sx, sy).clamp(0.0, 1.0);
            if v > out.get(y, x) {
                out.set(y, x, v);
            }
        }
    }
    out
}

/// Samples `count` quads with area fractions in `size_fracs` and composites them.
pub fn occlude_quads<R: Rng + ?Sized>(print: &Image, count: usize, size_fracs: [f64; 2], rng: &mut R) -> (Image, Vec<Quad>) {
    let quads = sample_quads(rng, print.frame(), count, size_fracs);
    (apply_quads(print, &quads), quads)
}

pub fn apply_quads(print: &Image, quads: &[Quad]) -> Image {
    let mut out = print.clone();
    for q in quads {
        let value = match q.fill {
            QuadFill::Erase => 0.0,
            QuadFill::Saturate(v) => v.clamp(0.0, 1.0),
        };
        let xs = q.vertices.map(|v| v.0);
        let ys = q.vertices.map(|v| v.1);
        let x0 = xs.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x1 = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        let y0 = ys.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y1 = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let x1 = (x1 as usize).min(out.width().saturating_sub(1));
        let y1 = (y1 as usize).min(out.height().saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if q.contains(x as f64, y as f64) {
                    out.set(y, x, value);
                }
            }
        }
    }
    out
}

/// Zeroes pixels whose field value is below the `erase_fraction` quantile of the field.
pub fn erase(print: &Image, field: &NoiseField, erase_fraction: f64) -> Image {
    assert_eq!(print.frame(), field.values.frame(), "field and image dimensions differ");
    let erase_fraction = erase_fraction.clamp(0.0, 1.0);
    let mut sorted = field.values.pixels().to_vec();
    sorted.sort_by(f32::total_cmp);
    let idx = (erase_fraction * sorted.len() as f64).floor() as usize;
    let threshold = sorted.get(idx).copied().unwrap_or(f32::INFINITY);
    let data = print
        .pixels()
        .iter()
        .zip(field.values.pixels())
        .map(|(&p, &f)| if f < threshold { 0.0 } else { p })
        .collect();
    Image::from_vec(print.height(), print.width(), data)
}

/// `clip(print + amplitude * field, 0, 1)`.
pub fn add_noise(print: &Image, field: &NoiseField, amplitude: f64) -> Image {
    assert_eq!(print.frame(), field.values.frame(), "field and image dimensions differ");
    let a = amplitude as f32;
    let data = print
        .pixels()
        .iter()
        .zip(field.values.pixels())
        .map(|(&p, &f)| (p + a * f).clamp(0.0, 1.0))
        .collect();
    Image::from_vec(print.height(), print.width(), data)
}

/// Zeroes pixels outside `mask`.
pub fn apply_pixel_mask(image: &Image, mask: &crate::encoder::VisibilityMask) -> Image {
    assert_eq!(image.frame(), mask.frame(), "mask and image dimensions differ");
    let data = image
        .pixels()
        .iter()
        .zip(mask.pixels())
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    Image::from_vec(image.height(), image.width(), data)
}

/// Panels `clean | occluded | erased | noised | composite` side by side,
/// separated by 4 px gutters. Every stage is forced on; the single-stage
/// panels reuse the composite's sampled parameters.
pub fn contact_sheet<R: Rng + ?Sized>(print: &Image, config: &AugmentConfig, rng: &mut R) -> Image {
    let forced = AugmentConfig { p_occlusion: 1.0, p_erasure: 1.0, p_noise: 1.0, ..config.clone() };
    let full = DegradationRecipe::sample(&forced, print.frame(), rng);
    let only = |keep: usize| {
        let r = DegradationRecipe {
            occlusion: if keep == 0 { full.occlusion.clone() } else { None },
            erasure: if keep == 1 { full.erasure.clone() } else { None },
            noise: if keep == 2 { full.noise.clone() } else { None },
        };
        r.apply(print)
    };
    let panels = [print.clone(), only(0), only(1), only(2), full.apply(print)];
    const GUTTER: usize = 4;
    let (h, w) = (print.height(), print.width());
    let mut sheet = Image::filled(h, panels.len() * w + (panels.len() - 1) * GUTTER, 1.0);
    for (k, panel) in panels.iter().enumerate() {
        let x0 = k * (w + GUTTER);
        for y in 0..h {
            for x in 0..w {
                sheet.set(y, x0 + x, panel.get(y, x));
            }
        }
    }
    sheet
}
