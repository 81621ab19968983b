//! Noise fields used by erasure and clutter overlays.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Gaussian,
    Perlin,
}

/// A `[0, 1]` valued field with the same dimensions as the image it modulates.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    pub kind: FieldKind,
    pub values: Image,
}

impl NoiseField {
    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self {
            kind: FieldKind::Gaussian,
            values: Image::filled(height, width, value),
        }
    }
}

fn rescale_unit(values: &mut [f32]) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Gradient-lattice noise with `octaves` octaves (persistence 0.5,
/// lacunarity 2), the coarsest lattice spacing `base_scale` pixels, rescaled to `[0, 1]`.
pub fn make_perlin<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    octaves: u32,
    base_scale: f64,
    rng: &mut R,
) -> NoiseField {
    assert!(octaves >= 1, "perlin noise needs at least one octave");
    assert!(base_scale >= 2.0, "perlin base scale must be at least 2 px");
    let mut acc = vec![0.0f64; height * width];
    let mut amplitude = 1.0;
    for octave in 0..octaves {
        let cell = base_scale / f64::from(1u32 << octave);
        let cell = cell.max(1.0);
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let gradients: Vec<(f64, f64)> = (0..gw * gh)
            .map(|_| {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                (a.cos(), a.sin())
            })
            .collect();
        let grad = |gx: usize, gy: usize| gradients[gy * gw + gx];
        for y in 0..height {
            let fy = y as f64 / cell;
            let iy = fy.floor() as usize;
            let ty = fy - iy as f64;
            let sy = fade(ty);
            for x in 0..width {
                let fx = x as f64 / cell;
                let ix = fx.floor() as usize;
                let tx = fx - ix as f64;
                let sx = fade(tx);
                let dot = |cx: usize, cy: usize, dx: f64, dy: f64| {
                    let (gx, gy) = grad(cx, cy);
                    gx * dx + gy * dy
                };
                let n00 = dot(ix, iy, tx, ty);
                let n10 = dot(ix + 1, iy, tx - 1.0, ty);
                let n01 = dot(ix, iy + 1, tx, ty - 1.0);
                let n11 = dot(ix + 1, iy + 1, tx - 1.0, ty - 1.0);
                let top = n00 + sx * (n10 - n00);
                let bottom = n01 + sx * (n11 - n01);
                acc[y * width + x] += amplitude * (top + sy * (bottom - top));
            }
        }
        amplitude *= 0.5;
    }
    let mut values: Vec<f32> = acc.into_iter().map(|v| v as f32).collect();
    rescale_unit(&mut values);
    NoiseField {
        kind: FieldKind::Perlin,
        values: Image::from_vec(height, width, values),
    }
}

/// I.i.d. standard-normal values on `grain`-pixel blocks, rescaled to `[0, 1]`.
pub fn make_gaussian<R: Rng + ?Sized>(height: usize, width: usize, grain: usize, rng: &mut R) -> NoiseField {
    let grain = grain.max(1);
    let bw = width.div_ceil(grain);
    let bh = height.div_ceil(grain);
    let blocks: Vec<f32> = (0..bw * bh).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let mut values: Vec<f32> = (0..height * width)
        .map(|i| {
            let (y, x) = (i / width, i % width);
            blocks[(y / grain) * bw + x / grain]
        })
        .collect();
    rescale_unit(&mut values);
    NoiseField {
        kind: FieldKind::Gaussian,
        values: Image::from_vec(height, width, values),
    }
}
