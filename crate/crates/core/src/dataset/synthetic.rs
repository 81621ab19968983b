//! Procedural tread patterns for desk-scale experiments.
//!
//! Each shoe model gets a sole outline split into toe, midfoot and heel
//! regions, and every region carries its own tiled motif (stripes, chevrons,
//! lugs or circles) with randomized spacing, angle and phase. Instances of a
//! model differ by a smooth elastic displacement and a contrast change.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::{Frame, Image};

use super::manifest::{save_manifest, DatasetManifest, ManifestEntry, Split};
use super::{DatasetError, ShoeInstance};

/// Depth values above this become contact (print) pixels.
pub const PRINT_THRESHOLD: f32 = 0.5;

const EDGE_SOFTNESS_PX: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotifKind {
    Stripes,
    Chevrons,
    Lugs,
    Circles,
}

#[derive(Clone, Debug)]
pub struct Motif {
    pub kind: MotifKind,
    pub spacing: f64,
    /// Secondary spacing (row pitch for lugs/circles, zigzag period for chevrons).
    pub pitch: f64,
    pub angle: f64,
    pub phase_u: f64,
    pub phase_v: f64,
    /// Fraction of a period that is raised.
    pub duty: f64,
    pub chevron_slope: f64,
}

impl Motif {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let kind = match rng.gen_range(0..4) {
            0 => MotifKind::Stripes,
            1 => MotifKind::Chevrons,
            2 => MotifKind::Lugs,
            _ => MotifKind::Circles,
        };
        Self {
            kind,
            spacing: rng.gen_range(9.0..24.0),
            pitch: rng.gen_range(9.0..24.0),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            phase_u: rng.gen_range(0.0..1.0),
            phase_v: rng.gen_range(0.0..1.0),
            duty: rng.gen_range(0.35..0.6),
            chevron_slope: rng.gen_range(0.5..1.5),
        }
    }

    /// Signed distance (pixels, negative inside) to the raised part of the motif.
    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let u = x * c + y * s;
        let v = -x * s + y * c;
        match self.kind {
            MotifKind::Stripes => band_distance(u / self.spacing + self.phase_u, self.spacing, self.duty),
            MotifKind::Chevrons => {
                let zig = ((v / self.pitch + self.phase_v).rem_euclid(1.0) - 0.5).abs();
                let shifted = u + zig * self.pitch * self.chevron_slope;
                band_distance(shifted / self.spacing + self.phase_u, self.spacing, self.duty)
            }
            MotifKind::Lugs => {
                let row = (v / self.pitch + self.phase_v).floor();
                let stagger = if (row as i64).rem_euclid(2) == 1 { 0.5 } else { 0.0 };
                let tu = (u / self.spacing + self.phase_u + stagger).rem_euclid(1.0);
                let tv = (v / self.pitch + self.phase_v).rem_euclid(1.0);
                let du = (tu - 0.5).abs() * self.spacing - self.duty * self.spacing / 2.0;
                let dv = (tv - 0.5).abs() * self.pitch - 0.6 * self.pitch / 2.0;
                du.max(dv)
            }
            MotifKind::Circles => {
                let row = (v / self.pitch + self.phase_v).floor();
                let stagger = if (row as i64).rem_euclid(2) == 1 { 0.5 } else { 0.0 };
                let tu = (u / self.spacing + self.phase_u + stagger).rem_euclid(1.0);
                let tv = (v / self.pitch + self.phase_v).rem_euclid(1.0);
                let du = (tu - 0.5) * self.spacing;
                let dv = (tv - 0.5) * self.pitch;
                let radius = self.duty * self.spacing.min(self.pitch) / 2.0;
                (du * du + dv * dv).sqrt() - radius
            }
        }
    }
}

fn band_distance(t: f64, period: f64, duty: f64) -> f64 {
    (t.rem_euclid(1.0) - 0.5).abs() * period - duty * period / 2.0
}

fn soft(sd: f64) -> f64 {
    (0.5 - sd / EDGE_SOFTNESS_PX).clamp(0.0, 1.0)
}

/// A shoe model's tread: one motif per sole region (toe, midfoot, heel).
#[derive(Clone, Debug)]
pub struct TreadDesign {
    pub regions: [Motif; 3],
    /// Relative sole width, per model.
    pub width_scale: f64,
}

impl TreadDesign {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            regions: [Motif::sample(rng), Motif::sample(rng), Motif::sample(rng)],
            width_scale: rng.gen_range(0.92..1.0),
        }
    }

    /// Height field in `[0, 1]`, exactly 0 off the sole.
    fn height(&self, frame: Frame, x: f64, y: f64) -> f64 {
        let (cx, cy) = frame.center();
        let half_len = 0.45 * frame.height as f64;
        let half_w = 0.5 * frame.width as f64;
        let ny = (y - cy) / half_len;
        let nx = (x - cx) / half_w;
        if ny.abs() >= 1.0 {
            return 0.0;
        }
        let waist = 0.8 - 0.25 * (-((ny - 0.25) / 0.25).powi(2)).exp();
        let rounding = (1.0 - ny * ny).sqrt().powf(0.5);
        let hw = waist * rounding * self.width_scale;
        let sole = soft((nx.abs() - hw) * half_w);
        if sole == 0.0 {
            return 0.0;
        }
        let region = if ny < -0.15 {
            0
        } else if ny < 0.35 {
            1
        } else {
            2
        };
        let motif = soft(self.regions[region].signed_distance(x, y));
        sole * (0.35 + 0.6 * motif)
    }
}

/// Smooth per-instance displacement plus contrast.
#[derive(Clone, Debug)]
pub struct InstanceVariation {
    pub amplitude: f64,
    pub wavelength: f64,
    pub phases: [f64; 4],
    pub contrast: f64,
}

impl InstanceVariation {
    pub fn identity() -> Self {
        Self {
            amplitude: 0.0,
            wavelength: 100.0,
            phases: [0.0; 4],
            contrast: 1.0,
        }
    }

    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            amplitude: rng.gen_range(0.5..1.5),
            wavelength: rng.gen_range(60.0..150.0),
            phases: [
                rng.gen_range(0.0..tau),
                rng.gen_range(0.0..tau),
                rng.gen_range(0.0..tau),
                rng.gen_range(0.0..tau),
            ],
            contrast: rng.gen_range(0.85..1.0),
        }
    }
}

/// Renders the depth map and its thresholded print.
pub fn render(design: &TreadDesign, variation: &InstanceVariation, frame: Frame) -> (Image, Image) {
    let k = std::f64::consts::TAU / variation.wavelength;
    let p = variation.phases;
    let depth = Image::from_fn(frame.height, frame.width, |y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let dx = variation.amplitude * ((k * yf + p[0]).sin() + 0.5 * (k * xf + p[1]).sin());
        let dy = variation.amplitude * ((k * xf + p[2]).sin() + 0.5 * (k * yf + p[3]).sin());
        (design.height(frame, xf + dx, yf + dy) * variation.contrast) as f32
    });
    let print = threshold_print(&depth);
    (depth, print)
}

pub fn threshold_print(depth: &Image) -> Image {
    let data = depth
        .pixels()
        .iter()
        .map(|&v| if v > PRINT_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Image::from_vec(depth.height(), depth.width(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_models: usize,
    pub instances_per_model: usize,
    pub seed: u64,
    pub frame: Frame,
}

impl SyntheticSpec {
    pub fn new(n_models: usize, instances_per_model: usize, seed: u64) -> Self {
        Self {
            n_models,
            instances_per_model,
            seed,
            frame: Frame::default(),
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.n_models < 2 || self.instances_per_model < 2 {
            return Err(DatasetError::InvalidArgument(format!(
                "synthetic data needs >= 2 models and >= 2 instances per model, got {}x{}",
                self.n_models, self.instances_per_model
            )));
        }
        Ok(())
    }
}

pub fn model_id(index: usize) -> String {
    format!("SYN-{index:04}")
}

pub fn instance_id(model: usize, instance: usize) -> String {
    format!("SYN-{model:04}-i{instance:02}")
}

fn design_rng(seed: u64, model: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + model as u64);
    rng
}

fn instance_rng(seed: u64, model: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a57_0000_0000);
    rng.set_stream(((model as u64) << 16) | instance as u64);
    rng
}

pub fn design_for(seed: u64, model: usize) -> TreadDesign {
    TreadDesign::sample(&mut design_rng(seed, model))
}

/// Noise-free depth map of a model, used to compare designs.
pub fn prototype(seed: u64, model: usize, frame: Frame) -> Image {
    render(&design_for(seed, model), &InstanceVariation::identity(), frame).0
}

/// Generates all instances in memory.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<ShoeInstance>, DatasetError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_models * spec.instances_per_model);
    for m in 0..spec.n_models {
        let design = design_for(spec.seed, m);
        for i in 0..spec.instances_per_model {
            let variation = InstanceVariation::sample(&mut instance_rng(spec.seed, m, i));
            let (depth, print) = render(&design, &variation, spec.frame);
            out.push(ShoeInstance {
                instance_id: instance_id(m, i),
                model_id: model_id(m),
                depth,
                print,
                source_tag: "synthetic".into(),
            });
        }
    }
    Ok(out)
}

/// Generates a synthetic dataset under `out_dir` (PNGs in `depth/` and
/// `print/`, plus `manifest.jsonl`). Every instance is marked `train`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let out_dir = out_dir.as_ref();
    let instances = synthesize(spec)?;
    for sub in ["depth", "print"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| DatasetError::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(instances.len());
    for inst in &instances {
        let depth_path = format!("depth/{}.png", inst.instance_id);
        let print_path = format!("print/{}.png", inst.instance_id);
        inst.depth.save_png(out_dir.join(&depth_path))?;
        inst.print.save_png(out_dir.join(&print_path))?;
        entries.push(ManifestEntry {
            instance_id: inst.instance_id.clone(),
            model_id: inst.model_id.clone(),
            depth_path,
            print_path,
            source_tag: inst.source_tag.clone(),
            split: Split::Train,
        });
    }
    let manifest = DatasetManifest::new(entries, spec.frame, out_dir);
    save_manifest(&manifest, out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
