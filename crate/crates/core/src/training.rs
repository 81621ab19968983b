//! Supervised contrastive training over masked depth/print feature pairs.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{apply_pixel_mask, AugmentConfig, AugmentError, DegradationRecipe};
use crate::dataset::{DatasetError, DatasetManifest, ShoeInstance, Split};
use crate::encoder::{Checkpoint, CheckpointTensor};
use crate::encoder::{mask_features_backward, mask_features_cells, sample_rect_mask, CellMask};
use crate::encoder::{Channel, Encoder, EncoderError, VisibilityMask};
use crate::exec::Execution;
use crate::image::Image;
use crate::nn::Adam;

/// Unit-norm tolerance for loss inputs.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("anchor {0} has no positive in the batch")]
    AnchorWithoutPositive(usize),
    #[error("feature {index} has norm {norm}, expected 1")]
    NonUnitFeature { index: usize, norm: f64 },
    #[error("need {required} trainable models, found {available}")]
    InsufficientModels { available: usize, required: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    /// Models per batch; each contributes two instances.
    pub n_models_per_batch: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub mask_area_fraction_range: [f64; 2],
    pub seed: u64,
    /// Mask features of both branches with the batch mask (otherwise full-grid normalization).
    pub feature_masking: bool,
    /// Zero augmented print pixels outside the batch mask before encoding.
    pub query_print_masking: bool,
    /// Image used on the database side of each pair.
    pub database_modality: Channel,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    /// Filled from the top-level augment section.
    #[serde(skip)]
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            n_models_per_batch: 4,
            learning_rate: 1e-4,
            steps: 2000,
            mask_area_fraction_range: [0.25, 1.0],
            seed: 0,
            feature_masking: true,
            query_print_masking: true,
            database_modality: Channel::Depth,
            checkpoint_every: 500,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if self.n_models_per_batch < 2 {
            return bad("n_models_per_batch must be at least 2");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        let [lo, hi] = self.mask_area_fraction_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad("mask_area_fraction_range must satisfy 0 < lo <= hi <= 1");
        }
        self.augment.validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Loss

fn check_batch<F: AsRef<[f64]>, L: PartialEq>(features: &[F], labels: &[L], tau: f64) -> Result<(), TrainError> {
    assert_eq!(features.len(), labels.len(), "one label per feature");
    if !(tau > 0.0) {
        return Err(TrainError::InvalidConfig("tau must be positive".into()));
    }
    for i in 0..labels.len() {
        if !(0..labels.len()).any(|j| j != i && labels[j] == labels[i]) {
            return Err(TrainError::AnchorWithoutPositive(i));
        }
    }
    Ok(())
}

fn check_unit<F: AsRef<[f64]>>(features: &[F]) -> Result<(), TrainError> {
    for (index, f) in features.iter().enumerate() {
        let norm = f.as_ref().iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(TrainError::NonUnitFeature { index, norm });
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Supervised contrastive loss, summed over anchors.
pub fn supcon_loss<F: AsRef<[f64]>, L: PartialEq>(features: &[F], labels: &[L], tau: f64) -> Result<f64, TrainError> {
    supcon_loss_with_grad(features, labels, tau).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every feature vector.
pub fn supcon_loss_with_grad<F: AsRef<[f64]>, L: PartialEq>(
    features: &[F],
    labels: &[L],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    check_unit(features)?;
    supcon_objective(features, labels, tau)
}

/// Same as [`supcon_loss_with_grad`] without the unit-norm precondition, so
/// finite differences can step off the sphere.
pub fn supcon_objective<F: AsRef<[f64]>, L: PartialEq>(
    features: &[F],
    labels: &[L],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    check_batch(features, labels, tau)?;
    let n = features.len();
    let dim = features.first().map_or(0, |f| f.as_ref().len());
    let mut s = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dot(features[i].as_ref(), features[j].as_ref()) / tau;
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    // g[i][j] = dL/ds_ij contributed by anchor i.
    let mut g = vec![0.0f64; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let max = (0..n).filter(|&a| a != i).map(|a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let log_denom = max + denom.ln();
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        let inv_p = 1.0 / positives.len() as f64;
        for &p in &positives {
            loss -= inv_p * (row[p] - log_denom);
            g[i * n + p] -= inv_p;
        }
        for a in (0..n).filter(|&a| a != i) {
            g[i * n + a] += (row[a] - log_denom).exp();
        }
    }
    let mut grads = vec![vec![0.0f64; dim]; n];
    for (k, grad) in grads.iter_mut().enumerate() {
        for j in (0..n).filter(|&j| j != k) {
            let w = (g[k * n + j] + g[j * n + k]) / tau;
            if w != 0.0 {
                for (o, v) in grad.iter_mut().zip(features[j].as_ref()) {
                    *o += w * v;
                }
            }
        }
    }
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// Batches

/// Training instances grouped by model, in sorted model order.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    models: Vec<(String, Vec<ShoeInstance>)>,
}

impl TrainingSet {
    pub fn from_instances(instances: Vec<ShoeInstance>) -> Self {
        let mut by_model: BTreeMap<String, Vec<ShoeInstance>> = BTreeMap::new();
        for inst in instances {
            by_model.entry(inst.model_id.clone()).or_default().push(inst);
        }
        let mut models: Vec<_> = by_model.into_iter().collect();
        for (_, v) in &mut models {
            v.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        }
        Self { models }
    }

    /// Loads every train-split entry.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self, TrainError> {
        let instances = manifest
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| manifest.load_instance(e))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_instances(instances))
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_instances(&self) -> usize {
        self.models.iter().map(|(_, v)| v.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct PairRecord {
    pub model_id: String,
    pub instance_id: String,
    pub depth: Image,
    pub print: Image,
}

#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub pairs: Vec<PairRecord>,
    pub mask: VisibilityMask,
    /// Models that had a single instance and were paired with themselves.
    pub duplicated_models: Vec<String>,
}

/// Samples `n_models_per_batch` models with two instances each and one
/// rectangular mask for the whole batch.
pub fn build_batch<R: rand::Rng + ?Sized>(set: &TrainingSet, config: &TrainConfig, rng: &mut R) -> Result<TrainBatch, TrainError> {
    let n = config.n_models_per_batch;
    if set.n_models() < n {
        return Err(TrainError::InsufficientModels { available: set.n_models(), required: n });
    }
    let chosen: Vec<usize> = rand::seq::index::sample(rng, set.n_models(), n).into_vec();
    let mut pairs = Vec::with_capacity(2 * n);
    let mut duplicated_models = Vec::new();
    for m in chosen {
        let (model_id, instances) = &set.models[m];
        let picks: Vec<&ShoeInstance> = if instances.len() >= 2 {
            instances.choose_multiple(rng, 2).collect()
        } else {
            log::warn!("model {model_id} has one instance, pairing it with itself");
            duplicated_models.push(model_id.clone());
            vec![&instances[0], &instances[0]]
        };
        for inst in picks {
            pairs.push(PairRecord {
                model_id: model_id.clone(),
                instance_id: inst.instance_id.clone(),
                depth: inst.depth.clone(),
                print: inst.print.clone(),
            });
        }
    }
    let frame = pairs[0].depth.frame();
    let mask = sample_rect_mask(rng, config.mask_area_fraction_range, frame);
    Ok(TrainBatch { pairs, mask, duplicated_models })
}

// ---------------------------------------------------------------------------
// Optimization

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub loss: f64,
    pub positives_min: usize,
    pub positives_max: usize,
    pub positives_mean: f64,
    pub grad_norm: f64,
    /// True when the batch was dropped (empty mask or all-zero masked features).
    pub skipped: bool,
}

/// Independent random stream for each step, so runs resume exactly.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

pub struct Trainer {
    encoder: Encoder,
    optimizer: Adam,
    config: TrainConfig,
    step: u64,
    skipped: u64,
    exec: Execution,
}

impl Trainer {
    pub fn new(encoder: Encoder, config: TrainConfig, exec: Execution) -> Result<Self, TrainError> {
        config.validate()?;
        let optimizer = Adam::new(encoder.n_params(), config.learning_rate);
        Ok(Self { encoder, optimizer, config, step: 0, skipped: 0, exec })
    }

    /// Restores encoder weights, optimizer moments and the step counter.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: TrainConfig, exec: Execution) -> Result<Self, TrainError> {
        let encoder = ckpt.to_encoder(None)?;
        let mut trainer = Self::new(encoder, config, exec)?;
        let corrupt = |m: &str| TrainError::Encoder(EncoderError::CorruptCheckpoint(m.to_string()));
        let step = ckpt.extra.get("step").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("checkpoint has no step"))?;
        trainer.step = step;
        trainer.skipped = ckpt.extra.get("skipped").and_then(|v| v.as_u64()).unwrap_or(0);
        trainer.optimizer.t = ckpt.extra.get("adam_t").and_then(|v| v.as_u64()).unwrap_or(0);
        for (name, dst) in [("optimizer.m", &mut trainer.optimizer.m), ("optimizer.v", &mut trainer.optimizer.v)] {
            match ckpt.tensor(name) {
                Some(t) if t.data.len() == dst.len() => dst.copy_from_slice(&t.data),
                Some(_) => return Err(corrupt(&format!("{name} has the wrong length"))),
                None if step == 0 => {}
                None => return Err(corrupt(&format!("missing {name}"))),
            }
        }
        Ok(trainer)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn into_encoder(self) -> Encoder {
        self.encoder
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let extra = serde_json::json!({
            "step": self.step,
            "skipped": self.skipped,
            "adam_t": self.optimizer.t,
            "train": self.config,
            "augment": self.config.augment,
        });
        let n = self.optimizer.m.len();
        let tensors = vec![
            CheckpointTensor { name: "optimizer.m".into(), shape: vec![n], data: self.optimizer.m.clone() },
            CheckpointTensor { name: "optimizer.v".into(), shape: vec![n], data: self.optimizer.v.clone() },
        ];
        Checkpoint::from_encoder(&self.encoder, extra, tensors)
    }

    /// Samples this step's batch and applies one update.
    pub fn step(&mut self, set: &TrainingSet) -> Result<LossReport, TrainError> {
        let mut rng = step_rng(self.config.seed, self.step);
        let batch = build_batch(set, &self.config, &mut rng)?;
        self.train_step(&batch, &mut rng)
    }

    /// Encodes the batch, evaluates the loss and updates the weights once.
    /// `rng` drives print augmentation.
    pub fn train_step<R: rand::Rng + ?Sized>(&mut self, batch: &TrainBatch, rng: &mut R) -> Result<LossReport, TrainError> {
        let step = self.step;
        self.step += 1;
        let (loss, grads) = match self.loss_and_grad(batch, rng)? {
            Ok(v) => v,
            Err(why) => return Ok(self.skip(step, why)),
        };
        let grad_norm = grads.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
        self.optimizer.lr = self.config.learning_rate;
        self.optimizer.step(self.encoder.params_mut(), &grads);

        let labels: Vec<&str> = batch.pairs.iter().flat_map(|p| [p.model_id.as_str(), p.model_id.as_str()]).collect();
        let counts: Vec<usize> = (0..labels.len())
            .map(|i| (0..labels.len()).filter(|&j| j != i && labels[j] == labels[i]).count())
            .collect();
        Ok(LossReport {
            step,
            loss,
            positives_min: counts.iter().copied().min().unwrap_or(0),
            positives_max: counts.iter().copied().max().unwrap_or(0),
            positives_mean: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
            grad_norm,
            skipped: false,
        })
    }

    /// Loss and parameter gradient of one batch, leaving the weights alone.
    /// `None` when the batch would be skipped.
    pub fn batch_gradient<R: rand::Rng + ?Sized>(
        &self,
        batch: &TrainBatch,
        rng: &mut R,
    ) -> Result<Option<(f64, Vec<f32>)>, TrainError> {
        Ok(self.loss_and_grad(batch, rng)?.ok())
    }

    /// Mutable access for perturbation tests.
    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    #[allow(clippy::type_complexity)]
    fn loss_and_grad<R: rand::Rng + ?Sized>(
        &self,
        batch: &TrainBatch,
        rng: &mut R,
    ) -> Result<Result<(f64, Vec<f32>), &'static str>, TrainError> {
        let frame = self.encoder.frame();
        let (c, hf, wf) = self.encoder.feature_shape();
        let cells = if self.config.feature_masking {
            match batch.mask.cells(hf, wf) {
                Ok(c) if c.covered() > 0 => c,
                Ok(_) | Err(EncoderError::EmptyMask) => return Ok(Err("mask covers no feature cell")),
                Err(e) => return Err(e.into()),
            }
        } else {
            CellMask::full(hf, wf)
        };

        let recipes: Vec<DegradationRecipe> =
            batch.pairs.iter().map(|_| DegradationRecipe::sample(&self.config.augment, frame, rng)).collect();
        let db_channel = self.config.database_modality;
        let query_masking = self.config.query_print_masking;
        // Even slots hold the database image, odd slots the degraded print.
        let inputs: Vec<(Image, Channel)> = batch
            .pairs
            .iter()
            .zip(&recipes)
            .flat_map(|(p, recipe)| {
                let db = match db_channel {
                    Channel::Depth => p.depth.clone(),
                    Channel::Print => p.print.clone(),
                };
                let mut q = recipe.apply(&p.print);
                if query_masking {
                    q = apply_pixel_mask(&q, &batch.mask);
                }
                [(db, db_channel), (q, Channel::Print)]
            })
            .collect();
        let labels: Vec<&str> = batch.pairs.iter().flat_map(|p| [p.model_id.as_str(), p.model_id.as_str()]).collect();

        let encoder = &self.encoder;
        let encoded = self.exec.map(&inputs, |(img, ch)| encoder.encode_train(img, *ch));
        let mut tapes = Vec::with_capacity(encoded.len());
        let mut masked = Vec::with_capacity(encoded.len());
        for e in encoded {
            let (z, tape) = e?;
            match mask_features_cells(&z, &cells) {
                Ok(m) => masked.push(m),
                Err(EncoderError::ZeroVector) => return Ok(Err("masked features vanish")),
                Err(e) => return Err(e.into()),
            }
            tapes.push(tape);
        }
        let feats: Vec<Vec<f64>> = masked.iter().map(|m| m.values.iter().map(|&v| v as f64).collect()).collect();
        let (loss, grad_feats) = supcon_loss_with_grad(&feats, &labels, self.config.tau)?;

        let jobs: Vec<_> = tapes.into_iter().zip(masked.iter().zip(&grad_feats)).collect();
        let n_params = encoder.n_params();
        let per_image = self.exec.map_owned(jobs, |(tape, (m, gf))| {
            let mut g = vec![0.0f32; n_params];
            let gz = mask_features_backward(m, &cells, c, gf);
            encoder.backward(tape, gz, &mut g);
            g
        });
        // Fixed summation order keeps parallel and sequential runs identical.
        let mut grads = vec![0.0f32; n_params];
        for g in &per_image {
            for (a, b) in grads.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(Ok((loss, grads)))
    }

    fn skip(&mut self, step: u64, why: &str) -> LossReport {
        self.skipped += 1;
        log::warn!("step {step}: {why}, batch skipped ({} so far)", self.skipped);
        LossReport {
            step,
            loss: f64::NAN,
            positives_min: 0,
            positives_max: 0,
            positives_mean: 0.0,
            grad_norm: 0.0,
            skipped: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Driver

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_curve: PathBuf,
    pub reports: Vec<LossReport>,
}

pub const CHECKPOINT_FILE: &str = "encoder.ckpt";
pub const LOSS_CURVE_FILE: &str = "loss.csv";

/// Runs `trainer` until it reaches `config.steps`, writing the checkpoint to
/// `out_dir` periodically and at the end and appending to the loss curve.
pub fn train(trainer: &mut Trainer, set: &TrainingSet, out_dir: impl AsRef<Path>) -> Result<TrainOutcome, TrainError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let loss_curve = out_dir.join(LOSS_CURVE_FILE);
    let fresh = trainer.step_count() == 0 || !loss_curve.exists();
    let mut csv = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&loss_curve)
        .map_err(io_err(&loss_curve))?;
    if fresh {
        writeln!(csv, "step,loss,grad_norm").map_err(io_err(&loss_curve))?;
    }
    let mut reports = Vec::new();
    let every = trainer.config.checkpoint_every;
    while trainer.step_count() < trainer.config.steps {
        let r = trainer.step(set)?;
        writeln!(csv, "{},{},{}", r.step, r.loss, r.grad_norm).map_err(io_err(&loss_curve))?;
        if r.step % 50 == 0 {
            log::info!("step {} loss {:.4} grad_norm {:.4}", r.step, r.loss, r.grad_norm);
        }
        reports.push(r);
        if every > 0 && trainer.step_count() % every == 0 && trainer.step_count() < trainer.config.steps {
            trainer.checkpoint().write(&checkpoint)?;
        }
    }
    trainer.checkpoint().write(&checkpoint)?;
    Ok(TrainOutcome { checkpoint, loss_curve, reports })
}
