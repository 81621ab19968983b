use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treadmatch::augment::{contact_sheet, AugmentConfig};
use treadmatch::config::ConfigFile;
use treadmatch::dataset::{
    align, generate_synthetic, load_manifest, save_manifest, split_seen_unseen, DatasetManifest, ManifestEntry, Split,
    SyntheticSpec,
};
use treadmatch::encoder::Checkpoint;
use treadmatch::exec::Execution;
use treadmatch::index::build_index;
use treadmatch::metrics::evaluate;
use treadmatch::queryset::{build_query_set, QuerySetConfig};
use treadmatch::retrieval::{batch_query, query, RetrievalConfig};
use treadmatch::training::{train, Trainer, TrainingSet};
use treadmatch::{Channel, Encoder, FeatureIndex, Frame, Image, QuerySpec, VisibilityMask};
use treadmatch_service::ServiceState;

use crate::{Cli, CliError, Command, MaskingFlags, Modality};

const MANIFEST_FILE: &str = "manifest.jsonl";

fn invalid(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<Modality> for Channel {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Depth => Channel::Depth,
            Modality::Print => Channel::Print,
        }
    }
}

impl MaskingFlags {
    fn apply(&self, config: &mut RetrievalConfig) {
        if self.no_feature_masking {
            config.feature_masking = false;
        }
        if self.no_query_print_masking {
            config.query_print_masking = false;
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(invalid)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.training.seed);
    cfg.training.seed = seed;
    // Checkpoints carry their own architecture; only an explicit config is enforced.
    let expected_encoder = cli.config.as_ref().map(|_| cfg.encoder.clone());
    let load_encoder = |path: &Path| Encoder::load(path, expected_encoder.as_ref()).map_err(invalid);

    match cli.command {
        Command::Prepare { synthetic, manifest, fraction_unseen, out } => {
            let fraction = fraction_unseen.unwrap_or(cfg.dataset.fraction_unseen);
            if !(0.0..1.0).contains(&fraction) {
                return Err(invalid(format!("--fraction-unseen must lie in [0, 1), got {fraction}")));
            }
            let prepared = if synthetic {
                let spec = SyntheticSpec {
                    frame: cfg.encoder.frame,
                    ..SyntheticSpec::new(cfg.dataset.synthetic_models, cfg.dataset.synthetic_instances_per_model, seed)
                };
                generate_synthetic(&spec, &out).map_err(runtime)?
            } else {
                let raw = load_manifest(manifest.expect("clap requires --manifest")).map_err(invalid)?;
                align_raw(&raw, cfg.dataset.foreground_threshold, cfg.encoder.frame, &out)?
            };
            let prepared = split_seen_unseen(&prepared, fraction, seed).map_err(invalid)?;
            let path = out.join(MANIFEST_FILE);
            save_manifest(&prepared, &path).map_err(runtime)?;
            log::info!("wrote {} entries to {}", prepared.entries.len(), path.display());
            println!("{}", path.display());
        }
        Command::AugmentPreview { manifest, instance, out } => {
            let manifest = load_manifest(&manifest).map_err(invalid)?;
            let entry = match &instance {
                Some(id) => manifest.entries.iter().find(|e| &e.instance_id == id),
                None => manifest.entries.first(),
            }
            .ok_or_else(|| invalid("no matching manifest entry"))?;
            let inst = manifest.load_instance(entry).map_err(invalid)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sheet = contact_sheet(&inst.print, &cfg.augment, &mut rng);
            create_parent(&out)?;
            sheet.save_png(&out).map_err(runtime)?;
        }
        Command::Train { manifest, out, steps, resume, modality, no_augment, no_feature_masking } => {
            let mut tc = cfg.training.clone();
            if let Some(s) = steps {
                tc.steps = s;
            }
            if let Some(m) = modality {
                tc.database_modality = m.into();
            }
            if no_augment {
                tc.augment = AugmentConfig::disabled();
            }
            if no_feature_masking {
                tc.feature_masking = false;
            }
            tc.validate().map_err(invalid)?;
            let manifest = load_manifest(&manifest).map_err(invalid)?;
            let set = TrainingSet::from_manifest(&manifest).map_err(invalid)?;
            let mut trainer = match &resume {
                Some(p) => {
                    let ckpt = Checkpoint::read(p).map_err(invalid)?;
                    Trainer::from_checkpoint(&ckpt, tc, Execution::Parallel).map_err(invalid)?
                }
                None => {
                    let enc = Encoder::new(cfg.encoder.clone()).map_err(invalid)?;
                    Trainer::new(enc, tc, Execution::Parallel).map_err(invalid)?
                }
            };
            if trainer.encoder().frame() != manifest.canonical_size {
                return Err(invalid(frame_mismatch(trainer.encoder().frame(), manifest.canonical_size)));
            }
            let outcome = train(&mut trainer, &set, &out).map_err(runtime)?;
            if trainer.skipped() > 0 {
                log::warn!("{} steps skipped (empty mask cells or zero features)", trainer.skipped());
            }
            println!("{}", outcome.checkpoint.display());
        }
        Command::BuildIndex { manifest, weights, out, modality } => {
            let encoder = load_encoder(&weights)?;
            let manifest = load_manifest(&manifest).map_err(invalid)?;
            if encoder.frame() != manifest.canonical_size {
                return Err(invalid(frame_mismatch(encoder.frame(), manifest.canonical_size)));
            }
            let modality = modality.map(Channel::from).unwrap_or(cfg.training.database_modality);
            let index = build_index(&manifest, &encoder, modality, Execution::Parallel).map_err(runtime)?;
            create_parent(&out)?;
            index.save(&out).map_err(runtime)?;
            log::info!("indexed {} entries", index.len());
        }
        Command::Query { index, weights, print, mask, k, query_id, out, masking } => {
            let encoder = load_encoder(&weights)?;
            let index = FeatureIndex::load(&index).map_err(invalid)?;
            let frame = encoder.frame();
            let print = Image::load_png(&print).map_err(invalid)?;
            print.ensure_frame(frame).map_err(invalid)?;
            let mask = match mask.as_deref() {
                Some(m) => parse_mask(m, frame)?,
                None => VisibilityMask::full(frame),
            };
            let k = k.unwrap_or(cfg.retrieval.k);
            let mut rc = cfg.retrieval.clone();
            masking.apply(&mut rc);
            let spec = QuerySpec { query_id: query_id.unwrap_or_else(|| "query".into()), print, mask, k };
            let result = query(&index, &encoder, &spec, &rc, Execution::Parallel).map_err(invalid)?;
            emit(&result.to_json(), out.as_deref())?;
        }
        Command::Evaluate {
            index,
            weights,
            manifest,
            k,
            queries_per_instance,
            mask_area,
            no_query_augment,
            out,
            csv,
            masking,
        } => {
            let encoder = load_encoder(&weights)?;
            let index = FeatureIndex::load(&index).map_err(invalid)?;
            let manifest = load_manifest(&manifest).map_err(invalid)?;
            let mut metric = cfg.metrics.clone();
            if let Some(k) = k {
                metric.k = k;
            }
            metric.validate().map_err(invalid)?;
            let qs = QuerySetConfig {
                queries_per_instance,
                mask_area_fraction_range: parse_range(&mask_area)?,
                augment: if no_query_augment { AugmentConfig::disabled() } else { cfg.augment.clone() },
                k: metric.k,
                seed,
            };
            let (specs, gt) = build_query_set(&manifest, &qs).map_err(invalid)?;
            let mut rc = cfg.retrieval.clone();
            masking.apply(&mut rc);
            let results = batch_query(&index, &encoder, &specs, &rc, Execution::Parallel)
                .into_iter()
                .collect::<Result<Vec<_>, _>>()
                .map_err(runtime)?;
            let has_unseen = manifest.entries.iter().any(|e| e.split == Split::RefOnly);
            let seen: BTreeSet<String> = manifest.train_model_ids().into_iter().map(String::from).collect();
            let report = evaluate(&results, &gt, &metric, has_unseen.then_some(&seen), Execution::Parallel).map_err(runtime)?;
            log::info!("hit@{k} {:.4}  mAP@{k} {:.4}", report.hit_at_k, report.map_at_k, k = metric.k);
            if let Some(p) = &csv {
                create_parent(p)?;
                fs::write(p, report.to_csv()).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            }
            emit(&report.to_json(), out.as_deref())?;
        }
        Command::Serve { index, weights, manifest, bind, static_dir } => {
            let encoder = weights.as_deref().map(load_encoder).transpose()?;
            let index = index.map(|p| FeatureIndex::load(&p).map_err(invalid)).transpose()?;
            if let (Some(i), Some(e)) = (&index, &encoder) {
                i.check_encoder(e).map_err(invalid)?;
            }
            if index.is_none() || encoder.is_none() {
                log::warn!("index or weights missing; queries will return 503");
            }
            let manifest = manifest.map(|p| load_manifest(&p).map_err(invalid)).transpose()?;
            let mut settings = cfg.service.clone();
            if let Some(b) = bind {
                settings.bind = b;
            }
            if static_dir.is_some() {
                settings.static_dir = static_dir;
            }
            let addr: SocketAddr = settings.bind.parse().map_err(|e| invalid(format!("bind address {}: {e}", settings.bind)))?;
            let state = Arc::new(ServiceState::new(index, encoder, manifest, settings, cfg.retrieval.clone()));
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(treadmatch_service::serve(state, addr)).map_err(runtime)?;
        }
    }
    Ok(())
}

fn frame_mismatch(encoder: Frame, data: Frame) -> String {
    format!(
        "encoder frame {}x{} does not match dataset frame {}x{}",
        encoder.height, encoder.width, data.height, data.width
    )
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => fs::create_dir_all(d).map_err(|e| runtime(format!("{}: {e}", d.display()))),
        _ => Ok(()),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => {
            create_parent(p)?;
            fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display())))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// `"x,y,w,h"` as a clipped rectangle, anything else as a mask PNG path.
fn parse_mask(arg: &str, frame: Frame) -> Result<VisibilityMask, CliError> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    if parts.len() == 4 {
        let v: Vec<i64> = parts
            .iter()
            .map(|p| p.parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|_| invalid(format!("--mask rectangle must be four integers x,y,w,h, got {arg:?}")))?;
        let (x, y, w, h) = (v[0], v[1], v[2], v[3]);
        let x0 = x.clamp(0, frame.width as i64);
        let y0 = y.clamp(0, frame.height as i64);
        let x1 = x.saturating_add(w).clamp(0, frame.width as i64);
        let y1 = y.saturating_add(h).clamp(0, frame.height as i64);
        if w <= 0 || h <= 0 || x1 <= x0 || y1 <= y0 {
            return Err(invalid(format!("--mask rectangle {arg:?} does not overlap the frame")));
        }
        return Ok(VisibilityMask::from_rect(frame, x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize));
    }
    let mask = VisibilityMask::load_png(arg).map_err(invalid)?;
    if mask.frame() != frame {
        return Err(invalid(frame_mismatch(frame, mask.frame())));
    }
    Ok(mask)
}

fn parse_range(arg: &str) -> Result<[f64; 2], CliError> {
    let bad = || invalid(format!("expected \"lo,hi\" with 0 < lo <= hi <= 1, got {arg:?}"));
    let (lo, hi) = arg.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(bad());
    }
    Ok([lo, hi])
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

/// Aligns each raw depth map and carries its print through the same transform.
/// Entries whose depth map cannot be aligned are skipped with a warning.
fn align_raw(raw: &DatasetManifest, threshold: f32, frame: Frame, out: &Path) -> Result<DatasetManifest, CliError> {
    for sub in ["depth", "print"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    }
    let mut entries = Vec::new();
    for e in &raw.entries {
        let depth = Image::load_png(raw.resolve(&e.depth_path)).map_err(invalid)?;
        let print = Image::load_png(raw.resolve(&e.print_path)).map_err(invalid)?;
        if depth.frame() != print.frame() {
            return Err(invalid(format!("{}: depth and print sizes differ", e.instance_id)));
        }
        let aligned = match align(&depth, threshold, frame) {
            Ok(a) => a,
            Err(err) => {
                log::warn!("skipping {}: {err}", e.instance_id);
                continue;
            }
        };
        if aligned.degenerate_moments {
            log::warn!("{}: isotropic foreground, orientation not normalized", e.instance_id);
        }
        let stem = file_stem(&e.instance_id);
        let depth_path = format!("depth/{stem}.png");
        let print_path = format!("print/{stem}.png");
        aligned.image.save_png(out.join(&depth_path)).map_err(runtime)?;
        aligned.apply_to(&print, frame).save_png(out.join(&print_path)).map_err(runtime)?;
        entries.push(ManifestEntry { depth_path, print_path, ..e.clone() });
    }
    Ok(DatasetManifest::new(entries, frame, out.to_path_buf()))
}
