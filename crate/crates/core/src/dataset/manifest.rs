//! JSON-lines dataset manifests, seen/unseen splits and ground-truth maps.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Frame, Image};

use super::{DatasetError, ShoeInstance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    RefOnly,
    Query,
}

/// One manifest line. Paths are relative to the manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub instance_id: String,
    pub model_id: String,
    pub depth_path: String,
    pub print_path: String,
    pub source_tag: String,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub canonical_size: Frame,
    /// Directory that relative image paths are resolved against.
    pub base_dir: PathBuf,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.canonical_size == other.canonical_size
    }
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, canonical_size: Frame, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            canonical_size,
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Entries that belong to the reference database (everything except queries).
    pub fn reference_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split != Split::Query)
    }

    pub fn model_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.model_id.as_str()).collect()
    }

    pub fn train_model_ids(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.model_id.as_str())
            .collect()
    }

    pub fn load_instance(&self, entry: &ManifestEntry) -> Result<ShoeInstance, DatasetError> {
        let depth = Image::load_png(self.resolve(&entry.depth_path))?;
        let print = Image::load_png(self.resolve(&entry.print_path))?;
        depth.ensure_frame(self.canonical_size)?;
        print.ensure_frame(self.canonical_size)?;
        Ok(ShoeInstance {
            instance_id: entry.instance_id.clone(),
            model_id: entry.model_id.clone(),
            depth,
            print,
            source_tag: entry.source_tag.clone(),
        })
    }

    pub fn check_unique_ids(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.instance_id.as_str()) {
                return Err(DatasetError::DuplicateInstanceId(e.instance_id.clone()));
            }
        }
        Ok(())
    }
}

/// Reads a JSON-lines manifest, verifying unique ids and that every image exists.
/// The canonical size is read from the first depth image header (default frame
/// for an empty manifest).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = DatasetManifest::new(entries, Frame::default(), base_dir);
    manifest.check_unique_ids()?;
    for e in &manifest.entries {
        for p in [&e.depth_path, &e.print_path] {
            if !manifest.resolve(p).is_file() {
                return Err(DatasetError::MissingImageFile(p.clone()));
            }
        }
    }
    if let Some(first) = manifest.entries.first() {
        let resolved = manifest.resolve(&first.depth_path);
        let (w, h) = image::image_dimensions(&resolved).map_err(|source| {
            DatasetError::Image(crate::image::ImageError::Read {
                path: resolved.display().to_string(),
                source,
            })
        })?;
        manifest.canonical_size = Frame::new(h as usize, w as usize);
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    manifest.check_unique_ids()?;
    let mut out = Vec::new();
    for e in &manifest.entries {
        serde_json::to_writer(&mut out, e).expect("manifest entries serialize");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    file.write_all(&out).map_err(|e| DatasetError::io(path, e))
}

/// Marks a seeded random `fraction_unseen` of shoe models as reference-only so
/// none of their instances are trained on. Query entries keep their split.
pub fn split_seen_unseen(
    manifest: &DatasetManifest,
    fraction_unseen: f64,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    if !(0.0..1.0).contains(&fraction_unseen) {
        return Err(DatasetError::InvalidArgument(format!(
            "fraction_unseen must be in [0, 1), got {fraction_unseen}"
        )));
    }
    let mut models: Vec<&str> = manifest.model_ids().into_iter().collect();
    let n_unseen = (fraction_unseen * models.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    models.shuffle(&mut rng);
    let unseen: HashSet<String> = models[..n_unseen].iter().map(|s| s.to_string()).collect();
    let mut out = manifest.clone();
    for e in &mut out.entries {
        if e.split == Split::Query {
            continue;
        }
        e.split = if unseen.contains(&e.model_id) {
            Split::RefOnly
        } else {
            Split::Train
        };
    }
    Ok(out)
}

/// Query id to the set of correct shoe models.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruthMap(pub BTreeMap<String, BTreeSet<String>>);

impl GroundTruthMap {
    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.0.get(query_id)
    }

    pub fn insert(&mut self, query_id: impl Into<String>, models: impl IntoIterator<Item = String>) {
        self.0.entry(query_id.into()).or_default().extend(models);
    }

    /// Every set non-empty and every model present in the reference manifest.
    pub fn validate(&self, reference: &DatasetManifest) -> Result<(), DatasetError> {
        let known = reference.model_ids();
        for (query, models) in &self.0 {
            if models.is_empty() {
                return Err(DatasetError::EmptyGroundTruth(query.clone()));
            }
            if let Some(m) = models.iter().find(|m| !known.contains(m.as_str())) {
                return Err(DatasetError::UnknownModel {
                    query: query.clone(),
                    model: m.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
        fs::write(path, text).map_err(|e| DatasetError::io(path, e))
    }
}
