//! Persistent reference database of raw (unmasked) spatial features.
//!
//! File layout, little-endian:
//!
//! ```text
//! magic "CRSPIDX1"
//! u32 version | u32 C | u32 Hf | u32 Wf | u32 count
//! [u8; 32] encoder hash
//! u64 label table offset (from file start)
//! count x { u32 instance label offset | u32 model label offset | C*Hf*Wf f32 }
//! label table: u32 byte length + UTF-8, repeated
//! ```
//!
//! Label offsets are relative to the start of the label table.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::DatasetManifest;
use crate::encoder::{Channel, Encoder, EncoderError, SpatialFeatureMap};
use crate::exec::Execution;
use crate::image::Image;

pub const INDEX_MAGIC: &[u8; 8] = b"CRSPIDX1";
pub const INDEX_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 5 * 4 + 32 + 8;

/// Largest fraction of manifest entries `build_index` may skip.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("index format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index file truncated: {0}")]
    TruncatedFile(String),
    #[error("feature shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("duplicate instance id {0}")]
    DuplicateInstanceId(String),
    #[error("no reference entries to index")]
    Empty,
    #[error("{skipped} of {total} entries could not be indexed")]
    TooManySkipped { skipped: usize, total: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexHeader {
    pub version: u32,
    pub c: usize,
    pub hf: usize,
    pub wf: usize,
    pub count: usize,
    pub encoder_hash: [u8; 32],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub instance_id: String,
    pub model_id: String,
}

/// Labels plus one contiguous feature buffer, entry-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureIndex {
    header: IndexHeader,
    entries: Vec<IndexEntry>,
    features: Vec<f32>,
    by_instance: HashMap<String, usize>,
}

impl FeatureIndex {
    pub fn new(shape: (usize, usize, usize), encoder_hash: [u8; 32]) -> Self {
        let (c, hf, wf) = shape;
        Self {
            header: IndexHeader { version: INDEX_VERSION, c, hf, wf, count: 0, encoder_hash },
            entries: Vec::new(),
            features: Vec::new(),
            by_instance: HashMap::new(),
        }
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.header.c, self.header.hf, self.header.wf)
    }

    pub fn feature_len(&self) -> usize {
        self.header.c * self.header.hf * self.header.wf
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &IndexEntry {
        &self.entries[i]
    }

    pub fn features(&self, i: usize) -> &[f32] {
        let n = self.feature_len();
        &self.features[i * n..(i + 1) * n]
    }

    pub fn all_features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature_map(&self, i: usize) -> SpatialFeatureMap {
        let (c, hf, wf) = self.shape();
        SpatialFeatureMap { c, hf, wf, values: self.features(i).to_vec() }
    }

    pub fn find_instance(&self, instance_id: &str) -> Option<usize> {
        self.by_instance.get(instance_id).copied()
    }

    /// Entry positions per model id.
    pub fn models(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.entry(e.model_id.as_str()).or_default().push(i);
        }
        out
    }

    pub fn push(&mut self, instance_id: &str, model_id: &str, z: &SpatialFeatureMap) -> Result<(), IndexError> {
        if z.shape() != self.shape() {
            return Err(IndexError::ShapeMismatch(format!("entry {:?}, index {:?}", z.shape(), self.shape())));
        }
        if self.by_instance.contains_key(instance_id) {
            return Err(IndexError::DuplicateInstanceId(instance_id.to_string()));
        }
        self.by_instance.insert(instance_id.to_string(), self.entries.len());
        self.entries.push(IndexEntry { instance_id: instance_id.to_string(), model_id: model_id.to_string() });
        self.features.extend_from_slice(&z.values);
        self.header.count = self.entries.len();
        Ok(())
    }

    /// Fails unless the encoder produces features of this index's shape.
    pub fn check_encoder(&self, encoder: &Encoder) -> Result<(), IndexError> {
        if encoder.feature_shape() != self.shape() {
            return Err(IndexError::ShapeMismatch(format!(
                "encoder produces {:?}, index stores {:?}",
                encoder.feature_shape(),
                self.shape()
            )));
        }
        if encoder.fingerprint() != self.header.encoder_hash {
            log::warn!("index was built with different encoder weights");
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut labels = Vec::new();
        let mut offsets = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let mut push = |s: &str| {
                let off = labels.len() as u32;
                labels.extend_from_slice(&(s.len() as u32).to_le_bytes());
                labels.extend_from_slice(s.as_bytes());
                off
            };
            offsets.push((push(&e.instance_id), push(&e.model_id)));
        }
        let n = self.feature_len();
        let body = self.entries.len() * (8 + 4 * n);
        let mut out = Vec::with_capacity(HEADER_LEN + body + labels.len());
        out.extend_from_slice(INDEX_MAGIC);
        for v in [INDEX_VERSION, self.header.c as u32, self.header.hf as u32, self.header.wf as u32, self.entries.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.header.encoder_hash);
        out.extend_from_slice(&((HEADER_LEN + body) as u64).to_le_bytes());
        for (i, (a, b)) in offsets.iter().enumerate() {
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&b.to_le_bytes());
            for v in self.features(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&labels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 8 {
            return Err(IndexError::TruncatedFile("shorter than the magic".into()));
        }
        if &bytes[..8] != INDEX_MAGIC {
            return Err(IndexError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::TruncatedFile("incomplete header".into()));
        }
        let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().expect("4 bytes"));
        let version = u32_at(8);
        if version != INDEX_VERSION {
            return Err(IndexError::VersionMismatch { found: version, expected: INDEX_VERSION });
        }
        let (c, hf, wf, count) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize, u32_at(24) as usize);
        let encoder_hash: [u8; 32] = bytes[28..60].try_into().expect("32 bytes");
        let label_start = u64::from_le_bytes(bytes[60..68].try_into().expect("8 bytes")) as usize;
        let n = c * hf * wf;
        let record = 8 + 4 * n;
        let body_end = count
            .checked_mul(record)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| IndexError::Corrupt("entry table size overflows".into()))?;
        if bytes.len() < body_end {
            return Err(IndexError::TruncatedFile(format!("{} bytes, entries need {body_end}", bytes.len())));
        }
        if label_start != body_end {
            return Err(IndexError::ShapeMismatch(format!(
                "label table at {label_start}, header shape {c}x{hf}x{wf} implies {body_end}"
            )));
        }
        let labels = &bytes[label_start..];
        let label = |off: u32| -> Result<String, IndexError> {
            let off = off as usize;
            let len_bytes = labels
                .get(off..off + 4)
                .ok_or_else(|| IndexError::TruncatedFile("label table".into()))?;
            let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
            let s = labels
                .get(off + 4..off + 4 + len)
                .ok_or_else(|| IndexError::TruncatedFile("label table".into()))?;
            String::from_utf8(s.to_vec()).map_err(|_| IndexError::Corrupt("label is not UTF-8".into()))
        };
        let mut index = Self::new((c, hf, wf), encoder_hash);
        index.features.reserve(count * n);
        let mut end_of_labels = 0usize;
        for i in 0..count {
            let p = HEADER_LEN + i * record;
            let (a, b) = (u32_at(p), u32_at(p + 4));
            let (instance_id, model_id) = (label(a)?, label(b)?);
            end_of_labels = end_of_labels
                .max(a as usize + 4 + instance_id.len())
                .max(b as usize + 4 + model_id.len());
            if index.by_instance.insert(instance_id.clone(), i).is_some() {
                return Err(IndexError::DuplicateInstanceId(instance_id));
            }
            index.entries.push(IndexEntry { instance_id, model_id });
            index.features.extend(
                bytes[p + 8..p + record]
                    .chunks_exact(4)
                    .map(|q| f32::from_le_bytes([q[0], q[1], q[2], q[3]])),
            );
        }
        if end_of_labels != labels.len() {
            return Err(IndexError::Corrupt(format!("label table has {} bytes, labels use {end_of_labels}", labels.len())));
        }
        index.header.count = count;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// Encodes every reference (non-query) entry of `manifest` with the image
/// of `modality`. Unreadable entries are skipped and logged; more than
/// [`MAX_SKIP_FRACTION`] skipped fails the build.
pub fn build_index(
    manifest: &DatasetManifest,
    encoder: &Encoder,
    modality: Channel,
    exec: Execution,
) -> Result<FeatureIndex, IndexError> {
    let entries: Vec<_> = manifest.reference_entries().collect();
    if entries.is_empty() {
        return Err(IndexError::Empty);
    }
    let encoded = exec.map(&entries, |e| {
        let rel = match modality {
            Channel::Depth => &e.depth_path,
            Channel::Print => &e.print_path,
        };
        let image = Image::load_png(manifest.resolve(rel)).map_err(|err| err.to_string())?;
        encoder.encode(&image, modality).map_err(|err| err.to_string())
    });
    let mut index = FeatureIndex::new(encoder.feature_shape(), encoder.fingerprint());
    let mut skipped = 0usize;
    for (e, z) in entries.iter().zip(encoded) {
        match z {
            Ok(z) => index.push(&e.instance_id, &e.model_id, &z)?,
            Err(msg) => {
                skipped += 1;
                log::warn!("skipping {}: {msg}", e.instance_id);
            }
        }
    }
    if skipped as f64 > MAX_SKIP_FRACTION * entries.len() as f64 {
        return Err(IndexError::TooManySkipped { skipped, total: entries.len() });
    }
    Ok(index)
}

/// Index over in-memory images, for tests and benchmarks.
pub fn build_index_from_images(
    items: &[(String, String, Image)],
    encoder: &Encoder,
    modality: Channel,
    exec: Execution,
) -> Result<FeatureIndex, IndexError> {
    let encoded = exec.map(items, |(_, _, img)| encoder.encode(img, modality));
    let mut index = FeatureIndex::new(encoder.feature_shape(), encoder.fingerprint());
    for ((instance_id, model_id, _), z) in items.iter().zip(encoded) {
        index.push(instance_id, model_id, &z?)?;
    }
    Ok(index)
}
