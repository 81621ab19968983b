//! Masked cosine ranking of database shoe models for a query print.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::apply_pixel_mask;
use crate::encoder::{mask_features_cells, CellMask, MaskedFeatures};
use crate::encoder::{Channel, Encoder, EncoderError, VisibilityMask};
use crate::exec::Execution;
use crate::image::Image;
use crate::index::{FeatureIndex, IndexError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("mask covers no feature cell")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Encoder(EncoderError),
}

impl From<EncoderError> for RetrievalError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::EmptyMask => Self::EmptyMask,
            EncoderError::ShapeMismatch(m) => Self::ShapeMismatch(m),
            other => Self::Encoder(other),
        }
    }
}

impl From<IndexError> for RetrievalError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::ShapeMismatch(m) => Self::ShapeMismatch(m),
            other => Self::ShapeMismatch(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    /// Restrict both sides to the mask's feature cells (off = full-grid cosine).
    pub feature_masking: bool,
    /// Zero query print pixels outside the mask before encoding.
    pub query_print_masking: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 100, feature_masking: true, query_print_masking: true }
    }
}

#[derive(Clone, Debug)]
pub struct QuerySpec {
    pub query_id: String,
    pub print: Image,
    pub mask: VisibilityMask,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub model_id: String,
    pub best_instance_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub k: usize,
    pub results: Vec<RankedEntry>,
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

impl RankedResult {
    /// Result JSON with scores written to exactly six decimals.
    pub fn to_json(&self) -> String {
        self.to_json_with(&[])
    }

    /// Same as [`RankedResult::to_json`] with extra top-level fields appended.
    pub fn to_json_with(&self, extra: &[(&str, serde_json::Value)]) -> String {
        let mut out = String::new();
        let _ = write!(out, "{{\"query_id\":{},\"k\":{},\"results\":[", json_str(&self.query_id), self.k);
        for (i, r) in self.results.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // Avoid printing "-0.000000" for tiny negative cosines.
            let score = if r.score.abs() < 5e-7 { 0.0 } else { r.score };
            let _ = write!(
                out,
                "{{\"model_id\":{},\"best_instance_id\":{},\"score\":{:.6}}}",
                json_str(&r.model_id),
                json_str(&r.best_instance_id),
                score
            );
        }
        out.push(']');
        for (key, value) in extra {
            let _ = write!(out, ",{}:{}", json_str(key), value);
        }
        out.push('}');
        out
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.results.iter().map(|r| r.model_id.clone()).collect()
    }
}

/// Encodes the query print and masks/normalizes its features.
pub fn encode_query(
    encoder: &Encoder,
    print: &Image,
    mask: &VisibilityMask,
    config: &RetrievalConfig,
) -> Result<(MaskedFeatures, CellMask), RetrievalError> {
    let (_, hf, wf) = encoder.feature_shape();
    let cells = mask.cells(hf, wf)?;
    if cells.covered() == 0 {
        return Err(RetrievalError::EmptyMask);
    }
    let cells = if config.feature_masking { cells } else { CellMask::full(hf, wf) };
    let z = if config.query_print_masking {
        encoder.encode(&apply_pixel_mask(print, mask), Channel::Print)?
    } else {
        encoder.encode(print, Channel::Print)?
    };
    Ok((mask_features_cells(&z, &cells)?, cells))
}

/// Cosine between the query and each entry's masked, re-normalized features.
/// Entries whose masked features vanish score 0.
pub fn score_entries(index: &FeatureIndex, query: &MaskedFeatures, cells: &CellMask, exec: Execution) -> Vec<f64> {
    let (c, hf, wf) = index.shape();
    assert_eq!((cells.hf, cells.wf), (hf, wf), "cell mask matches index grid");
    assert_eq!(query.values.len(), index.feature_len(), "query length matches index");
    let plane = hf * wf;
    let covered = cells.covered_indices();
    exec.map_range(index.len(), |i| {
        let e = index.features(i);
        let (mut dot, mut sq) = (0.0f64, 0.0f64);
        for ch in 0..c {
            let base = ch * plane;
            for &cell in &covered {
                let v = e[base + cell] as f64;
                dot += query.values[base + cell] as f64 * v;
                sq += v * v;
            }
        }
        if sq > 0.0 {
            dot / sq.sqrt()
        } else {
            0.0
        }
    })
}

/// Max over each model's instance scores, sorted by score then model id,
/// truncated to `k`. Within a model, ties go to the smaller instance id.
pub fn aggregate(index: &FeatureIndex, scores: &[f64], k: usize) -> Vec<RankedEntry> {
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for (i, &s) in scores.iter().enumerate() {
        let e = index.entry(i);
        best.entry(e.model_id.as_str())
            .and_modify(|cur| {
                if s > cur.0 || (s == cur.0 && e.instance_id.as_str() < cur.1) {
                    *cur = (s, e.instance_id.as_str());
                }
            })
            .or_insert((s, e.instance_id.as_str()));
    }
    let mut ranked: Vec<RankedEntry> = best
        .into_iter()
        .map(|(m, (score, inst))| RankedEntry { model_id: m.to_string(), best_instance_id: inst.to_string(), score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.model_id.cmp(&b.model_id)));
    ranked.truncate(k);
    ranked
}

pub fn query(
    index: &FeatureIndex,
    encoder: &Encoder,
    spec: &QuerySpec,
    config: &RetrievalConfig,
    exec: Execution,
) -> Result<RankedResult, RetrievalError> {
    if spec.k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    index.check_encoder(encoder)?;
    let (q, cells) = encode_query(encoder, &spec.print, &spec.mask, config)?;
    let scores = score_entries(index, &q, &cells, exec);
    Ok(RankedResult { query_id: spec.query_id.clone(), k: spec.k, results: aggregate(index, &scores, spec.k) })
}

/// Runs every spec independently; failures are reported in place.
pub fn batch_query(
    index: &FeatureIndex,
    encoder: &Encoder,
    specs: &[QuerySpec],
    config: &RetrievalConfig,
    exec: Execution,
) -> Vec<Result<RankedResult, RetrievalError>> {
    exec.map(specs, |s| query(index, encoder, s, config, Execution::Sequential))
}
