//! Simulated partial-print queries drawn from a manifest, with ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::dataset::{DatasetError, DatasetManifest, GroundTruthMap, ManifestEntry, Split};
use crate::encoder::sample_rect_mask;
use crate::retrieval::QuerySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySetConfig {
    pub queries_per_instance: usize,
    /// Visible rectangle area as a fraction of the frame.
    pub mask_area_fraction_range: [f64; 2],
    pub augment: AugmentConfig,
    pub k: usize,
    pub seed: u64,
}

impl Default for QuerySetConfig {
    fn default() -> Self {
        Self {
            queries_per_instance: 2,
            mask_area_fraction_range: [0.4, 1.0],
            augment: AugmentConfig::default(),
            k: 100,
            seed: 0,
        }
    }
}

/// Entries queried by [`build_query_set`]: the `query` split when present,
/// otherwise every entry.
pub fn query_entries(manifest: &DatasetManifest) -> Vec<&ManifestEntry> {
    let q: Vec<_> = manifest.entries.iter().filter(|e| e.split == Split::Query).collect();
    if q.is_empty() {
        manifest.entries.iter().collect()
    } else {
        q
    }
}

/// Degrades and rectangle-masks the print of each selected entry
/// `queries_per_instance` times. Query ids are `<instance_id>-q<n>` and the
/// ground truth of each is its own model.
pub fn build_query_set(
    manifest: &DatasetManifest,
    config: &QuerySetConfig,
) -> Result<(Vec<QuerySpec>, GroundTruthMap), DatasetError> {
    let [lo, hi] = config.mask_area_fraction_range;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(DatasetError::InvalidArgument(format!("mask area range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1")));
    }
    config.augment.validate().map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut specs = Vec::new();
    let mut gt = GroundTruthMap::default();
    for e in query_entries(manifest) {
        let inst = manifest.load_instance(e)?;
        for q in 0..config.queries_per_instance {
            let (print, _) = augment(&inst.print, &config.augment, &mut rng);
            let mask = sample_rect_mask(&mut rng, config.mask_area_fraction_range, manifest.canonical_size);
            let query_id = format!("{}-q{q}", e.instance_id);
            gt.insert(query_id.clone(), [e.model_id.clone()]);
            specs.push(QuerySpec { query_id, print, mask, k: config.k });
        }
    }
    Ok((specs, gt))
}
