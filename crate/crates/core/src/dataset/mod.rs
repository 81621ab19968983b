//! Depth/print pairs, canonical alignment, manifests and synthetic data.

mod align;
mod manifest;
pub mod synthetic;

use std::path::Path;

use thiserror::Error;

use crate::image::{Image, ImageError};

pub use align::{align, Alignment, Moments, DEFAULT_FOREGROUND_THRESHOLD, EXTENT_FRACTION, MIN_FOREGROUND_PIXELS};
pub use manifest::{
    load_manifest, save_manifest, split_seen_unseen, DatasetManifest, GroundTruthMap, ManifestEntry, Split,
};
pub use synthetic::{generate_synthetic, synthesize, threshold_print, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("only {count} foreground pixels, need at least {required}")]
    TooFewForegroundPixels { count: usize, required: usize },
    #[error("missing image file {0}")]
    MissingImageFile(String),
    #[error("duplicate instance id {0}")]
    DuplicateInstanceId(String),
    #[error("ground truth for query {query} names unknown model {model}")]
    UnknownModel { query: String, model: String },
    #[error("ground truth for query {0} is empty")]
    EmptyGroundTruth(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A depth/print pair of one physical shoe, both in the canonical frame.
#[derive(Clone, Debug)]
pub struct ShoeInstance {
    pub instance_id: String,
    pub model_id: String,
    pub depth: Image,
    pub print: Image,
    pub source_tag: String,
}
