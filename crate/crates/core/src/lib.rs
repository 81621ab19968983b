//! Partial-shoeprint retrieval against a database of tread depth maps.
//!
//! The pipeline has four stages:
//!
//! 1. [`dataset`] aligns depth/print pairs to a canonical frame and manages
//!    manifests, splits and ground truth (plus a synthetic generator).
//! 2. [`augment`] turns clean prints into simulated crime-scene prints.
//! 3. [`encoder`] maps an image to a spatial feature grid, and
//!    [`training`] fits it with a supervised contrastive objective over
//!    masked features.
//! 4. [`index`] stores raw database features; [`retrieval`] masks both sides
//!    per query and ranks shoe models by cosine similarity; [`metrics`]
//!    scores rankings with hit@K and mAP@K.
//!
//! Data-parallel loops (batch encoding, index scans, evaluation) run on rayon
//! when the `parallel` feature is enabled and fall back to plain iterators
//! otherwise; see [`exec`].

pub mod augment;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod exec;
pub mod image;
pub mod index;
pub mod metrics;
pub mod nn;
pub mod queryset;
pub mod retrieval;
pub mod training;

pub use crate::encoder::{Channel, Encoder, EncoderConfig, SpatialFeatureMap, VisibilityMask};
pub use crate::image::{Frame, Image};
pub use crate::index::FeatureIndex;
pub use crate::retrieval::{QuerySpec, RankedResult};
