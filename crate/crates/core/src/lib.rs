//! Bimodal augmentation of caption-image datasets.
//!
//! The pipeline decouples object-attribute associations in a source
//! dataset: objects are proposed from each caption and grounded in the
//! image, a generator writes per-category attribute descriptions together
//! with hard-negative counter-descriptions, captions are rewritten and the
//! object region is inpainted for both sides, and the resulting mutual
//! hard negative pairs feed a contrastive trainer plus compositionality
//! and retrieval evaluations.
//!
//! Model access goes through the pluggable [`backends`]; every role has a
//! deterministic mock, so the full pipeline runs reproducibly without any
//! real model.

pub mod augment;
pub mod backends;
pub mod eval;
pub mod filter;
pub mod manifest;
pub mod pairing;
pub mod raster;
pub mod stats;
pub mod train;
pub mod types;

pub use types::{
    AttributeCategory, AttributeSpec, AugmentedExample, BoundingBox, CaptionImagePair,
    DetectedObject, HardNegativePair, Provenance, Side,
};
