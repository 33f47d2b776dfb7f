//! Quality filters over detected objects.
//!
//! Two strategies: the area-overlap rule removes objects whose box would
//! destroy most of another object during inpainting (always on in the
//! standard pipeline), and the confidence rule keeps only distinctly
//! visible objects (the switchable "filtering" step). Both use strict
//! greater-than comparisons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::DetectedObject;

pub const DEFAULT_AREA_OVERLAP_THRESHOLD: f64 = 0.7;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum FilterConfigError {
    #[error("area_overlap_threshold {0} outside (0, 1]")]
    BadAreaThreshold(f64),
    #[error("confidence_threshold {0} outside [0, 1]")]
    BadConfidenceThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default = "default_area_threshold")]
    pub area_overlap_threshold: f64,
    #[serde(default = "default_confidence_threshold")]
    pub confidence_threshold: f64,
    #[serde(default = "default_true")]
    pub confidence_filter_enabled: bool,
}

fn default_area_threshold() -> f64 {
    DEFAULT_AREA_OVERLAP_THRESHOLD
}

fn default_confidence_threshold() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}

fn default_true() -> bool {
    true
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            area_overlap_threshold: DEFAULT_AREA_OVERLAP_THRESHOLD,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            confidence_filter_enabled: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterConfigError> {
        if !(self.area_overlap_threshold > 0.0 && self.area_overlap_threshold <= 1.0) {
            return Err(FilterConfigError::BadAreaThreshold(self.area_overlap_threshold));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(FilterConfigError::BadConfidenceThreshold(self.confidence_threshold));
        }
        Ok(())
    }
}

/// Remove every object that covers more than `threshold` of another
/// object's area. All removal decisions are evaluated against the original
/// set in a single pass, so the outcome does not depend on input order and
/// mutual violations remove both objects. `objects` must belong to one image.
pub fn area_overlap_filter(objects: &[DetectedObject], threshold: f64) -> Vec<DetectedObject> {
    let removed: Vec<bool> = objects
        .iter()
        .enumerate()
        .map(|(i, x)| {
            objects.iter().enumerate().any(|(j, y)| {
                i != j && x.bbox.intersection_area(&y.bbox) as f64 > threshold * y.bbox.area() as f64
            })
        })
        .collect();
    objects
        .iter()
        .zip(&removed)
        .filter(|(_, gone)| !**gone)
        .map(|(o, _)| o.clone())
        .collect()
}

/// Keep exactly the objects with confidence strictly above `threshold`.
pub fn confidence_filter(objects: &[DetectedObject], threshold: f64) -> Vec<DetectedObject> {
    objects
        .iter()
        .filter(|o| o.confidence > threshold)
        .cloned()
        .collect()
}
