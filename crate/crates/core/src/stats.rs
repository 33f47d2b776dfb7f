//! Dataset assembly and the statistics ledger.
//!
//! The ledger counts what each pipeline run produced: source records,
//! grounded objects, synthesized examples before and after filtering, and
//! hard negative pairs before and after filtering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    AugmentedExample, CaptionImagePair, DetectedObject, HardNegativePair, Provenance, Side,
};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("inconsistent manifests: {0}")]
    InconsistentManifests(String),
}

/// The six ledger counts. Field names match the `stats.json` output exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_source: u64,
    pub n_objects: u64,
    pub n_augmented: u64,
    pub n_augmented_filtered: u64,
    pub n_pairs: u64,
    pub n_pairs_filtered: u64,
}

impl DatasetStats {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.n_augmented_filtered > self.n_augmented {
            return Err(StatsError::InconsistentManifests(format!(
                "n_augmented_filtered {} exceeds n_augmented {}",
                self.n_augmented_filtered, self.n_augmented
            )));
        }
        if self.n_pairs_filtered > self.n_pairs {
            return Err(StatsError::InconsistentManifests(format!(
                "n_pairs_filtered {} exceeds n_pairs {}",
                self.n_pairs_filtered, self.n_pairs
            )));
        }
        if self.n_pairs > self.n_augmented / 2 {
            return Err(StatsError::InconsistentManifests(format!(
                "n_pairs {} exceeds floor(n_augmented / 2) = {}",
                self.n_pairs,
                self.n_augmented / 2
            )));
        }
        Ok(())
    }
}

/// Combine synthesized examples with (optionally) the source records to form
/// a training manifest. Source records come through with
/// `provenance = source` and an empty pair id; ordering is deterministic.
pub fn assemble_dataset(
    augmented: &[AugmentedExample],
    sources: &[CaptionImagePair],
    include_raw: bool,
) -> Vec<AugmentedExample> {
    let mut dataset: Vec<AugmentedExample> = augmented.to_vec();
    if include_raw {
        dataset.extend(sources.iter().map(AugmentedExample::from_source));
    }
    dataset.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    dataset
}

/// The manifest collections one run produced, ready for counting.
pub struct StatsInputs<'a> {
    pub sources: &'a [CaptionImagePair],
    pub objects: &'a [DetectedObject],
    pub augmented: &'a [AugmentedExample],
    pub augmented_filtered: &'a [AugmentedExample],
    pub pairs: &'a [HardNegativePair],
    pub pairs_filtered: &'a [HardNegativePair],
}

/// Count the ledger from manifests, verifying cross-references along the
/// way: pairs must point at existing examples with opposite sides, and the
/// filtered sets must be subsets of the unfiltered ones.
pub fn compute_stats(inputs: &StatsInputs<'_>) -> Result<DatasetStats, StatsError> {
    check_pairs("pairs", inputs.pairs, inputs.augmented)?;
    check_pairs("pairs_filtered", inputs.pairs_filtered, inputs.augmented_filtered)?;

    let augmented_ids: BTreeSet<&str> = synthesized_ids(inputs.augmented);
    let filtered_ids: BTreeSet<&str> = synthesized_ids(inputs.augmented_filtered);
    if !filtered_ids.is_subset(&augmented_ids) {
        return Err(StatsError::InconsistentManifests(
            "filtered examples are not a subset of the augmented examples".into(),
        ));
    }

    let stats = DatasetStats {
        n_source: inputs.sources.len() as u64,
        n_objects: inputs.objects.len() as u64,
        n_augmented: augmented_ids.len() as u64,
        n_augmented_filtered: filtered_ids.len() as u64,
        n_pairs: inputs.pairs.len() as u64,
        n_pairs_filtered: inputs.pairs_filtered.len() as u64,
    };
    stats.validate()?;
    Ok(stats)
}

fn synthesized_ids(examples: &[AugmentedExample]) -> BTreeSet<&str> {
    examples
        .iter()
        .filter(|e| e.provenance == Provenance::Synthesized)
        .map(|e| e.example_id.as_str())
        .collect()
}

fn check_pairs(
    label: &str,
    pairs: &[HardNegativePair],
    examples: &[AugmentedExample],
) -> Result<(), StatsError> {
    let by_id: BTreeMap<&str, &AugmentedExample> = examples
        .iter()
        .map(|e| (e.example_id.as_str(), e))
        .collect();
    for pair in pairs {
        let pos = by_id.get(pair.positive_example_id.as_str()).ok_or_else(|| {
            StatsError::InconsistentManifests(format!(
                "{label}: pair `{}` references missing example `{}`",
                pair.pair_id, pair.positive_example_id
            ))
        })?;
        let neg = by_id.get(pair.negative_example_id.as_str()).ok_or_else(|| {
            StatsError::InconsistentManifests(format!(
                "{label}: pair `{}` references missing example `{}`",
                pair.pair_id, pair.negative_example_id
            ))
        })?;
        if pos.side != Some(Side::Positive) || neg.side != Some(Side::Negative) {
            return Err(StatsError::InconsistentManifests(format!(
                "{label}: pair `{}` members have wrong sides",
                pair.pair_id
            )));
        }
    }
    Ok(())
}
