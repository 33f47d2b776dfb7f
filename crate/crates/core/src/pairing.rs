//! Hard-negative pair bookkeeping.
//!
//! Synthesized examples carry a `pair_id` linking the two sides built from
//! one (source, object, category) slot. A pair record is emitted only when
//! both sides are present; an example whose counterpart was dropped stays in
//! the dataset as an ordinary standalone example.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::types::{AugmentedExample, HardNegativePair, Provenance, Side};

#[derive(Debug, Error)]
pub enum PairingError {
    #[error("pair `{pair_id}` is inconsistent: {reason}")]
    PairingConflict { pair_id: String, reason: String },
}

/// Group synthesized examples by `pair_id` and emit one [`HardNegativePair`]
/// per id with both sides present. Orphans are silently left unpaired.
/// Output is sorted by `pair_id`.
pub fn build_pairs(examples: &[AugmentedExample]) -> Result<Vec<HardNegativePair>, PairingError> {
    let mut groups: BTreeMap<&str, Vec<&AugmentedExample>> = BTreeMap::new();
    for ex in examples {
        if ex.provenance == Provenance::Source || ex.pair_id.is_empty() {
            continue;
        }
        groups.entry(ex.pair_id.as_str()).or_default().push(ex);
    }

    let mut pairs = Vec::new();
    for (pair_id, members) in groups {
        match members.len() {
            1 => continue, // orphan: counterpart missing, example stays standalone
            2 => {
                let (a, b) = (members[0], members[1]);
                let (pos, neg) = match (a.side, b.side) {
                    (Some(Side::Positive), Some(Side::Negative)) => (a, b),
                    (Some(Side::Negative), Some(Side::Positive)) => (b, a),
                    _ => {
                        return Err(PairingError::PairingConflict {
                            pair_id: pair_id.to_string(),
                            reason: "both members have the same side".into(),
                        })
                    }
                };
                if pos.source_id != neg.source_id
                    || pos.object_name != neg.object_name
                    || pos.category != neg.category
                {
                    return Err(PairingError::PairingConflict {
                        pair_id: pair_id.to_string(),
                        reason: "members disagree on (source, object, category)".into(),
                    });
                }
                pairs.push(HardNegativePair {
                    pair_id: pair_id.to_string(),
                    positive_example_id: pos.example_id.clone(),
                    negative_example_id: neg.example_id.clone(),
                });
            }
            n => {
                return Err(PairingError::PairingConflict {
                    pair_id: pair_id.to_string(),
                    reason: format!("{n} examples share the pair id"),
                })
            }
        }
    }
    Ok(pairs)
}
