//! Compositionality scoring over caption-choice tasks plus cross-modal
//! retrieval metrics.

mod negatives;
mod retrieval;

pub use negatives::{
    make_attribute_swap_negative, make_order_negatives, OrderNegativeMode, PosLexicon,
};
pub use retrieval::{evaluate_retrieval, recall_at_k, RetrievalDirection, RetrievalReport, RetrievalSplit};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, EmbeddingRequest};
use crate::manifest::ManifestRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unparseable caption: {0}")]
    UnparseableCaption(String),
    #[error("caption too short: {0}")]
    TooShort(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One multiple-choice task: pick the caption that matches the image among
/// hard negative distractors. `group` is the label macro averaging runs over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceTask {
    pub image_ref: String,
    pub captions: Vec<String>,
    pub correct_index: usize,
    pub group: String,
}

impl ChoiceTask {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.captions.len() < 2 {
            return Err(EvalError::InvalidTask(
                "a task needs at least two candidate captions".into(),
            ));
        }
        if self.correct_index >= self.captions.len() {
            return Err(EvalError::InvalidTask(format!(
                "correct_index {} out of range for {} captions",
                self.correct_index,
                self.captions.len()
            )));
        }
        Ok(())
    }
}

impl ManifestRecord for ChoiceTask {
    fn key(&self) -> String {
        format!("{}\u{1f}{}", self.group, self.image_ref)
    }
    fn validate(&self) -> Result<(), String> {
        ChoiceTask::validate(self).map_err(|e| e.to_string())
    }
}

/// Scores of one choice-task run: accuracy per group and their unweighted
/// mean. Serialized as the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceReport {
    pub per_group: BTreeMap<String, f64>,
    #[serde(rename = "macro")]
    pub macro_accuracy: f64,
}

/// Embed each task's image and candidates, mark the task correct when the
/// correct caption has strictly the highest similarity (ties lose), and
/// macro-average accuracy over groups.
pub fn score_choice_tasks(
    tasks: &[ChoiceTask],
    embedder: &dyn Embedder,
) -> Result<ChoiceReport, EvalError> {
    let mut totals: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for task in tasks {
        task.validate()?;
        let image = embedder.embed(&EmbeddingRequest::image(&task.image_ref))?;
        let mut sims = Vec::with_capacity(task.captions.len());
        for caption in &task.captions {
            let text = embedder.embed(&EmbeddingRequest::text(caption))?;
            sims.push(crate::backends::toy_encoder::dot(&text, &image));
        }
        let entry = totals.entry(task.group.as_str()).or_insert((0, 0));
        entry.1 += 1;
        if strictly_best(&sims, task.correct_index) {
            entry.0 += 1;
        }
    }

    let per_group: BTreeMap<String, f64> = totals
        .iter()
        .map(|(group, (correct, total))| (group.to_string(), *correct as f64 / *total as f64))
        .collect();
    let macro_accuracy = macro_mean(&per_group);
    Ok(ChoiceReport {
        per_group,
        macro_accuracy,
    })
}

/// A task is solved only when the correct candidate is strictly ahead of
/// every distractor; a tie loses. Depends only on the similarity order, so
/// any monotone transform of the similarities leaves the outcome unchanged.
fn strictly_best(sims: &[f64], index: usize) -> bool {
    sims.iter()
        .enumerate()
        .all(|(i, s)| i == index || *s < sims[index])
}

fn macro_mean(per_group: &BTreeMap<String, f64>) -> f64 {
    if per_group.is_empty() {
        0.0
    } else {
        per_group.values().sum::<f64>() / per_group.len() as f64
    }
}
