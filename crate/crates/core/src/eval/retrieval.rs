//! Cross-modal retrieval recall@K.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::backends::{Embedder, EmbeddingRequest};

/// Which side queries: image retrieval ranks images per caption, text
/// retrieval ranks captions per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalDirection {
    ImageRetrieval,
    TextRetrieval,
}

/// A retrieval evaluation split: image refs, caption texts, and the gold
/// (caption index, image index) mapping, one-to-many allowed on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalSplit {
    pub images: Vec<String>,
    pub captions: Vec<String>,
    pub gold: Vec<(usize, usize)>,
}

impl RetrievalSplit {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.gold.is_empty() {
            return Err(EvalError::InvalidTask("gold mapping is empty".into()));
        }
        let mut caption_covered = vec![false; self.captions.len()];
        let mut image_covered = vec![false; self.images.len()];
        for &(c, i) in &self.gold {
            if c >= self.captions.len() || i >= self.images.len() {
                return Err(EvalError::InvalidTask(format!(
                    "gold entry ({c}, {i}) out of range"
                )));
            }
            caption_covered[c] = true;
            image_covered[i] = true;
        }
        if !caption_covered.iter().all(|b| *b) || !image_covered.iter().all(|b| *b) {
            return Err(EvalError::InvalidTask(
                "every caption and image must appear in the gold mapping".into(),
            ));
        }
        Ok(())
    }
}

/// Indices of the top-k entries by score, descending, ties broken by lower
/// index.
fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Fraction of queries whose any gold item lands in the top-k of the
/// similarity ranking. `similarity` is captions x images; image retrieval
/// queries rows (captions), text retrieval queries columns (images).
pub fn recall_at_k(
    similarity: &[Vec<f64>],
    gold: &[(usize, usize)],
    k: usize,
    direction: RetrievalDirection,
) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let n_captions = similarity.len();
    let n_images = similarity.first().map_or(0, Vec::len);

    let mut gold_by_query: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(c, i) in gold {
        match direction {
            RetrievalDirection::ImageRetrieval => gold_by_query.entry(c).or_default().push(i),
            RetrievalDirection::TextRetrieval => gold_by_query.entry(i).or_default().push(c),
        }
    }
    if gold_by_query.is_empty() {
        return 0.0;
    }

    let mut hits = 0usize;
    for (&query, gold_items) in &gold_by_query {
        let scores: Vec<f64> = match direction {
            RetrievalDirection::ImageRetrieval => similarity[query].clone(),
            RetrievalDirection::TextRetrieval => {
                (0..n_captions).map(|c| similarity[c][query]).collect()
            }
        };
        debug_assert_eq!(
            scores.len(),
            match direction {
                RetrievalDirection::ImageRetrieval => n_images,
                RetrievalDirection::TextRetrieval => n_captions,
            }
        );
        let top = top_k_indices(&scores, k);
        if gold_items.iter().any(|g| top.contains(g)) {
            hits += 1;
        }
    }
    hits as f64 / gold_by_query.len() as f64
}

/// Recall numbers for both directions at each requested K. Serialized with
/// `image@K` / `text@K` keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub image_at: BTreeMap<usize, f64>,
    pub text_at: BTreeMap<usize, f64>,
}

impl RetrievalReport {
    /// Flatten into the results-file shape: `{"image@1": ..., "text@1": ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, v) in &self.image_at {
            map.insert(format!("image@{k}"), serde_json::json!(v));
        }
        for (k, v) in &self.text_at {
            map.insert(format!("text@{k}"), serde_json::json!(v));
        }
        serde_json::Value::Object(map)
    }
}

/// Embed the whole split once, build the caption x image similarity matrix,
/// and report recall at each K in both directions.
pub fn evaluate_retrieval(
    split: &RetrievalSplit,
    embedder: &dyn Embedder,
    ks: &[usize],
) -> Result<RetrievalReport, EvalError> {
    split.validate()?;
    let caption_embeddings: Vec<Vec<f64>> = split
        .captions
        .iter()
        .map(|c| embedder.embed(&EmbeddingRequest::text(c)))
        .collect::<Result<_, _>>()?;
    let image_embeddings: Vec<Vec<f64>> = split
        .images
        .iter()
        .map(|i| embedder.embed(&EmbeddingRequest::image(i)))
        .collect::<Result<_, _>>()?;

    let similarity: Vec<Vec<f64>> = caption_embeddings
        .iter()
        .map(|c| {
            image_embeddings
                .iter()
                .map(|i| crate::backends::toy_encoder::dot(c, i))
                .collect()
        })
        .collect();

    let mut report = RetrievalReport {
        image_at: BTreeMap::new(),
        text_at: BTreeMap::new(),
    };
    for &k in ks {
        report.image_at.insert(
            k,
            recall_at_k(&similarity, &split.gold, k, RetrievalDirection::ImageRetrieval),
        );
        report.text_at.insert(
            k,
            recall_at_k(&similarity, &split.gold, k, RetrievalDirection::TextRetrieval),
        );
    }
    Ok(report)
}
