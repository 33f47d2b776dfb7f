//! The training loop.
//!
//! In toy mode the projection matrices of the [`ToyEncoder`] are updated by
//! plain gradient descent on the contrastive loss; features are extracted
//! once and embeddings recomputed from the current parameters every step.
//! Against a remote embedding backend no parameters can move through the
//! wire, so [`evaluate_loss_trace`] records the loss trajectory instead.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    contrastive_loss, contrastive_loss_with_grad, plan_batches, Batch, BatchItem, TrainConfig,
    TrainError,
};
use crate::backends::toy_encoder::{normalize, TextFeatures, ToyEncoder};
use crate::backends::{Embedder, EmbeddingRequest};
use crate::types::{AugmentedExample, HardNegativePair};

/// One row of the loss trace; lands in `loss_trace.csv` as `step,epoch,loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: ToyEncoder,
    pub trace: Vec<StepLoss>,
}

/// Persisted training result: parameter blob plus the exact configuration
/// and seed that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub seed: u64,
    pub encoder: ToyEncoder,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

/// Per-example features cached ahead of the loop.
struct FeatureTable {
    text: Vec<TextFeatures>,
    image: Vec<Vec<f64>>,
}

fn extract_features(
    examples: &[AugmentedExample],
    encoder: &ToyEncoder,
) -> Result<FeatureTable, TrainError> {
    let mut text = Vec::with_capacity(examples.len());
    let mut image = Vec::with_capacity(examples.len());
    for example in examples {
        text.push(encoder.text_features(&example.caption));
        image.push(encoder.image_features(Path::new(&example.image_ref))?);
    }
    Ok(FeatureTable { text, image })
}

/// Forward pass for one batch under the current parameters. Also returns
/// the pre-normalization vectors and norms needed for the backward pass.
struct BatchForward {
    batch: Batch,
    text_norms: Vec<f64>,
    image_norms: Vec<f64>,
}

fn forward_batch(
    encoder: &ToyEncoder,
    examples: &[AugmentedExample],
    features: &FeatureTable,
    members: &[usize],
) -> BatchForward {
    let mut items = Vec::with_capacity(members.len());
    let mut text_norms = Vec::with_capacity(members.len());
    let mut image_norms = Vec::with_capacity(members.len());
    for &idx in members {
        let mut text_raw = vec![0.0; encoder.dim];
        for &(bucket, count) in &features.text[idx] {
            for (row, slot) in text_raw.iter_mut().enumerate() {
                *slot += encoder.w_text[row * encoder.vocab + bucket] * count;
            }
        }
        let text_norm = text_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut text_embedding = text_raw;
        normalize(&mut text_embedding);

        let cols = encoder.image_feature_len();
        let mut image_raw = vec![0.0; encoder.dim];
        for (row, slot) in image_raw.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (col, f) in features.image[idx].iter().enumerate() {
                acc += encoder.w_image[row * cols + col] * f;
            }
            *slot = acc;
        }
        let image_norm = image_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut image_embedding = image_raw;
        normalize(&mut image_embedding);

        let example = &examples[idx];
        items.push(BatchItem {
            text_embedding,
            image_embedding,
            example_id: example.example_id.clone(),
            pair_id: if example.pair_id.is_empty() {
                None
            } else {
                Some(example.pair_id.clone())
            },
        });
        text_norms.push(text_norm);
        image_norms.push(image_norm);
    }
    BatchForward {
        batch: Batch { items },
        text_norms,
        image_norms,
    }
}

/// Gradient of the normalization: map d(loss)/d(unit vector) back to the
/// pre-normalization vector. Zero vectors are non-differentiable; their
/// items contribute nothing.
fn backprop_normalize(embedding: &[f64], grad_out: &[f64], norm: f64) -> Vec<f64> {
    if norm < 1e-12 {
        return vec![0.0; grad_out.len()];
    }
    let projected: f64 = embedding.iter().zip(grad_out).map(|(e, g)| e * g).sum();
    embedding
        .iter()
        .zip(grad_out)
        .map(|(e, g)| (g - projected * e) / norm)
        .collect()
}

/// Fine-tune the toy encoder: gradient descent on the contrastive loss with
/// a batch plan fixed once from the seed and reused across epochs, so a
/// zero learning rate reproduces the same trace every epoch. Deterministic
/// for a fixed (config, seed, encoder).
pub fn train(
    examples: &[AugmentedExample],
    pairs: &[HardNegativePair],
    encoder: ToyEncoder,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if !config.toy_mode {
        return Err(TrainError::BadConfig(
            "parameter updates need toy_mode; use evaluate_loss_trace against a remote encoder"
                .into(),
        ));
    }
    let mut encoder = encoder;
    let features = extract_features(examples, &encoder)?;
    let plan = plan_batches(examples, pairs, config, config.seed);

    let mut trace = Vec::new();
    let mut step = 0usize;
    'epochs: for epoch in 1..=config.epochs {
        for (batch_idx, members) in plan.iter().enumerate() {
            if members.len() < 2 {
                continue; // cannot form a contrastive batch; skip deterministically
            }
            if config.max_steps.is_some_and(|cap| step >= cap) {
                break 'epochs;
            }
            step += 1;

            let fwd = forward_batch(&encoder, examples, &features, members);
            let (loss, grad) = contrastive_loss_with_grad(&fwd.batch, config.temperature)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step,
                    batch: batch_idx,
                });
            }
            trace.push(StepLoss { step, epoch, loss });

            if config.learning_rate > 0.0 {
                apply_updates(&mut encoder, &features, members, &fwd, &grad, config.learning_rate);
            }
        }
    }
    Ok(TrainOutcome { encoder, trace })
}

fn apply_updates(
    encoder: &mut ToyEncoder,
    features: &FeatureTable,
    members: &[usize],
    fwd: &BatchForward,
    grad: &super::LossGrad,
    learning_rate: f64,
) {
    let cols = encoder.image_feature_len();
    for (pos, &idx) in members.iter().enumerate() {
        let item = &fwd.batch.items[pos];
        let d_text_raw =
            backprop_normalize(&item.text_embedding, &grad.text[pos], fwd.text_norms[pos]);
        for &(bucket, count) in &features.text[idx] {
            for (row, g) in d_text_raw.iter().enumerate() {
                encoder.w_text[row * encoder.vocab + bucket] -= learning_rate * g * count;
            }
        }
        let d_image_raw =
            backprop_normalize(&item.image_embedding, &grad.image[pos], fwd.image_norms[pos]);
        for (row, g) in d_image_raw.iter().enumerate() {
            for (col, f) in features.image[idx].iter().enumerate() {
                encoder.w_image[row * cols + col] -= learning_rate * g * f;
            }
        }
    }
}

/// Loss trajectory of a frozen embedder over the planned batches, one pass
/// per epoch. This is the non-toy path: embeddings come from the backend
/// and no parameters move.
pub fn evaluate_loss_trace(
    examples: &[AugmentedExample],
    pairs: &[HardNegativePair],
    embedder: &dyn Embedder,
    config: &TrainConfig,
) -> Result<Vec<StepLoss>, TrainError> {
    config.validate()?;
    let plan = plan_batches(examples, pairs, config, config.seed);
    let mut cached: Vec<Option<BatchItem>> = vec![None; examples.len()];
    let mut trace = Vec::new();
    let mut step = 0usize;
    'epochs: for epoch in 1..=config.epochs {
        for members in &plan {
            if members.len() < 2 {
                continue;
            }
            if config.max_steps.is_some_and(|cap| step >= cap) {
                break 'epochs;
            }
            step += 1;
            let mut items = Vec::with_capacity(members.len());
            for &idx in members {
                if cached[idx].is_none() {
                    let example = &examples[idx];
                    cached[idx] = Some(BatchItem {
                        text_embedding: embedder
                            .embed(&EmbeddingRequest::text(&example.caption))?,
                        image_embedding: embedder
                            .embed(&EmbeddingRequest::image(&example.image_ref))?,
                        example_id: example.example_id.clone(),
                        pair_id: None,
                    });
                }
                items.push(cached[idx].clone().expect("just filled"));
            }
            let loss = contrastive_loss(&Batch { items }, config.temperature)?;
            trace.push(StepLoss { step, epoch, loss });
        }
    }
    Ok(trace)
}
