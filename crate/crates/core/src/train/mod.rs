//! Contrastive fine-tuning over an embedding backend, with hard negative
//! pairs placed in-batch and the epoch-scaling rule that keeps baseline
//! runs step-comparable.

mod batching;
mod loss;
mod toytask;
mod trainer;

pub use batching::{build_batches, plan_batches};
pub use loss::{contrastive_loss, contrastive_loss_with_grad, LossGrad};
pub use toytask::{generate_toy_task, ToyTask, ToyTaskConfig};
pub use trainer::{evaluate_loss_trace, train, Checkpoint, StepLoss, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("degenerate batch of size {0}")]
    DegenerateBatch(usize),
    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss { step: usize, batch: usize },
    #[error("bad batch: {0}")]
    BadBatch(String),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Backend(#[from] crate::backends::BackendError),
}

/// Training hyperparameters. The defaults suit fine-tuning a real encoder
/// (tiny learning rate, large batch); [`TrainConfig::toy`] swaps in values
/// sized for the deterministic toy encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Co-locate the two sides of every pair in one batch. Switching this
    /// off keeps counterparts in different batches and changes nothing else.
    pub use_hard_negatives: bool,
    /// Train the toy encoder in-process instead of monitoring a remote one.
    pub toy_mode: bool,
    /// Optional hard cap on optimization steps, on top of `epochs`.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-8,
            batch_size: 1024,
            epochs: 5,
            temperature: 0.07,
            seed: 0,
            use_hard_negatives: true,
            toy_mode: false,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Small-scale overrides for the toy encoder. The temperature also
    /// shifts slightly: at toy dimensionality the sharper value keeps the
    /// in-batch contrast responsive.
    pub fn toy(seed: u64) -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 5,
            temperature: 0.05,
            seed,
            use_hard_negatives: true,
            toy_mode: true,
            max_steps: None,
        }
    }

    /// A zero learning rate is allowed as a diagnostic (parameters stay
    /// untouched and the loss trace is constant across epochs).
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(TrainError::BadConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.temperature <= 0.0 {
            return Err(TrainError::BadConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One batch member: both embeddings plus the identifiers the batching
/// logic needs to honor pair co-location.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub text_embedding: Vec<f64>,
    pub image_embedding: Vec<f64>,
    pub example_id: String,
    pub pair_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    /// Enforce the batch invariants: at least two items, one shared
    /// dimension, unit-norm embeddings.
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.items.len() < 2 {
            return Err(TrainError::DegenerateBatch(self.items.len()));
        }
        let dim = self.items[0].text_embedding.len();
        for item in &self.items {
            for (label, e) in [
                ("text", &item.text_embedding),
                ("image", &item.image_embedding),
            ] {
                if e.len() != dim {
                    return Err(TrainError::BadBatch(format!(
                        "{label} embedding of `{}` has dimension {}, expected {dim}",
                        item.example_id,
                        e.len()
                    )));
                }
                let norm: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(TrainError::BadBatch(format!(
                        "{label} embedding of `{}` has norm {norm}",
                        item.example_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Steps-fair epoch count for a baseline trained on the smaller source set:
/// `round(augmented / source) * epochs`.
pub fn scale_baseline_epochs(augmented_size: u64, source_size: u64, epochs: u64) -> u64 {
    assert!(augmented_size > 0 && source_size > 0, "sizes must be positive");
    let ratio = augmented_size as f64 / source_size as f64;
    ratio.round() as u64 * epochs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_sized_dataset_means_triple_epochs() {
        assert_eq!(scale_baseline_epochs(3 * 1000, 1000, 5), 15);
    }

    #[test]
    fn equal_sizes_keep_epochs() {
        assert_eq!(scale_baseline_epochs(1000, 1000, 5), 5);
    }

    #[test]
    fn ratio_rounds_before_multiplying() {
        // 2600 / 1000 = 2.6 rounds to 3
        assert_eq!(scale_baseline_epochs(2600, 1000, 5), 15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::toy(0).validate().is_ok());
        let zero_lr = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::toy(0)
        };
        assert!(zero_lr.validate().is_ok());
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::toy(0)
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            temperature: 0.0,
            ..TrainConfig::toy(0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn batch_validation_checks_norms() {
        let good = Batch {
            items: vec![
                BatchItem {
                    text_embedding: vec![1.0, 0.0],
                    image_embedding: vec![0.0, 1.0],
                    example_id: "a".into(),
                    pair_id: None,
                },
                BatchItem {
                    text_embedding: vec![0.0, 1.0],
                    image_embedding: vec![1.0, 0.0],
                    example_id: "b".into(),
                    pair_id: None,
                },
            ],
        };
        good.validate().unwrap();
        let mut bad = good.clone();
        bad.items[0].text_embedding = vec![2.0, 0.0];
        assert!(bad.validate().is_err());
    }
}
