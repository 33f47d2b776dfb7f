//! Symmetric contrastive loss over a batch of caption/image embeddings.
//!
//! The similarity matrix is the pairwise dot product divided by the
//! temperature (cosine similarity, since batch embeddings are unit norm).
//! The loss averages the text-to-image and image-to-text cross-entropy
//! directions, with the matching index as the label. Everything in a batch
//! that is not an item's own counterpart acts as an in-batch negative, which
//! is exactly how co-located hard negative pairs exert their pressure: they
//! need no extra loss term.

use super::{Batch, TrainError};

/// Row-stable log(sum(exp(row))).
fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn similarity_matrix(batch: &Batch, temperature: f64) -> Vec<Vec<f64>> {
    let n = batch.items.len();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = batch.items[i]
                .text_embedding
                .iter()
                .zip(&batch.items[j].image_embedding)
                .map(|(a, b)| a * b)
                .sum();
            sim[i][j] = dot / temperature;
        }
    }
    sim
}

fn check(batch: &Batch, temperature: f64) -> Result<(), TrainError> {
    if batch.items.len() < 2 {
        return Err(TrainError::DegenerateBatch(batch.items.len()));
    }
    if temperature <= 0.0 {
        return Err(TrainError::BadConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let dim = batch.items[0].text_embedding.len();
    for item in &batch.items {
        if item.text_embedding.len() != dim || item.image_embedding.len() != dim {
            return Err(TrainError::BadBatch(
                "embeddings must share one dimension".into(),
            ));
        }
    }
    Ok(())
}

/// Mean of the two cross-entropy directions. Non-negative and finite for
/// finite inputs; equals `ln N` on a batch of N identical items.
pub fn contrastive_loss(batch: &Batch, temperature: f64) -> Result<f64, TrainError> {
    check(batch, temperature)?;
    let sim = similarity_matrix(batch, temperature);
    let n = sim.len();

    let mut text_to_image = 0.0;
    for (i, row) in sim.iter().enumerate() {
        text_to_image += log_sum_exp(row) - row[i];
    }
    let mut image_to_text = 0.0;
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| sim[i][j]).collect();
        image_to_text += log_sum_exp(&col) - col[j];
    }
    Ok((text_to_image + image_to_text) / (2.0 * n as f64))
}

/// Gradients of [`contrastive_loss`] with respect to each raw embedding.
pub struct LossGrad {
    pub text: Vec<Vec<f64>>,
    pub image: Vec<Vec<f64>>,
}

/// Loss plus closed-form gradients, treating the loss as a function of the
/// raw embedding vectors through the dot-product similarities.
pub fn contrastive_loss_with_grad(
    batch: &Batch,
    temperature: f64,
) -> Result<(f64, LossGrad), TrainError> {
    check(batch, temperature)?;
    let sim = similarity_matrix(batch, temperature);
    let n = sim.len();
    let dim = batch.items[0].text_embedding.len();

    let mut loss = 0.0;
    // d(loss)/d(sim): average of row-softmax and column-softmax residuals
    let mut grad_sim = vec![vec![0.0; n]; n];
    for (i, row) in sim.iter().enumerate() {
        let lse = log_sum_exp(row);
        loss += lse - row[i];
        for j in 0..n {
            let p = (row[j] - lse).exp();
            grad_sim[i][j] += p - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| sim[i][j]).collect();
        let lse = log_sum_exp(&col);
        loss += lse - col[j];
        for i in 0..n {
            let p = (col[i] - lse).exp();
            grad_sim[i][j] += p - if i == j { 1.0 } else { 0.0 };
        }
    }
    loss /= 2.0 * n as f64;
    let scale = 1.0 / (2.0 * n as f64 * temperature);

    let mut grad = LossGrad {
        text: vec![vec![0.0; dim]; n],
        image: vec![vec![0.0; dim]; n],
    };
    for i in 0..n {
        for j in 0..n {
            let g = grad_sim[i][j] * scale;
            if g == 0.0 {
                continue;
            }
            for k in 0..dim {
                grad.text[i][k] += g * batch.items[j].image_embedding[k];
                grad.image[j][k] += g * batch.items[i].text_embedding[k];
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::super::BatchItem;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn item(text: Vec<f64>, image: Vec<f64>) -> BatchItem {
        BatchItem {
            text_embedding: text,
            image_embedding: image,
            example_id: "x".into(),
            pair_id: None,
        }
    }

    fn identical_batch(n: usize) -> Batch {
        let e = vec![1.0, 0.0];
        Batch {
            items: (0..n).map(|_| item(e.clone(), e.clone())).collect(),
        }
    }

    #[test]
    fn uniform_batch_of_two_gives_ln_two() {
        let loss = contrastive_loss(&identical_batch(2), 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn identical_batch_gives_ln_n_for_any_temperature() {
        for n in [2usize, 4, 8] {
            for tau in [0.07, 0.5, 1.0] {
                let loss = contrastive_loss(&identical_batch(n), tau).unwrap();
                assert!(
                    (loss - (n as f64).ln()).abs() < 1e-9,
                    "n={n} tau={tau} loss={loss}"
                );
            }
        }
    }

    #[test]
    fn orthogonal_pair_matches_hand_computed_softmax() {
        // text = image = identity rows; per row -ln(e / (e + 1))
        let batch = Batch {
            items: vec![
                item(vec![1.0, 0.0], vec![1.0, 0.0]),
                item(vec![0.0, 1.0], vec![0.0, 1.0]),
            ],
        };
        let loss = contrastive_loss(&batch, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn degenerate_batch_rejected() {
        let batch = identical_batch(1);
        assert!(matches!(
            contrastive_loss(&batch, 1.0),
            Err(TrainError::DegenerateBatch(1))
        ));
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        crate::backends::toy_encoder::normalize(&mut v);
        v
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Batch {
        Batch {
            items: (0..n)
                .map(|_| item(random_unit(rng, dim), random_unit(rng, dim)))
                .collect(),
        }
    }

    #[test]
    fn loss_is_invariant_under_item_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = random_batch(&mut rng, 6, 5);
        let loss = contrastive_loss(&batch, 0.2).unwrap();
        let mut permuted = batch.items.clone();
        permuted.rotate_left(2);
        permuted.swap(0, 3);
        let loss_permuted = contrastive_loss(&Batch { items: permuted }, 0.2).unwrap();
        assert!((loss - loss_permuted).abs() < 1e-9);
    }

    #[test]
    fn loss_is_non_negative_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..9);
            let d = rng.gen_range(2..9);
            let batch = random_batch(&mut rng, n, d);
            let loss = contrastive_loss(&batch, 0.3).unwrap();
            assert!(loss.is_finite());
            assert!(loss >= 0.0);
        }
    }

    /// Central finite differences against the closed-form gradient.
    fn finite_difference_check(batch: &Batch, temperature: f64) -> f64 {
        let (_, grad) = contrastive_loss_with_grad(batch, temperature).unwrap();
        let h = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for idx in 0..batch.items.len() {
            for (field, grads) in [(0usize, &grad.text), (1usize, &grad.image)] {
                for k in 0..batch.items[idx].text_embedding.len() {
                    let mut plus = batch.clone();
                    let mut minus = batch.clone();
                    {
                        let slot = if field == 0 {
                            &mut plus.items[idx].text_embedding
                        } else {
                            &mut plus.items[idx].image_embedding
                        };
                        slot[k] += h;
                    }
                    {
                        let slot = if field == 0 {
                            &mut minus.items[idx].text_embedding
                        } else {
                            &mut minus.items[idx].image_embedding
                        };
                        slot[k] -= h;
                    }
                    let fd = (contrastive_loss(&plus, temperature).unwrap()
                        - contrastive_loss(&minus, temperature).unwrap())
                        / (2.0 * h);
                    analytic.push(grads[idx][k]);
                    numeric.push(fd);
                }
            }
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        diff / scale
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let n = rng.gen_range(2..9);
            let d = rng.gen_range(2..9);
            let batch = random_batch(&mut rng, n, d);
            let rel = finite_difference_check(&batch, if trial % 2 == 0 { 0.07 } else { 1.0 });
            assert!(rel < 1e-5, "trial {trial}: relative error {rel}");
        }
    }

    /// A vector close to `base`, renormalized.
    fn near(rng: &mut ChaCha8Rng, base: &[f64], spread: f64) -> Vec<f64> {
        let mut v: Vec<f64> = base
            .iter()
            .map(|x| x + rng.gen_range(-spread..spread))
            .collect();
        crate::backends::toy_encoder::normalize(&mut v);
        v
    }

    #[test]
    fn colocated_counterpart_raises_initial_loss_over_a_random_negative() {
        // once positives are aligned (caption near its own image), a
        // counterpart sits just below the positive in the softmax while a
        // random item sits far away; the paired batch must lose strictly
        // more almost always and on average over 100 seeded trials
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut higher = 0usize;
        let mut paired_sum = 0.0;
        let mut random_sum = 0.0;
        for _ in 0..100 {
            let dim = 16;
            let n = 8;
            let mut items: Vec<BatchItem> = (0..n)
                .map(|_| {
                    let text = random_unit(&mut rng, dim);
                    let image = near(&mut rng, &text, 0.1);
                    item(text, image)
                })
                .collect();
            // turn item 1 into item 0's counterpart: same scene, slightly
            // different embeddings on both sides
            items[1] = item(
                near(&mut rng, &items[0].text_embedding, 0.15),
                near(&mut rng, &items[0].image_embedding, 0.15),
            );
            let paired = Batch { items: items.clone() };

            let mut replaced_items = items.clone();
            let random_text = random_unit(&mut rng, dim);
            let random_image = near(&mut rng, &random_text, 0.1);
            replaced_items[1] = item(random_text, random_image);
            let replaced = Batch { items: replaced_items };

            let paired_loss = contrastive_loss(&paired, 0.07).unwrap();
            let random_loss = contrastive_loss(&replaced, 0.07).unwrap();
            if paired_loss > random_loss {
                higher += 1;
            }
            paired_sum += paired_loss;
            random_sum += random_loss;
        }
        assert!(higher >= 95, "paired batch lost more in only {higher}/100 trials");
        assert!(paired_sum > random_sum);
    }
}
