//! Seed-deterministic batch composition.
//!
//! With hard negatives on, the two sides of every complete pair ride in the
//! same batch, each as its own positive example; being co-located is the
//! whole mechanism, there is no extra loss term. With hard negatives off,
//! counterparts are kept in different batches and nothing else changes.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, BatchItem, TrainConfig, TrainError};
use crate::backends::{Embedder, EmbeddingRequest};
use crate::types::{AugmentedExample, HardNegativePair};

/// Map example index -> index of its pair counterpart, for counterparts
/// that are actually present in `examples`.
fn counterpart_map(
    examples: &[AugmentedExample],
    pairs: &[HardNegativePair],
) -> HashMap<usize, usize> {
    let by_id: HashMap<&str, usize> = examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.example_id.as_str(), i))
        .collect();
    let mut map = HashMap::new();
    for pair in pairs {
        if let (Some(&a), Some(&b)) = (
            by_id.get(pair.positive_example_id.as_str()),
            by_id.get(pair.negative_example_id.as_str()),
        ) {
            map.insert(a, b);
            map.insert(b, a);
        }
    }
    map
}

/// Plan batch membership as index groups over `examples`. Shuffling is a
/// pure function of `seed`; the plan is reused across epochs.
pub fn plan_batches(
    examples: &[AugmentedExample],
    pairs: &[HardNegativePair],
    config: &TrainConfig,
    seed: u64,
) -> Vec<Vec<usize>> {
    let counterparts = counterpart_map(examples, pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if config.use_hard_negatives {
        plan_colocated(examples.len(), &counterparts, config.batch_size, &mut rng)
    } else {
        plan_separated(examples.len(), &counterparts, config.batch_size, &mut rng)
    }
}

fn plan_colocated(
    n: usize,
    counterparts: &HashMap<usize, usize>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    // units: complete pairs move as one block, everything else alone
    let mut units: Vec<Vec<usize>> = Vec::new();
    let mut placed = vec![false; n];
    for i in 0..n {
        if placed[i] {
            continue;
        }
        match counterparts.get(&i) {
            Some(&j) if !placed[j] => {
                placed[i] = true;
                placed[j] = true;
                units.push(vec![i.min(j), i.max(j)]);
            }
            _ => {
                placed[i] = true;
                units.push(vec![i]);
            }
        }
    }
    units.shuffle(rng);

    // first-fit packing with lookahead so a trailing 1-slot gap can still
    // take a later singleton instead of splitting a pair
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut queue: VecDeque<Vec<usize>> = units.into();
    while let Some(unit) = queue.pop_front() {
        if current.len() + unit.len() <= batch_size {
            current.extend(unit);
        } else {
            let gap = batch_size - current.len();
            if let Some(pos) = queue.iter().position(|u| u.len() <= gap) {
                let filler = queue.remove(pos).expect("position came from the queue");
                current.extend(filler);
            }
            if current.len() >= 2 {
                batches.push(std::mem::take(&mut current));
                current.extend(unit);
            } else {
                // a lone example nothing can join yet: send it to the back
                // of the queue so it lands in a later batch or gets merged
                queue.push_back(std::mem::take(&mut current));
                current.extend(unit);
            }
        }
        if current.len() == batch_size {
            batches.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    merge_trailing_singleton(&mut batches);
    batches
}

fn plan_separated(
    n: usize,
    counterparts: &HashMap<usize, usize>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut remaining: VecDeque<usize> = order.into();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    while !remaining.is_empty() {
        let mut batch: Vec<usize> = Vec::new();
        let mut conflicted: Vec<usize> = Vec::new();
        while batch.len() < batch_size {
            let Some(idx) = remaining.pop_front() else {
                break;
            };
            let conflicts = counterparts
                .get(&idx)
                .is_some_and(|c| batch.contains(c));
            if conflicts {
                conflicted.push(idx);
            } else {
                batch.push(idx);
            }
        }
        for idx in conflicted.into_iter().rev() {
            remaining.push_front(idx);
        }
        batches.push(batch);
    }

    // a trailing singleton joins the latest batch that holds no counterpart
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let idx = batches.pop().expect("just checked").pop().expect("len 1");
        let counterpart = counterparts.get(&idx).copied();
        let slot = batches
            .iter()
            .rposition(|b| counterpart.map_or(true, |c| !b.contains(&c)));
        match slot {
            Some(pos) => batches[pos].push(idx),
            None => batches.push(vec![idx]),
        }
    }
    batches
}

fn merge_trailing_singleton(batches: &mut Vec<Vec<usize>>) {
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("just checked");
        batches
            .last_mut()
            .expect("len was > 1 before the pop")
            .extend(tail);
    }
}

/// Plan batches and embed every member with `embedder`: captions as text,
/// `image_ref`s as images. Produces validated [`Batch`] values.
pub fn build_batches(
    examples: &[AugmentedExample],
    pairs: &[HardNegativePair],
    config: &TrainConfig,
    seed: u64,
    embedder: &dyn Embedder,
) -> Result<Vec<Batch>, TrainError> {
    config.validate()?;
    let plan = plan_batches(examples, pairs, config, seed);
    let mut batches = Vec::with_capacity(plan.len());
    for group in plan {
        let mut items = Vec::with_capacity(group.len());
        for idx in group {
            let example = &examples[idx];
            let text_embedding = embedder.embed(&EmbeddingRequest::text(&example.caption))?;
            let image_embedding =
                embedder.embed(&EmbeddingRequest::image(&example.image_ref))?;
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
        }
        let batch = Batch { items };
        batch.validate()?;
        batches.push(batch);
    }
    Ok(batches)
}
