//! A separable synthetic task for exercising the trainer end to end.
//!
//! Each "source" is a unique object noun; one attribute pair from a fixed
//! vocabulary yields the positive/negative captions, and the matching
//! images carry the attribute as a solid color block over a per-object
//! background. Attribute words map to fixed colors, so what training learns
//! on one set of objects transfers to held-out objects: exactly the signal
//! hard-negative discrimination probes.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::eval::ChoiceTask;
use crate::pairing::build_pairs;
use crate::raster;
use crate::types::{
    derive_example_id, derive_pair_id, AttributeCategory, AugmentedExample, BoundingBox,
    HardNegativePair, Provenance, Side,
};

/// Attribute word pairs with the color channel each pair perturbs. The
/// attribute block paints the object's own background shifted by +/- delta
/// on that channel, so the absolute block color is object-specific while
/// the positive/negative difference is consistent across objects. Learning
/// that difference takes pressure from the co-located counterpart (whose
/// background cancels exactly); everything else in a batch differs by
/// object identity first.
const ATTRIBUTES: [(&str, &str, usize); 8] = [
    ("blue", "red", 0),
    ("green", "yellow", 1),
    ("round", "square", 2),
    ("curved", "straight", 0),
    ("wooden", "steel", 1),
    ("plastic", "glass", 2),
    ("small", "large", 0),
    ("shiny", "matte", 1),
];

/// Channel shift the attribute block applies to the background. Small on
/// purpose: the wide background variation drowns it in any per-population
/// average, while the counterpart contrast observes it noise-free.
const ATTRIBUTE_DELTA: i16 = 45;

const FILLERS: [&str; 4] = [
    "on the table",
    "near the window",
    "by the door",
    "in the corner",
];

#[derive(Debug, Clone, Copy)]
pub struct ToyTaskConfig {
    /// Hard negative pairs in the training split (2 examples each).
    pub n_train_pairs: usize,
    /// Unpaired singleton examples whose attribute-word/image-shift
    /// correlation is reversed. They null the marginal word statistics, so
    /// the attribute axis is only learnable from pairwise contrast: the
    /// deciding signal is which captions and images co-travel as pairs,
    /// not how often a word co-occurs with a color.
    pub n_distractors: usize,
    /// Held-out pairs scored for discrimination (2 choice tasks each).
    pub n_eval_pairs: usize,
    pub seed: u64,
    pub image_size: u32,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            n_train_pairs: 60,
            n_distractors: 80,
            n_eval_pairs: 40,
            seed: 0,
            image_size: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTask {
    pub train_examples: Vec<AugmentedExample>,
    pub train_pairs: Vec<HardNegativePair>,
    /// Two tasks per held-out pair: each side's image against both captions.
    pub eval_tasks: Vec<ChoiceTask>,
}

fn background_color(object: &str) -> Rgb<u8> {
    let digest = Sha256::digest(object.as_bytes());
    // wide mid-intensity band: per-object variation large next to the
    // attribute shift, so averaging positives across objects reveals little
    Rgb([
        64 + digest[0] % 128,
        64 + digest[1] % 128,
        64 + digest[2] % 128,
    ])
}

fn block_color(object: &str, channel: usize, side: Side) -> Rgb<u8> {
    let mut color = background_color(object);
    let shift = match side {
        Side::Positive => ATTRIBUTE_DELTA,
        Side::Negative => -ATTRIBUTE_DELTA,
    };
    color.0[channel] = (i16::from(color.0[channel]) + shift).clamp(0, 255) as u8;
    color
}

fn toy_image(
    size: u32,
    object: &str,
    channel: usize,
    side: Side,
    path: &Path,
) -> Result<(), std::io::Error> {
    let mut img = RgbImage::from_pixel(size, size, background_color(object));
    let block = BoundingBox::new(size / 2, 0, size - size / 2, size)
        .expect("attribute block has positive extent");
    raster::fill_rect(&mut img, &block, block_color(object, channel, side));
    raster::save_png(&img, path).map_err(std::io::Error::other)
}

/// Build the task on disk under `dir` (images land in `dir/images`).
/// Deterministic in `config.seed`.
pub fn generate_toy_task(config: &ToyTaskConfig, dir: &Path) -> std::io::Result<ToyTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;

    let total_pairs = config.n_train_pairs + config.n_eval_pairs;
    let mut train_examples = Vec::with_capacity(config.n_train_pairs * 2);
    let mut eval_tasks = Vec::with_capacity(config.n_eval_pairs * 2);
    // round-robin over families and fillers keeps every attribute pair
    // evenly covered in both splits; the seeded offset scrambles which
    // family a given object lands on
    let offset = rng.gen_range(0..ATTRIBUTES.len());

    for pair_idx in 0..total_pairs {
        let object = format!("item{pair_idx:03}");
        let source_id = format!("toy{pair_idx:03}");
        let (pos_word, neg_word, channel) =
            ATTRIBUTES[(pair_idx + offset) % ATTRIBUTES.len()];
        let filler = FILLERS[pair_idx % FILLERS.len()];
        let category = AttributeCategory::ALL[pair_idx % AttributeCategory::ALL.len()];
        let pair_id = derive_pair_id(&source_id, &object, category);

        let mut sides = Vec::with_capacity(2);
        for (side, word) in [(Side::Positive, pos_word), (Side::Negative, neg_word)] {
            let caption = format!("a {word} {object} {filler}");
            let image_path = images_dir.join(format!("{source_id}-{side}.png"));
            toy_image(config.image_size, &object, channel, side, &image_path)?;
            sides.push(AugmentedExample {
                example_id: derive_example_id(&pair_id, side),
                source_id: source_id.clone(),
                object_name: object.clone(),
                category: Some(category),
                side: Some(side),
                caption,
                image_ref: image_path.to_string_lossy().to_string(),
                pair_id: pair_id.clone(),
                provenance: Provenance::Synthesized,
            });
        }

        if pair_idx < config.n_train_pairs {
            train_examples.extend(sides);
        } else {
            let (pos, neg) = (&sides[0], &sides[1]);
            eval_tasks.push(ChoiceTask {
                image_ref: pos.image_ref.clone(),
                captions: vec![pos.caption.clone(), neg.caption.clone()],
                correct_index: 0,
                group: "attribute".to_string(),
            });
            eval_tasks.push(ChoiceTask {
                image_ref: neg.image_ref.clone(),
                captions: vec![neg.caption.clone(), pos.caption.clone()],
                correct_index: 0,
                group: "attribute".to_string(),
            });
        }
    }

    let train_pairs = build_pairs(&train_examples)
        .expect("generated examples pair cleanly by construction");

    // unpaired distractors: each attribute word reappears on fresh objects
    // with the opposite image shift, cycling through (family, side) slots so
    // the per-word marginals cancel
    for i in 0..config.n_distractors {
        let object = format!("noise{i:03}");
        let source_id = format!("raw{i:03}");
        let (pos_word, neg_word, channel) = ATTRIBUTES[(i + offset) % ATTRIBUTES.len()];
        let (word, side) = if (i / ATTRIBUTES.len()) % 2 == 0 {
            // the positive word over a negatively shifted block
            (pos_word, Side::Negative)
        } else {
            (neg_word, Side::Positive)
        };
        let filler = FILLERS[i % FILLERS.len()];
        let caption = format!("a {word} {object} {filler}");
        let image_path = images_dir.join(format!("{source_id}.png"));
        toy_image(config.image_size, &object, channel, side, &image_path)?;
        train_examples.push(AugmentedExample {
            example_id: format!("source/{source_id}"),
            source_id,
            object_name: String::new(),
            category: None,
            side: None,
            caption,
            image_ref: image_path.to_string_lossy().to_string(),
            pair_id: String::new(),
            provenance: Provenance::Source,
        });
    }

    Ok(ToyTask {
        train_examples,
        train_pairs,
        eval_tasks,
    })
}
