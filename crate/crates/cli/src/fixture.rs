//! Deterministic demo fixture: a small caption-image dataset plus the mock
//! configuration that grounds it, and tiny evaluation files for the choice
//! and retrieval commands. Everything a full pipeline run needs, generated
//! from a seed.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use biaug_core::backends::mock::{MockConfig, SceneImplied};
use biaug_core::eval::{
    make_attribute_swap_negative, make_order_negatives, ChoiceTask, OrderNegativeMode, PosLexicon,
    RetrievalSplit,
};
use biaug_core::manifest::write_manifest;
use biaug_core::raster;
use biaug_core::types::{BoundingBox, CaptionImagePair};

const IMAGE_SIZE: u32 = 64;

/// Nouns the demo detector can ground, with their boxes. Large objects
/// clear the confidence filter (coverage above 0.8); small ones do not.
/// Nested combinations exercise the area-overlap rule.
fn known_objects() -> BTreeMap<String, BoundingBox> {
    let entries: [(&str, (u32, u32, u32, u32)); 12] = [
        // coverage 0.82 -> confidence 0.91, survives the 0.9 threshold
        ("cabinet", (2, 4, 60, 56)),
        ("sofa", (2, 4, 60, 56)),
        ("bed", (2, 4, 60, 56)),
        ("piano", (2, 4, 60, 56)),
        // small objects, confidence well under 0.9
        ("salmon", (4, 4, 20, 20)),
        ("table", (28, 36, 24, 20)),
        ("plate", (46, 6, 14, 14)),
        ("book", (6, 40, 18, 12)),
        ("cup", (30, 8, 10, 12)),
        ("lamp", (40, 34, 16, 22)),
        // the ball nests inside the dog, so the dog falls to the area rule
        ("dog", (8, 8, 40, 40)),
        ("tennis ball", (12, 12, 10, 10)),
    ];
    entries
        .into_iter()
        .map(|(name, (x, y, w, h))| {
            (
                name.to_string(),
                BoundingBox::new(x, y, w, h).expect("fixture boxes are non-empty"),
            )
        })
        .collect()
}

/// Mock word lists matching the demo dataset.
pub fn demo_mock_config() -> MockConfig {
    let mut category_words = BTreeMap::new();
    category_words.insert(
        biaug_core::AttributeCategory::Color,
        vec!["blue".to_string(), "red".to_string()],
    );
    category_words.insert(
        biaug_core::AttributeCategory::Shape,
        vec!["round".to_string(), "square".to_string()],
    );
    category_words.insert(
        biaug_core::AttributeCategory::Material,
        vec!["wooden".to_string(), "steel".to_string()],
    );
    category_words.insert(
        biaug_core::AttributeCategory::Other,
        vec!["small".to_string(), "large".to_string()],
    );
    MockConfig {
        lexicon: known_objects().keys().cloned().collect(),
        scene_implied: vec![SceneImplied {
            trigger: "dish".to_string(),
            implied: "plate".to_string(),
        }],
        category_words,
        known_objects: known_objects(),
    }
}

fn caption_for(index: usize) -> String {
    // three families: solo large object, small-object still lifes, and the
    // nested dog/ball scenes
    const LARGE: [&str; 4] = ["cabinet", "sofa", "bed", "piano"];
    const LARGE_SCENES: [&str; 3] = ["against the wall", "in the corner", "by the stairs"];
    const SMALL: [&str; 4] = [
        "a salmon dish on the table",
        "a book beside a cup on the table",
        "a lamp and a book on the table",
        "a cup on the table near a plate",
    ];
    const NESTED: [&str; 3] = [
        "a dog runs with a tennis ball in its mouth",
        "a dog chewing a tennis ball outside",
        "a dog guarding a tennis ball",
    ];
    match index % 3 {
        0 => {
            let slot = index / 3;
            format!(
                "a {} {}",
                LARGE[slot % LARGE.len()],
                LARGE_SCENES[slot % LARGE_SCENES.len()]
            )
        }
        1 => SMALL[(index / 3) % SMALL.len()].to_string(),
        _ => NESTED[(index / 3) % NESTED.len()].to_string(),
    }
}

fn demo_image(id: &str, caption: &str, objects: &BTreeMap<String, BoundingBox>) -> RgbImage {
    let digest = Sha256::digest(id.as_bytes());
    let mut img = RgbImage::from_pixel(
        IMAGE_SIZE,
        IMAGE_SIZE,
        Rgb([96 + digest[0] % 64, 96 + digest[1] % 64, 96 + digest[2] % 64]),
    );
    // paint each mentioned object's box so images carry real structure
    for (name, bbox) in objects {
        if caption.contains(name.as_str()) {
            let color = Sha256::digest(name.as_bytes());
            raster::fill_rect(&mut img, bbox, Rgb([color[0], color[1], color[2]]));
        }
    }
    img
}

/// Generate `count` source records with images under `dir`, plus the
/// matching `mock.json`. Returns the source manifest path.
pub fn generate_demo_dataset(dir: &Path, count: usize, seed: u64) -> Result<std::path::PathBuf> {
    let _ = seed; // content is index-deterministic; the seed names the run
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .with_context(|| format!("creating {}", images_dir.display()))?;

    let objects = known_objects();
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("cip-{i:04}");
        let caption = caption_for(i);
        let file = format!("images/{id}.png");
        let img = demo_image(&id, &caption, &objects);
        raster::save_png(&img, &dir.join(&file)).map_err(anyhow::Error::msg)?;
        records.push(CaptionImagePair::new(id, caption, file));
    }
    let source_path = dir.join("source.jsonl");
    write_manifest(&records, &source_path)?;

    let mock = demo_mock_config();
    std::fs::write(dir.join("mock.json"), serde_json::to_string_pretty(&mock)?)?;
    Ok(source_path)
}

/// Colored square used by the evaluation fixtures.
fn eval_image(dir: &Path, name: &str, color: [u8; 3]) -> Result<String> {
    let file = format!("images/{name}.png");
    let img = RgbImage::from_pixel(IMAGE_SIZE, IMAGE_SIZE, Rgb(color));
    raster::save_png(&img, &dir.join(&file)).map_err(anyhow::Error::msg)?;
    Ok(file)
}

/// Write `choice_tasks.jsonl` and `retrieval_split.json` under `dir`.
/// Distractor captions come from the swap and order perturbation rules.
pub fn generate_eval_fixtures(dir: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir.join("images"))?;

    let attribution_bases = [
        "the paved road and the white house",
        "the red boat and the wooden pier",
        "the round table and the green lamp",
        "the small cup and the blue plate",
    ];
    let order_bases = [
        "a dog runs across the sunny park",
        "a cat sleeps beside the warm stove",
        "two boats drift along the calm river",
        "a child reads under the old tree",
    ];
    let lexicon = PosLexicon {
        adjectives: ["sunny", "warm", "calm", "old"].map(String::from).to_vec(),
        nouns: ["dog", "park", "cat", "stove", "boats", "river", "child", "tree"]
            .map(String::from)
            .to_vec(),
    };

    let mut tasks = Vec::new();
    for (i, base) in attribution_bases.iter().enumerate() {
        let image_ref = eval_image(dir, &format!("attr-{i}"), [40 + 40 * i as u8, 80, 160])?;
        let negative = make_attribute_swap_negative(base)?;
        tasks.push(ChoiceTask {
            image_ref,
            captions: vec![base.to_string(), negative],
            correct_index: 0,
            group: "attribution".to_string(),
        });
    }
    for (i, base) in order_bases.iter().enumerate() {
        let image_ref = eval_image(dir, &format!("order-{i}"), [160, 40 + 40 * i as u8, 80])?;
        let mode = match i % 3 {
            0 => OrderNegativeMode::UnigramShuffle,
            1 => OrderNegativeMode::TrigramShuffle,
            _ => OrderNegativeMode::AdjNounSwap,
        };
        let negative = make_order_negatives(base, mode, rng.gen(), &lexicon)?;
        tasks.push(ChoiceTask {
            image_ref,
            captions: vec![base.to_string(), negative],
            correct_index: 0,
            group: "order".to_string(),
        });
    }
    write_manifest(&tasks, &dir.join("choice_tasks.jsonl"))?;

    let mut images = Vec::new();
    let mut captions = Vec::new();
    let palette: [(&str, [u8; 3]); 6] = [
        ("a red square", [220, 40, 40]),
        ("a green square", [40, 200, 60]),
        ("a blue square", [40, 70, 220]),
        ("a yellow square", [230, 220, 50]),
        ("a violet square", [150, 60, 200]),
        ("a gray square", [128, 128, 128]),
    ];
    for (i, (caption, color)) in palette.iter().enumerate() {
        images.push(eval_image(dir, &format!("ret-{i}"), *color)?);
        captions.push(caption.to_string());
    }
    let split = RetrievalSplit {
        images,
        captions,
        gold: (0..palette.len()).map(|i| (i, i)).collect(),
    };
    std::fs::write(
        dir.join("retrieval_split.json"),
        serde_json::to_string_pretty(&split)?,
    )?;
    Ok(())
}
