//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `--nocapture` to see them). Tolerances and time
//! budgets are pinned in the assertions.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biaug_cli::config::{CommonOpts, PipelineConfig};
use biaug_cli::fixture::generate_demo_dataset;
use biaug_cli::stages::Pipeline;
use biaug_core::backends::ToyEncoder;
use biaug_core::eval::{make_attribute_swap_negative, recall_at_k, score_choice_tasks, RetrievalDirection};
use biaug_core::filter::area_overlap_filter;
use biaug_core::manifest::read_manifest;
use biaug_core::train::{
    contrastive_loss, contrastive_loss_with_grad, generate_toy_task, scale_baseline_epochs, train,
    Batch, BatchItem, ToyTaskConfig, TrainConfig,
};
use biaug_core::types::{AugmentedExample, BoundingBox, DetectedObject};

fn pass(name: &str, detail: impl std::fmt::Display) {
    println!("ACCEPTANCE {name}: PASS ({detail})");
}

fn within(budget: Duration, started: Instant, name: &str) {
    let elapsed = started.elapsed();
    assert!(
        elapsed <= budget,
        "ACCEPTANCE {name}: FAIL (took {elapsed:?}, budget {budget:?})"
    );
}

// --- criterion: ledger reproduction -------------------------------------

#[test]
fn ledger_reproduction() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ledger = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/stats_ledger_40k.json");
    let opts = CommonOpts {
        source: Some(ledger),
        out: Some(dir.path().to_path_buf()),
        ..CommonOpts::default()
    };
    let pipeline = Pipeline::new(PipelineConfig::resolve(&opts).unwrap(), false).unwrap();
    let stats = pipeline.stats_auto().unwrap();

    assert_eq!(stats.n_source, 38_100);
    assert_eq!(stats.n_objects, 39_640);
    assert_eq!(stats.n_augmented, 122_026);
    assert_eq!(stats.n_augmented_filtered, 77_700);
    assert_eq!(stats.n_pairs, 61_013);
    assert_eq!(stats.n_pairs_filtered, 30_325);

    let emitted: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("stats.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(emitted["n_source"], 38_100);
    assert_eq!(emitted["n_pairs_filtered"], 30_325);

    within(Duration::from_secs(5), started, "ledger_reproduction");
    pass("ledger_reproduction", "six counts exact");
}

// --- criterion: area filter oracle equivalence ---------------------------

/// Independent float-geometry oracle for the overlap rule.
fn brute_force_area_filter(objects: &[DetectedObject], threshold: f64) -> BTreeSet<String> {
    let rect = |o: &DetectedObject| {
        let b = o.bbox;
        (
            f64::from(b.x()),
            f64::from(b.y()),
            f64::from(b.x() + b.w()),
            f64::from(b.y() + b.h()),
        )
    };
    let mut kept = BTreeSet::new();
    'outer: for (i, x) in objects.iter().enumerate() {
        let (ax0, ay0, ax1, ay1) = rect(x);
        for (j, y) in objects.iter().enumerate() {
            if i == j {
                continue;
            }
            let (bx0, by0, bx1, by1) = rect(y);
            let overlap_w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
            let overlap_h = (ay1.min(by1) - ay0.max(by0)).max(0.0);
            let overlap = overlap_w * overlap_h;
            let area_y = (bx1 - bx0) * (by1 - by0);
            if overlap > threshold * area_y {
                continue 'outer; // x occupies too much of y: removed
            }
        }
        kept.insert(x.name.clone());
    }
    kept
}

#[test]
fn area_filter_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..1000 {
        let n = rng.gen_range(0..=50);
        let objects: Vec<DetectedObject> = (0..n)
            .map(|i| DetectedObject {
                source_id: "s".into(),
                name: format!("o{i}"),
                bbox: BoundingBox::new(
                    rng.gen_range(0..80),
                    rng.gen_range(0..80),
                    rng.gen_range(1..50),
                    rng.gen_range(1..50),
                )
                .unwrap(),
                confidence: rng.gen_range(0.0..=1.0),
            })
            .collect();
        let threshold = rng.gen_range(0.1..=1.0);

        let kept: BTreeSet<String> = area_overlap_filter(&objects, threshold)
            .into_iter()
            .map(|o| o.name)
            .collect();
        let oracle = brute_force_area_filter(&objects, threshold);
        assert_eq!(kept, oracle, "trial {trial} (n={n}, threshold={threshold})");
    }
    within(Duration::from_secs(30), started, "area_filter_oracle_equivalence");
    pass("area_filter_oracle_equivalence", "1000 seeded trials exact");
}

// --- criterion: loss correctness -----------------------------------------

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    biaug_core::backends::toy_encoder::normalize(&mut v);
    v
}

#[test]
fn loss_correctness() {
    let started = Instant::now();

    // identical batches: loss must equal ln N to 1e-9
    for n in [2usize, 4, 8] {
        let item = BatchItem {
            text_embedding: vec![1.0, 0.0, 0.0],
            image_embedding: vec![1.0, 0.0, 0.0],
            example_id: "e".into(),
            pair_id: None,
        };
        let batch = Batch {
            items: vec![item; n],
        };
        for tau in [0.07, 1.0] {
            let loss = contrastive_loss(&batch, tau).unwrap();
            assert!(
                (loss - (n as f64).ln()).abs() <= 1e-9,
                "N={n} tau={tau}: loss {loss}"
            );
        }
    }

    // gradient against central finite differences, 100 random batches
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..100 {
        let n = rng.gen_range(2..=8);
        let dim = rng.gen_range(2..=8);
        let tau = [0.07, 0.2, 1.0][trial % 3];
        let batch = Batch {
            items: (0..n)
                .map(|i| BatchItem {
                    text_embedding: random_unit(&mut rng, dim),
                    image_embedding: random_unit(&mut rng, dim),
                    example_id: format!("e{i}"),
                    pair_id: None,
                })
                .collect(),
        };
        let (_, grad) = contrastive_loss_with_grad(&batch, tau).unwrap();

        let h = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for idx in 0..n {
            for text_side in [true, false] {
                for k in 0..dim {
                    let mut plus = batch.clone();
                    let mut minus = batch.clone();
                    if text_side {
                        plus.items[idx].text_embedding[k] += h;
                        minus.items[idx].text_embedding[k] -= h;
                    } else {
                        plus.items[idx].image_embedding[k] += h;
                        minus.items[idx].image_embedding[k] -= h;
                    }
                    let fd = (contrastive_loss(&plus, tau).unwrap()
                        - contrastive_loss(&minus, tau).unwrap())
                        / (2.0 * h);
                    numeric.push(fd);
                    analytic.push(if text_side {
                        grad.text[idx][k]
                    } else {
                        grad.image[idx][k]
                    });
                }
            }
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let relative = diff / scale;
        assert!(
            relative <= 1e-5,
            "trial {trial}: relative gradient error {relative}"
        );
    }
    within(Duration::from_secs(60), started, "loss_correctness");
    pass("loss_correctness", "ln N exact to 1e-9; 100 gradient checks within 1e-5");
}

// --- criterion: retrieval oracle equivalence ------------------------------

/// Rank-counting oracle: a query hits at k when some gold item has fewer
/// than k items ranked ahead of it (strictly better, or tied at lower index).
fn brute_force_recall(
    similarity: &[Vec<f64>],
    gold: &[(usize, usize)],
    k: usize,
    direction: RetrievalDirection,
) -> f64 {
    use std::collections::BTreeMap;
    let mut queries: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(c, i) in gold {
        match direction {
            RetrievalDirection::ImageRetrieval => queries.entry(c).or_default().push(i),
            RetrievalDirection::TextRetrieval => queries.entry(i).or_default().push(c),
        }
    }
    let score = |query: usize, item: usize| match direction {
        RetrievalDirection::ImageRetrieval => similarity[query][item],
        RetrievalDirection::TextRetrieval => similarity[item][query],
    };
    let item_count = match direction {
        RetrievalDirection::ImageRetrieval => similarity[0].len(),
        RetrievalDirection::TextRetrieval => similarity.len(),
    };
    let mut hits = 0usize;
    for (&query, gold_items) in &queries {
        let hit = gold_items.iter().any(|&g| {
            let gs = score(query, g);
            let ahead = (0..item_count)
                .filter(|&other| {
                    let os = score(query, other);
                    os > gs || (os == gs && other < g)
                })
                .count();
            ahead < k
        });
        if hit {
            hits += 1;
        }
    }
    hits as f64 / queries.len() as f64
}

#[test]
fn retrieval_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let ks = [1usize, 2, 3, 5, 8, 13, 21, 34, 50];
    for trial in 0..1000 {
        let similarity: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut gold: Vec<(usize, usize)> = (0..50).map(|c| (c, rng.gen_range(0..50))).collect();
        // a handful of one-to-many entries
        for _ in 0..5 {
            gold.push((rng.gen_range(0..50), rng.gen_range(0..50)));
        }
        for direction in [
            RetrievalDirection::ImageRetrieval,
            RetrievalDirection::TextRetrieval,
        ] {
            let mut previous = 0.0;
            for k in ks {
                let fast = recall_at_k(&similarity, &gold, k, direction);
                let slow = brute_force_recall(&similarity, &gold, k, direction);
                assert_eq!(fast, slow, "trial {trial} k={k} {direction:?}");
                assert!(
                    fast >= previous,
                    "trial {trial}: recall dropped from {previous} at k={k}"
                );
                previous = fast;
            }
        }
    }
    within(Duration::from_secs(60), started, "retrieval_oracle_equivalence");
    pass("retrieval_oracle_equivalence", "1000 matrices exact and monotone");
}

// --- criterion: end-to-end determinism ------------------------------------

fn run_all_into(source: &Path, out: &Path, seed: u64) {
    let opts = CommonOpts {
        source: Some(source.to_path_buf()),
        out: Some(out.to_path_buf()),
        seed: Some(seed),
        workers: Some(4),
        ..CommonOpts::default()
    };
    Pipeline::new(PipelineConfig::resolve(&opts).unwrap(), false)
        .unwrap()
        .run_all()
        .unwrap();
}

#[test]
fn end_to_end_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let source = generate_demo_dataset(&dir.path().join("demo"), 40, 7).unwrap();

    let out_a = dir.path().join("run-a");
    let out_b = dir.path().join("run-b");
    run_all_into(&source, &out_a, 7);
    run_all_into(&source, &out_b, 7);

    for file in ["augmented.jsonl", "pairs.jsonl", "stats.json"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert!(!a.is_empty(), "{file} came out empty");
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    within(Duration::from_secs(60), started, "end_to_end_determinism");
    pass("end_to_end_determinism", "three artifacts byte-identical");
}

// --- criterion: pairing law ------------------------------------------------

#[test]
fn pairing_law() {
    let dir = tempfile::tempdir().unwrap();
    let source = generate_demo_dataset(&dir.path().join("demo"), 40, 7).unwrap();
    let out = dir.path().join("out");
    run_all_into(&source, &out, 7);

    let examples: Vec<AugmentedExample> = read_manifest(&out.join("augmented.jsonl")).unwrap();
    assert!(!examples.is_empty());
    let mut groups: std::collections::BTreeMap<&str, Vec<&AugmentedExample>> = Default::default();
    for example in &examples {
        groups.entry(example.pair_id.as_str()).or_default().push(example);
    }

    let mut violations = 0usize;
    for (pair_id, members) in &groups {
        if members.len() != 2 {
            eprintln!("pair {pair_id} has {} members", members.len());
            violations += 1;
            continue;
        }
        let (a, b) = (members[0], members[1]);
        if a.side.map(|s| s.opposite()) != b.side {
            eprintln!("pair {pair_id} sides are not opposite");
            violations += 1;
            continue;
        }
        let (mid_a, mid_b) = middle_diff(&a.caption, &b.caption);
        if mid_a.is_empty() || mid_b.is_empty() || mid_a == mid_b {
            eprintln!(
                "pair {pair_id} captions do not differ in a single span: `{}` vs `{}`",
                a.caption, b.caption
            );
            violations += 1;
        }
    }
    assert_eq!(violations, 0, "pairing law violated {violations} times");
    pass("pairing_law", format!("{} pairs clean", groups.len()));
}

fn middle_diff(a: &str, b: &str) -> (String, String) {
    let ab = a.as_bytes();
    let bb = b.as_bytes();
    let prefix = ab.iter().zip(bb).take_while(|(x, y)| x == y).count();
    let max_suffix = ab.len().min(bb.len()) - prefix;
    let suffix = ab
        .iter()
        .rev()
        .zip(bb.iter().rev())
        .take_while(|(x, y)| x == y)
        .count()
        .min(max_suffix);
    (
        a[prefix..a.len() - suffix].to_string(),
        b[prefix..b.len() - suffix].to_string(),
    )
}

// --- criterion: directional training effect --------------------------------

fn discrimination_accuracy(seed: u64, use_hard_negatives: bool) -> f64 {
    let dir = tempfile::tempdir().unwrap();
    let task = generate_toy_task(
        &ToyTaskConfig {
            seed,
            ..ToyTaskConfig::default()
        },
        dir.path(),
    )
    .unwrap();
    assert_eq!(task.train_examples.len(), 200, "criterion fixes 200 examples");

    let config = TrainConfig {
        use_hard_negatives,
        epochs: usize::MAX / 2,
        max_steps: Some(200),
        ..TrainConfig::toy(seed)
    };
    let outcome = train(
        &task.train_examples,
        &task.train_pairs,
        ToyEncoder::seeded(64, seed),
        &config,
    )
    .unwrap();
    assert_eq!(outcome.trace.len(), 200, "criterion fixes 200 steps");
    score_choice_tasks(&task.eval_tasks, &outcome.encoder)
        .unwrap()
        .macro_accuracy
}

#[test]
fn directional_training_effect() {
    let started = Instant::now();
    let seeds = [0u64, 1, 2, 3, 4];
    let mut with_hard = 0.0;
    let mut without_hard = 0.0;
    for &seed in &seeds {
        with_hard += discrimination_accuracy(seed, true);
        without_hard += discrimination_accuracy(seed, false);
    }
    with_hard /= seeds.len() as f64;
    without_hard /= seeds.len() as f64;

    assert!(
        with_hard >= 0.9,
        "held-out discrimination with hard negatives is {with_hard:.4}, needs >= 0.9"
    );
    assert!(
        with_hard - without_hard >= 0.05,
        "gap is {:.4} ({with_hard:.4} vs {without_hard:.4}), needs >= 0.05",
        with_hard - without_hard
    );
    within(Duration::from_secs(300), started, "directional_training_effect");
    pass(
        "directional_training_effect",
        format!("hard {with_hard:.3} vs plain {without_hard:.3} over 5 seeds"),
    );
}

// --- criterion: epoch-scaling rule ------------------------------------------

#[test]
fn epoch_scaling_rule() {
    assert_eq!(scale_baseline_epochs(3 * 12_345, 12_345, 5), 15);
    pass("epoch_scaling_rule", "3x dataset -> 15 epochs exact");
}

// --- criterion: attribute-swap involution ------------------------------------

#[test]
fn attribute_swap_involution() {
    let reference = "the paved road and the white house";
    let swapped = make_attribute_swap_negative(reference).unwrap();
    assert_eq!(swapped, "the white road and the paved house");
    assert_eq!(make_attribute_swap_negative(&swapped).unwrap(), reference);

    let adjectives = ["paved", "white", "tall", "red", "wooden", "narrow", "bright", "old", "wet", "clean"];
    let nouns = ["road", "house", "fence", "tower", "car", "gate", "bridge", "wall", "bench", "roof"];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    while checked < 100 {
        let a1 = adjectives[rng.gen_range(0..adjectives.len())];
        let a2 = adjectives[rng.gen_range(0..adjectives.len())];
        if a1 == a2 {
            continue;
        }
        let o1 = nouns[rng.gen_range(0..nouns.len())];
        let o2 = nouns[rng.gen_range(0..nouns.len())];
        let caption = format!("the {a1} {o1} and the {a2} {o2}");
        let once = make_attribute_swap_negative(&caption).unwrap();
        assert_ne!(once, caption);
        let twice = make_attribute_swap_negative(&once).unwrap();
        assert_eq!(twice, caption, "involution failed for `{caption}`");
        checked += 1;
    }
    pass("attribute_swap_involution", "reference example plus 100 fixtures round-trip");
}
