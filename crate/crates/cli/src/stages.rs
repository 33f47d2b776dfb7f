//! The pipeline stages behind the subcommands. Every stage reads its input
//! manifests, writes its output manifest plus a run report, and records
//! skipped records in the error ledger. Stages are resumable: with
//! `--resume`, records whose outputs already exist are not recomputed, and
//! because all backends are deterministic the merged manifests come out
//! identical either way.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use biaug_core::augment::{
    decouple_attributes, extract_objects, ground_objects, synthesize_example, PromptTemplate,
    TemplateKind,
};
use biaug_core::backends::{BackendSet, MockConfig};
use biaug_core::filter::{area_overlap_filter, confidence_filter};
use biaug_core::manifest::{read_manifest, write_manifest, CandidateSet};
use biaug_core::pairing::build_pairs;
use biaug_core::stats::{assemble_dataset, compute_stats, DatasetStats, StatsInputs};
use biaug_core::backends::ToyEncoder;
use biaug_core::train::{evaluate_loss_trace, train, Checkpoint};
use biaug_core::types::{
    AttributeSpec, AugmentedExample, CaptionImagePair, DetectedObject, HardNegativePair,
    Provenance, Side,
};

use crate::config::PipelineConfig;
use crate::paths::{relativize, resolve_ref, OutPaths};
use crate::report::{RunReport, StageLog};

pub struct Pipeline {
    pub config: PipelineConfig,
    pub resume: bool,
    paths: OutPaths,
    backends: BackendSet,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, resume: bool) -> Result<Self> {
        let paths = OutPaths::new(&config.out_dir);
        std::fs::create_dir_all(&config.out_dir)
            .with_context(|| format!("creating {}", config.out_dir.display()))?;

        let mock = match &config.mock {
            Some(mock) => mock.clone(),
            None => sibling_mock_config(config.source.as_deref())?,
        };
        let retry = biaug_core::backends::RetryPolicy {
            max_inflight: config.workers.max(1),
            ..Default::default()
        };
        let backends = BackendSet::from_endpoints(
            &config.backends,
            mock,
            paths.images_dir(),
            config.seed,
            retry,
        );
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .context("building worker pool")?;
        Ok(Self {
            config,
            resume,
            paths,
            backends,
            pool,
        })
    }

    fn source_dir(&self) -> Result<PathBuf> {
        let source = self.config.source_path()?;
        Ok(source
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")))
    }

    fn read_sources(&self) -> Result<Vec<CaptionImagePair>> {
        let path = self.config.source_path()?;
        if !path.exists() {
            bail!("missing input: {}", path.display());
        }
        Ok(read_manifest(path)?)
    }

    /// Source records with image references resolved to real paths.
    fn resolved_sources(&self) -> Result<Vec<CaptionImagePair>> {
        let dir = self.source_dir()?;
        Ok(self
            .read_sources()?
            .into_iter()
            .map(|mut pair| {
                pair.image_ref = resolve_ref(&dir, &pair.image_ref)
                    .to_string_lossy()
                    .to_string();
                pair
            })
            .collect())
    }

    fn template(&self, kind: TemplateKind) -> Result<PromptTemplate> {
        let path = match kind {
            TemplateKind::ObjectExtraction => &self.config.templates.object_extraction,
            TemplateKind::AttributeDecoupling => &self.config.templates.attribute_decoupling,
        };
        Ok(match path {
            Some(path) => PromptTemplate::load(path, kind)?,
            None => PromptTemplate::builtin(kind),
        })
    }

    fn existing<T: biaug_core::manifest::ManifestRecord>(&self, path: &Path) -> Result<Vec<T>> {
        if self.resume && path.exists() {
            Ok(read_manifest(path)?)
        } else {
            Ok(Vec::new())
        }
    }

    /// Propose candidate objects from each caption: `source.jsonl` to
    /// `candidates.jsonl`.
    pub fn extract(&self) -> Result<RunReport> {
        let sources = self.read_sources()?;
        let template = self.template(TemplateKind::ObjectExtraction)?;
        let mut records: Vec<CandidateSet> = self.existing(&self.paths.candidates())?;
        let done: BTreeSet<String> = records.iter().map(|c| c.source_id.clone()).collect();
        let todo: Vec<&CaptionImagePair> =
            sources.iter().filter(|p| !done.contains(&p.id)).collect();

        let seed = self.config.seed;
        let generator = &*self.backends.generator;
        let results: Vec<(String, Result<Vec<String>, _>)> = self.pool.install(|| {
            todo.par_iter()
                .map(|pair| {
                    (
                        pair.id.clone(),
                        extract_objects(&pair.caption, &template, generator, seed),
                    )
                })
                .collect()
        });

        let mut log = StageLog::new("extract", &self.config.out_dir);
        for (source_id, result) in results {
            match result {
                Ok(names) => records.push(CandidateSet { source_id, names }),
                Err(e) => log.skip(&source_id, e),
            }
        }
        let output_count = write_manifest(&records, &self.paths.candidates())?;
        log.finish(sources.len(), output_count, self.config.skip_budget_fraction)
    }

    /// Ground candidates in their images and apply the always-on
    /// area-overlap rule: `candidates.jsonl` to `objects.jsonl`.
    pub fn ground(&self) -> Result<RunReport> {
        let sources = self.resolved_sources()?;
        let by_id: BTreeMap<&str, &CaptionImagePair> =
            sources.iter().map(|p| (p.id.as_str(), p)).collect();
        let candidates: Vec<CandidateSet> = read_manifest(&self.paths.candidates())?;
        let mut records: Vec<DetectedObject> = self.existing(&self.paths.objects())?;
        let done: BTreeSet<String> = records.iter().map(|o| o.source_id.clone()).collect();
        let todo: Vec<&CandidateSet> = candidates
            .iter()
            .filter(|c| !done.contains(&c.source_id))
            .collect();

        let detector = &*self.backends.detector;
        let threshold = self.config.filter.area_overlap_threshold;
        let results: Vec<(String, Result<Vec<DetectedObject>, _>)> = self.pool.install(|| {
            todo.par_iter()
                .map(|candidate| {
                    let outcome = match by_id.get(candidate.source_id.as_str()) {
                        Some(pair) => ground_objects(pair, &candidate.names, detector)
                            .map(|objects| area_overlap_filter(&objects, threshold)),
                        None => Err(biaug_core::augment::AugmentError::Precondition(format!(
                            "candidate references unknown source `{}`",
                            candidate.source_id
                        ))),
                    };
                    (candidate.source_id.clone(), outcome)
                })
                .collect()
        });

        let mut log = StageLog::new("ground", &self.config.out_dir);
        for (source_id, result) in results {
            match result {
                Ok(objects) => records.extend(objects),
                Err(e) => log.skip(&source_id, e),
            }
        }
        let output_count = write_manifest(&records, &self.paths.objects())?;
        log.finish(
            candidates.len(),
            output_count,
            self.config.skip_budget_fraction,
        )
    }

    /// Generate attribute descriptions plus counter-descriptions per
    /// grounded object: `objects.jsonl` to `attributes.jsonl`.
    pub fn decouple(&self) -> Result<RunReport> {
        let sources = self.read_sources()?;
        let by_id: BTreeMap<&str, &CaptionImagePair> =
            sources.iter().map(|p| (p.id.as_str(), p)).collect();
        let objects: Vec<DetectedObject> = read_manifest(&self.paths.objects())?;
        let template = self.template(TemplateKind::AttributeDecoupling)?;
        let mut records: Vec<AttributeSpec> = self.existing(&self.paths.attributes())?;
        let done: BTreeSet<(String, String)> = records
            .iter()
            .map(|s| (s.source_id.clone(), s.object_name.clone()))
            .collect();
        let todo: Vec<&DetectedObject> = objects
            .iter()
            .filter(|o| !done.contains(&(o.source_id.clone(), o.name.clone())))
            .collect();

        let seed = self.config.seed;
        let generator = &*self.backends.generator;
        let results: Vec<(String, Result<Vec<AttributeSpec>, _>)> = self.pool.install(|| {
            todo.par_iter()
                .map(|object| {
                    let record_id = format!("{}/{}", object.source_id, object.name);
                    let outcome = match by_id.get(object.source_id.as_str()) {
                        Some(pair) => {
                            decouple_attributes(&pair.caption, &object.name, &template, generator, seed)
                                .map(|result| {
                                    result
                                        .specs
                                        .into_iter()
                                        .map(|mut spec| {
                                            spec.source_id = object.source_id.clone();
                                            spec
                                        })
                                        .collect()
                                })
                        }
                        None => Err(biaug_core::augment::AugmentError::Precondition(format!(
                            "object references unknown source `{}`",
                            object.source_id
                        ))),
                    };
                    (record_id, outcome)
                })
                .collect()
        });

        let mut log = StageLog::new("decouple", &self.config.out_dir);
        for (record_id, result) in results {
            match result {
                Ok(specs) => records.extend(specs),
                Err(e) => log.skip(&record_id, e),
            }
        }
        let output_count = write_manifest(&records, &self.paths.attributes())?;
        log.finish(objects.len(), output_count, self.config.skip_budget_fraction)
    }

    /// Rewrite the caption and inpaint the object box for both sides of
    /// every attribute spec: `attributes.jsonl` to `augmented.jsonl` plus
    /// image files. A side that fails leaves its counterpart as an orphan.
    pub fn synthesize(&self) -> Result<RunReport> {
        let sources = self.resolved_sources()?;
        let source_by_id: BTreeMap<&str, &CaptionImagePair> =
            sources.iter().map(|p| (p.id.as_str(), p)).collect();
        let objects: Vec<DetectedObject> = read_manifest(&self.paths.objects())?;
        let object_by_key: BTreeMap<(String, String), &DetectedObject> = objects
            .iter()
            .map(|o| ((o.source_id.clone(), o.name.clone()), o))
            .collect();
        let specs: Vec<AttributeSpec> = read_manifest(&self.paths.attributes())?;
        let mut records: Vec<AugmentedExample> = self.existing(&self.paths.augmented())?;
        let done: BTreeSet<String> = records.iter().map(|e| e.example_id.clone()).collect();

        let seed = self.config.seed;
        let generator = &*self.backends.generator;
        let inpainter = &*self.backends.inpainter;
        type SideOutcome = (Side, Result<AugmentedExample, biaug_core::augment::AugmentError>);
        let results: Vec<(String, Vec<SideOutcome>)> = self.pool.install(|| {
            specs
                .par_iter()
                .map(|spec| {
                    let record_id = format!("{}/{}/{}", spec.source_id, spec.object_name, spec.category);
                    let mut outcomes = Vec::new();
                    let pair = source_by_id.get(spec.source_id.as_str());
                    let object =
                        object_by_key.get(&(spec.source_id.clone(), spec.object_name.clone()));
                    for side in [Side::Positive, Side::Negative] {
                        let example_id = biaug_core::types::derive_example_id(
                            &biaug_core::types::derive_pair_id(
                                &spec.source_id,
                                &spec.object_name,
                                spec.category,
                            ),
                            side,
                        );
                        if done.contains(&example_id) {
                            continue;
                        }
                        let outcome = match (pair, object) {
                            (Some(pair), Some(object)) => synthesize_example(
                                pair, object, spec, side, inpainter, generator, seed,
                            ),
                            _ => Err(biaug_core::augment::AugmentError::Precondition(format!(
                                "spec `{record_id}` references unknown source or object"
                            ))),
                        };
                        outcomes.push((side, outcome));
                    }
                    (record_id, outcomes)
                })
                .collect()
        });

        let mut log = StageLog::new("synthesize", &self.config.out_dir);
        for (record_id, outcomes) in results {
            for (side, outcome) in outcomes {
                match outcome {
                    Ok(mut example) => {
                        example.image_ref = relativize(&self.config.out_dir, &example.image_ref);
                        records.push(example);
                    }
                    // the surviving counterpart stays in as an orphan
                    Err(e) => log.skip(&format!("{record_id}/{side}"), e),
                }
            }
        }
        let output_count = write_manifest(&records, &self.paths.augmented())?;
        // budget is counted against sides (two per spec)
        log.finish(specs.len() * 2, output_count, self.config.skip_budget_fraction)
    }

    /// The switchable confidence filter over synthesized examples, keyed by
    /// the stored detector confidence of each example's object:
    /// `augmented.jsonl` to `augmented_filtered.jsonl`.
    pub fn filter(&self) -> Result<RunReport> {
        let examples: Vec<AugmentedExample> = read_manifest(&self.paths.augmented())?;
        let objects: Vec<DetectedObject> = read_manifest(&self.paths.objects())?;
        let enabled = self.config.filter.confidence_filter_enabled;
        let threshold = self.config.filter.confidence_threshold;
        let object_keys: BTreeSet<(String, String)> = objects
            .iter()
            .map(|o| (o.source_id.clone(), o.name.clone()))
            .collect();
        let confident: BTreeSet<(String, String)> = confidence_filter(&objects, threshold)
            .into_iter()
            .map(|o| (o.source_id, o.name))
            .collect();

        let mut log = StageLog::new("filter", &self.config.out_dir);
        let mut kept = Vec::with_capacity(examples.len());
        for example in &examples {
            if example.provenance == Provenance::Source {
                kept.push(example.clone());
                continue;
            }
            let key = (example.source_id.clone(), example.object_name.clone());
            if !object_keys.contains(&key) {
                log.skip(&example.example_id, "no detected object backs this example");
                continue;
            }
            if !enabled || confident.contains(&key) {
                kept.push(example.clone());
            }
            // examples under the threshold are filtered by design, not skipped
        }
        let output_count = write_manifest(&kept, &self.paths.augmented_filtered())?;
        log.finish(examples.len(), output_count, self.config.skip_budget_fraction)
    }

    /// Emit pair records for both the raw and the filtered example sets.
    pub fn pairs(&self) -> Result<RunReport> {
        let examples: Vec<AugmentedExample> = read_manifest(&self.paths.augmented())?;
        let pairs = build_pairs(&examples)?;
        let output_count = write_manifest(&pairs, &self.paths.pairs())?;

        let mut total = output_count;
        if self.paths.augmented_filtered().exists() {
            let filtered: Vec<AugmentedExample> = read_manifest(&self.paths.augmented_filtered())?;
            let filtered_pairs = build_pairs(&filtered)?;
            total += write_manifest(&filtered_pairs, &self.paths.pairs_filtered())?;
        }
        let log = StageLog::new("pairs", &self.config.out_dir);
        log.finish(examples.len(), total, self.config.skip_budget_fraction)
    }

    /// Combine filtered examples with (optionally) the source records into
    /// the training manifest. Source image references are absolutized so
    /// the manifest stays usable from any working directory.
    pub fn assemble(&self) -> Result<RunReport> {
        let filtered: Vec<AugmentedExample> = read_manifest(&self.paths.augmented_filtered())?;
        let sources = self.read_sources()?;
        let source_dir = self.source_dir()?;
        let absolutized: Vec<CaptionImagePair> = sources
            .iter()
            .map(|pair| {
                let resolved = resolve_ref(&source_dir, &pair.image_ref);
                let absolute = std::path::absolute(&resolved).unwrap_or(resolved);
                CaptionImagePair::new(
                    pair.id.clone(),
                    pair.caption.clone(),
                    absolute.to_string_lossy().to_string(),
                )
            })
            .collect();
        let dataset = assemble_dataset(&filtered, &absolutized, self.config.include_raw);
        let output_count = write_manifest(&dataset, &self.paths.train_manifest())?;
        let log = StageLog::new("assemble", &self.config.out_dir);
        log.finish(
            filtered.len() + sources.len(),
            output_count,
            self.config.skip_budget_fraction,
        )
    }

    /// Count the ledger from this run's manifests and write `stats.json`.
    pub fn stats(&self) -> Result<DatasetStats> {
        let sources = self.read_sources()?;
        let objects: Vec<DetectedObject> = read_manifest(&self.paths.objects())?;
        let augmented: Vec<AugmentedExample> = read_manifest(&self.paths.augmented())?;
        let augmented_filtered: Vec<AugmentedExample> =
            read_manifest(&self.paths.augmented_filtered())?;
        let pairs: Vec<HardNegativePair> = read_manifest(&self.paths.pairs())?;
        let pairs_filtered: Vec<HardNegativePair> = read_manifest(&self.paths.pairs_filtered())?;
        let stats = compute_stats(&StatsInputs {
            sources: &sources,
            objects: &objects,
            augmented: &augmented,
            augmented_filtered: &augmented_filtered,
            pairs: &pairs,
            pairs_filtered: &pairs_filtered,
        })?;
        self.write_stats(&stats)?;
        Ok(stats)
    }

    /// Validate a counts ledger file and emit it as `stats.json`.
    pub fn stats_from_ledger(&self, ledger_path: &Path) -> Result<DatasetStats> {
        let text = std::fs::read_to_string(ledger_path)
            .with_context(|| format!("missing input: {}", ledger_path.display()))?;
        let stats: DatasetStats = serde_json::from_str(&text)
            .with_context(|| format!("parsing ledger {}", ledger_path.display()))?;
        stats.validate()?;
        self.write_stats(&stats)?;
        Ok(stats)
    }

    fn write_stats(&self, stats: &DatasetStats) -> Result<()> {
        let json = serde_json::to_string(stats)?;
        std::fs::write(self.paths.stats(), format!("{json}\n"))?;
        let log = StageLog::new("stats", &self.config.out_dir);
        log.finish(1, 1, self.config.skip_budget_fraction)?;
        Ok(())
    }

    /// Dispatch on the source file: a `.json` ledger is validated and
    /// re-emitted, anything else counts this run's manifests.
    pub fn stats_auto(&self) -> Result<DatasetStats> {
        match &self.config.source {
            Some(path) if path.extension().is_some_and(|e| e == "json") => {
                self.stats_from_ledger(&path.clone())
            }
            _ => self.stats(),
        }
    }

    /// Fine-tune on the assembled manifest. Toy mode trains the toy encoder
    /// in-process; against a remote embedding backend only the loss trace
    /// is recorded (no parameters can move through the wire).
    pub fn train(&self) -> Result<RunReport> {
        if !self.paths.train_manifest().exists() {
            self.assemble()?;
        }
        let examples_raw: Vec<AugmentedExample> = read_manifest(&self.paths.train_manifest())?;
        let examples: Vec<AugmentedExample> = examples_raw
            .into_iter()
            .map(|mut e| {
                e.image_ref = resolve_ref(&self.config.out_dir, &e.image_ref)
                    .to_string_lossy()
                    .to_string();
                e
            })
            .collect();
        let pairs: Vec<HardNegativePair> = if self.paths.pairs_filtered().exists() {
            read_manifest(&self.paths.pairs_filtered())?
        } else {
            Vec::new()
        };

        let train_config = self.config.train_config();

        let log = StageLog::new("train", &self.config.out_dir);
        let trace = if train_config.toy_mode {
            let encoder = ToyEncoder::seeded(
                biaug_core::backends::toy_encoder::DEFAULT_DIM,
                self.config.seed,
            );
            let outcome = train(&examples, &pairs, encoder, &train_config)?;
            Checkpoint {
                config: train_config.clone(),
                seed: self.config.seed,
                encoder: outcome.encoder,
            }
            .save(&self.paths.checkpoint())?;
            outcome.trace
        } else {
            evaluate_loss_trace(&examples, &pairs, &*self.backends.embedder, &train_config)?
        };

        let mut csv = String::from("step,epoch,loss\n");
        for step in &trace {
            csv.push_str(&format!("{},{},{}\n", step.step, step.epoch, step.loss));
        }
        std::fs::write(self.paths.loss_trace(), csv)?;
        log.finish(examples.len(), trace.len(), self.config.skip_budget_fraction)
    }

    /// The embedder evaluations score with: a remote backend when
    /// configured, else the trained checkpoint, else a fresh toy encoder.
    fn eval_embedder(&self) -> Result<std::sync::Arc<dyn biaug_core::backends::Embedder>> {
        if self.config.backends.embed_url.is_some() {
            return Ok(self.backends.embedder.clone());
        }
        if self.paths.checkpoint().exists() {
            let checkpoint = Checkpoint::load(&self.paths.checkpoint())?;
            return Ok(std::sync::Arc::new(checkpoint.encoder));
        }
        Ok(std::sync::Arc::new(ToyEncoder::seeded(
            biaug_core::backends::toy_encoder::DEFAULT_DIM,
            self.config.seed,
        )))
    }

    /// Score a choice-task file and write `aro_results.json`.
    pub fn eval_aro(&self) -> Result<biaug_core::eval::ChoiceReport> {
        let task_path = self.config.source_path()?.to_path_buf();
        let base = task_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let tasks_raw: Vec<biaug_core::eval::ChoiceTask> = read_manifest(&task_path)?;
        let tasks: Vec<biaug_core::eval::ChoiceTask> = tasks_raw
            .into_iter()
            .map(|mut t| {
                t.image_ref = resolve_ref(&base, &t.image_ref).to_string_lossy().to_string();
                t
            })
            .collect();
        let embedder = self.eval_embedder()?;
        let report = biaug_core::eval::score_choice_tasks(&tasks, &*embedder)?;
        std::fs::write(
            self.paths.aro_results(),
            format!("{}\n", serde_json::to_string(&report)?),
        )?;
        let log = StageLog::new("eval_aro", &self.config.out_dir);
        log.finish(tasks.len(), 1, self.config.skip_budget_fraction)?;
        Ok(report)
    }

    /// Evaluate a retrieval split and write `retrieval_results.json`.
    pub fn eval_retrieval(&self) -> Result<biaug_core::eval::RetrievalReport> {
        let split_path = self.config.source_path()?.to_path_buf();
        let base = split_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let text = std::fs::read_to_string(&split_path)
            .with_context(|| format!("missing input: {}", split_path.display()))?;
        let mut split: biaug_core::eval::RetrievalSplit = serde_json::from_str(&text)?;
        for image in &mut split.images {
            *image = resolve_ref(&base, image).to_string_lossy().to_string();
        }
        let embedder = self.eval_embedder()?;
        let report = biaug_core::eval::evaluate_retrieval(&split, &*embedder, &self.config.eval.ks)?;
        std::fs::write(
            self.paths.retrieval_results(),
            format!("{}\n", serde_json::to_string(&report.to_json())?),
        )?;
        let log = StageLog::new("eval_retrieval", &self.config.out_dir);
        log.finish(split.captions.len(), 1, self.config.skip_budget_fraction)?;
        Ok(report)
    }

    /// Chain the augmentation stages end to end: extract, ground, decouple,
    /// synthesize, filter, pairs, assemble, stats.
    pub fn run_all(&self) -> Result<Vec<RunReport>> {
        let mut reports = Vec::new();
        reports.push(self.extract()?);
        reports.push(self.ground()?);
        reports.push(self.decouple()?);
        reports.push(self.synthesize()?);
        reports.push(self.filter()?);
        reports.push(self.pairs()?);
        reports.push(self.assemble()?);
        self.stats()?;
        Ok(reports)
    }
}

/// Pick up `mock.json` next to the source manifest when present.
fn sibling_mock_config(source: Option<&Path>) -> Result<MockConfig> {
    if let Some(source) = source {
        let sibling = source.parent().unwrap_or(Path::new(".")).join("mock.json");
        if sibling.exists() {
            let text = std::fs::read_to_string(&sibling)?;
            let mock: MockConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", sibling.display()))?;
            return Ok(mock);
        }
    }
    Ok(MockConfig::default())
}
