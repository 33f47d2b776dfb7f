//! Pipeline configuration: one declarative TOML file, overlaid by the
//! `BIAUG_*` environment variables for backend endpoints, overlaid by
//! command-line flags. Flags win over environment, environment over file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use biaug_core::backends::{Endpoints, MockConfig};
use biaug_core::filter::FilterConfig;
use biaug_core::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    /// The active command's primary input (source manifest, eval file, or
    /// stats ledger depending on the stage).
    pub source: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Fraction of input records allowed to hard-fail before a stage aborts.
    pub skip_budget_fraction: f64,
    pub include_raw: bool,
    pub templates: TemplatePaths,
    pub filter: FilterConfig,
    pub train: TrainSection,
    pub backends: Endpoints,
    /// Overrides for the deterministic mock backends. When absent, a
    /// `mock.json` next to the source manifest is picked up automatically.
    pub mock: Option<MockConfig>,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            source: None,
            out_dir: PathBuf::from("out"),
            skip_budget_fraction: 0.01,
            include_raw: true,
            templates: TemplatePaths::default(),
            filter: FilterConfig::default(),
            train: TrainSection::default(),
            backends: Endpoints::default(),
            mock: None,
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    pub object_extraction: Option<PathBuf>,
    pub attribute_decoupling: Option<PathBuf>,
}

/// Partial training settings overlaying a baseline: the toy-encoder
/// defaults normally, or the real-encoder defaults when `toy_mode = false`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub temperature: Option<f64>,
    pub use_hard_negatives: Option<bool>,
    pub toy_mode: Option<bool>,
    pub max_steps: Option<usize>,
}

impl TrainSection {
    pub fn build(&self, seed: u64) -> TrainConfig {
        let toy_mode = self.toy_mode.unwrap_or(true);
        let mut config = if toy_mode {
            TrainConfig::toy(seed)
        } else {
            TrainConfig {
                toy_mode: false,
                seed,
                ..TrainConfig::default()
            }
        };
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.temperature {
            config.temperature = v;
        }
        if let Some(v) = self.use_hard_negatives {
            config.use_hard_negatives = v;
        }
        if let Some(v) = self.max_steps {
            config.max_steps = Some(v);
        }
        config
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10] }
    }
}

/// Command-line overrides, shared by every subcommand. Flag names are part
/// of the external interface.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonOpts {
    /// Configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Primary input of the command (source manifest, eval file, ledger).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Output directory for manifests, images, reports and results.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-record stages.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip records whose outputs already exist in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Keep counterpart examples out of each other's training batches.
    #[arg(long)]
    pub no_hard_negatives: bool,
    /// Disable the detector-confidence filter stage.
    #[arg(long)]
    pub no_confidence_filter: bool,
    /// Leave source records out of the assembled training manifest.
    #[arg(long)]
    pub no_raw: bool,
    #[arg(long)]
    pub area_threshold: Option<f64>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Comma-separated recall cutoffs, e.g. `1,5,10`.
    #[arg(long)]
    pub ks: Option<String>,
}

impl PipelineConfig {
    /// Load the file (if any), then apply environment and flag overrides.
    pub fn resolve(opts: &CommonOpts) -> Result<Self> {
        let mut config = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        config.backends = config.backends.with_env_overrides();

        if let Some(source) = &opts.source {
            config.source = Some(source.clone());
        }
        if let Some(out) = &opts.out {
            config.out_dir = out.clone();
        }
        if let Some(workers) = opts.workers {
            config.workers = workers;
        }
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        if opts.no_hard_negatives {
            config.train.use_hard_negatives = Some(false);
        }
        if opts.no_confidence_filter {
            config.filter.confidence_filter_enabled = false;
        }
        if opts.no_raw {
            config.include_raw = false;
        }
        if let Some(v) = opts.area_threshold {
            config.filter.area_overlap_threshold = v;
        }
        if let Some(v) = opts.confidence_threshold {
            config.filter.confidence_threshold = v;
        }
        if let Some(v) = opts.epochs {
            config.train.epochs = Some(v);
        }
        if let Some(v) = opts.batch_size {
            config.train.batch_size = Some(v);
        }
        if let Some(v) = opts.lr {
            config.train.learning_rate = Some(v);
        }
        if let Some(v) = opts.temperature {
            config.train.temperature = Some(v);
        }
        if let Some(ks) = &opts.ks {
            config.eval.ks = parse_ks(ks)?;
        }

        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers < 1 {
            bail!("config invalid: workers must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.skip_budget_fraction) {
            bail!(
                "config invalid: skip_budget_fraction {} outside [0, 1]",
                self.skip_budget_fraction
            );
        }
        self.filter
            .validate()
            .map_err(|e| anyhow::anyhow!("config invalid: {e}"))?;
        self.train_config()
            .validate()
            .map_err(|e| anyhow::anyhow!("config invalid: {e}"))?;
        if self.eval.ks.is_empty() || self.eval.ks.iter().any(|k| *k == 0) {
            bail!("config invalid: ks must be non-empty positive integers");
        }
        Ok(())
    }

    /// The configured source manifest, required by most stages.
    pub fn source_path(&self) -> Result<&Path> {
        self.source
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("missing input: no --source given"))
    }

    /// The effective training configuration, seeded by the run seed.
    pub fn train_config(&self) -> TrainConfig {
        self.train.build(self.seed)
    }
}

fn parse_ks(text: &str) -> Result<Vec<usize>> {
    let mut ks = Vec::new();
    for part in text.split(',') {
        let k: usize = part
            .trim()
            .parse()
            .with_context(|| format!("bad recall cutoff `{part}`"))?;
        if k == 0 {
            bail!("recall cutoffs must be positive");
        }
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    ks.sort_unstable();
    Ok(ks)
}
