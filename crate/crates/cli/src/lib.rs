//! Stage-oriented command line for the bimodal augmentation pipeline.
//!
//! Each subcommand reads its input manifests, writes output manifests plus
//! a JSON run report into the output directory, and exits non-zero when a
//! stage fails or too many records had to be skipped.

pub mod config;
pub mod fixture;
pub mod paths;
pub mod report;
pub mod stages;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{CommonOpts, PipelineConfig};
use stages::Pipeline;

#[derive(Parser, Debug)]
#[command(
    name = "biaug",
    about = "Augment caption-image datasets with attribute hard negatives, train and evaluate on them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Propose candidate objects from each source caption.
    Extract(CommonOpts),
    /// Ground candidates in their images; apply the area-overlap rule.
    Ground(CommonOpts),
    /// Generate attribute descriptions and counter-descriptions per object.
    Decouple(CommonOpts),
    /// Rewrite captions and inpaint images for both sides of each spec.
    Synthesize(CommonOpts),
    /// Apply the confidence filter to the synthesized examples.
    Filter(CommonOpts),
    /// Emit hard-negative pair records for raw and filtered examples.
    Pairs(CommonOpts),
    /// Write the dataset statistics ledger (`stats.json`).
    Stats(CommonOpts),
    /// Contrastively fine-tune on the assembled training manifest.
    Train(CommonOpts),
    /// Score a choice-task file (macro accuracy over groups).
    EvalAro(CommonOpts),
    /// Evaluate cross-modal retrieval recall at the configured cutoffs.
    EvalRetrieval(CommonOpts),
    /// Chain every augmentation stage from source manifest to stats.
    RunAll(CommonOpts),
    /// Generate a small demo dataset plus evaluation fixtures.
    GenFixture(GenFixtureOpts),
}

#[derive(clap::Args, Debug)]
pub struct GenFixtureOpts {
    /// Directory for the generated fixture.
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Number of source records.
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Execute one parsed command. Returns after all artifacts are written.
pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Extract(opts) => {
            Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.extract()?;
        }
        Command::Ground(opts) => {
            Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.ground()?;
        }
        Command::Decouple(opts) => {
            Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.decouple()?;
        }
        Command::Synthesize(opts) => {
            Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.synthesize()?;
        }
        Command::Filter(opts) => {
            Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.filter()?;
        }
        Command::Pairs(opts) => {
            Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.pairs()?;
        }
        Command::Stats(opts) => {
            let stats =
                Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.stats_auto()?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Train(opts) => {
            Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.train()?;
        }
        Command::EvalAro(opts) => {
            let report =
                Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.eval_aro()?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::EvalRetrieval(opts) => {
            let report = Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?
                .eval_retrieval()?;
            println!("{}", serde_json::to_string(&report.to_json())?);
        }
        Command::RunAll(opts) => {
            let reports =
                Pipeline::new(PipelineConfig::resolve(opts)?, opts.resume)?.run_all()?;
            for report in reports {
                println!(
                    "{}: {} in, {} out, {} skipped ({} ms)",
                    report.stage,
                    report.input_count,
                    report.output_count,
                    report.skipped_count,
                    report.duration_ms
                );
            }
        }
        Command::GenFixture(opts) => {
            let source = fixture::generate_demo_dataset(&opts.out, opts.count, opts.seed)?;
            fixture::generate_eval_fixtures(&opts.out.join("eval"), opts.seed)?;
            println!("fixture ready: {}", source.display());
        }
    }
    Ok(())
}
