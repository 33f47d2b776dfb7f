//! Per-stage run reports and the error ledger.
//!
//! Every stage accounts for each input record exactly once: it either
//! completed or was skipped with a ledger entry, so
//! `completed_count + skipped_count == input_count` always holds.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: String,
    pub input_count: usize,
    pub completed_count: usize,
    pub skipped_count: usize,
    /// Records written to the stage's output manifest (may exceed
    /// `input_count` for one-to-many stages).
    pub output_count: usize,
    pub error_count: usize,
    pub duration_ms: u64,
}

impl RunReport {
    pub fn reconciles(&self) -> bool {
        self.completed_count + self.skipped_count == self.input_count
    }
}

/// One skipped record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub record_id: String,
    pub stage: String,
    pub reason: String,
}

/// Collects skip events for one stage and enforces the skip budget.
pub struct StageLog {
    stage: String,
    out_dir: PathBuf,
    entries: Vec<LedgerEntry>,
    started: std::time::Instant,
}

impl StageLog {
    pub fn new(stage: &str, out_dir: &Path) -> Self {
        Self {
            stage: stage.to_string(),
            out_dir: out_dir.to_path_buf(),
            entries: Vec::new(),
            started: std::time::Instant::now(),
        }
    }

    pub fn skip(&mut self, record_id: &str, reason: impl std::fmt::Display) {
        self.entries.push(LedgerEntry {
            record_id: record_id.to_string(),
            stage: self.stage.clone(),
            reason: reason.to_string(),
        });
    }

    pub fn skipped(&self) -> usize {
        self.entries.len()
    }

    /// Write the ledger and report, failing when skips exceed the budget.
    pub fn finish(
        mut self,
        input_count: usize,
        output_count: usize,
        budget_fraction: f64,
    ) -> Result<RunReport> {
        self.entries.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        if !self.entries.is_empty() {
            let dir = self.out_dir.join("errors");
            std::fs::create_dir_all(&dir)?;
            let mut lines = String::new();
            for entry in &self.entries {
                lines.push_str(&serde_json::to_string(entry)?);
                lines.push('\n');
            }
            std::fs::write(dir.join(format!("{}.jsonl", self.stage)), lines)?;
        }

        let report = RunReport {
            stage: self.stage.clone(),
            input_count,
            completed_count: input_count - self.entries.len(),
            skipped_count: self.entries.len(),
            output_count,
            error_count: self.entries.len(),
            duration_ms: self.started.elapsed().as_millis() as u64,
        };
        let reports_dir = self.out_dir.join("reports");
        std::fs::create_dir_all(&reports_dir)
            .with_context(|| format!("creating {}", reports_dir.display()))?;
        std::fs::write(
            reports_dir.join(format!("{}.json", self.stage)),
            serde_json::to_string_pretty(&report)?,
        )?;

        let budget = (budget_fraction * input_count as f64).ceil() as usize;
        if report.skipped_count > budget {
            bail!(
                "stage {} skipped {} of {} records, over the budget of {budget}",
                self.stage,
                report.skipped_count,
                input_count
            );
        }
        Ok(report)
    }
}
