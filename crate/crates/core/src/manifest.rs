//! Line-delimited manifest files: one JSON record per line, UTF-8.
//!
//! Writers sort records by key so a manifest's bytes depend only on its
//! contents, never on production order. Readers validate invariants and
//! reject duplicate keys, so a manifest that loads is safe to hand to any
//! stage.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    AttributeSpec, AugmentedExample, CaptionImagePair, DetectedObject, HardNegativePair,
};

/// Separator for composite keys. Never appears in human-entered ids.
const KEY_SEP: char = '\u{1f}';

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}` violates invariant: {reason}")]
    InvariantViolation { id: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A record type that can live in a manifest file. `key` must be unique
/// within one manifest and doubles as the sort key on write.
pub trait ManifestRecord: Serialize + DeserializeOwned {
    fn key(&self) -> String;
    fn validate(&self) -> Result<(), String>;
}

impl ManifestRecord for CaptionImagePair {
    fn key(&self) -> String {
        self.id.clone()
    }
    fn validate(&self) -> Result<(), String> {
        CaptionImagePair::validate(self)
    }
}

impl ManifestRecord for DetectedObject {
    fn key(&self) -> String {
        format!("{}{KEY_SEP}{}", self.source_id, self.name)
    }
    fn validate(&self) -> Result<(), String> {
        DetectedObject::validate(self)
    }
}

impl ManifestRecord for AttributeSpec {
    fn key(&self) -> String {
        format!(
            "{}{KEY_SEP}{}{KEY_SEP}{}",
            self.source_id, self.object_name, self.category
        )
    }
    fn validate(&self) -> Result<(), String> {
        AttributeSpec::validate(self)
    }
}

impl ManifestRecord for AugmentedExample {
    fn key(&self) -> String {
        self.example_id.clone()
    }
    fn validate(&self) -> Result<(), String> {
        AugmentedExample::validate(self)
    }
}

impl ManifestRecord for HardNegativePair {
    fn key(&self) -> String {
        self.pair_id.clone()
    }
    fn validate(&self) -> Result<(), String> {
        if self.positive_example_id.is_empty() || self.negative_example_id.is_empty() {
            return Err("pair must reference two example ids".into());
        }
        Ok(())
    }
}

/// Working record between object extraction and grounding: the candidate
/// noun phrases proposed for one source example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub source_id: String,
    pub names: Vec<String>,
}

impl ManifestRecord for CandidateSet {
    fn key(&self) -> String {
        self.source_id.clone()
    }
    fn validate(&self) -> Result<(), String> {
        if self.source_id.is_empty() {
            return Err("source_id must be non-empty".into());
        }
        if self.names.iter().any(|n| n.trim().is_empty()) {
            return Err("candidate names must be non-empty".into());
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ManifestError {
    ManifestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read every record from a manifest, in file order. Empty lines are
/// skipped; anything else must parse and satisfy its type invariants.
pub fn read_manifest<T: ManifestRecord>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| ManifestError::MalformedRecord {
            path: path.display().to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        record
            .validate()
            .map_err(|reason| ManifestError::MalformedRecord {
                path: path.display().to_string(),
                line: idx + 1,
                reason,
            })?;
        let key = record.key();
        if !seen.insert(key.clone()) {
            return Err(ManifestError::DuplicateId(key));
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records to `path`, sorted by key, one JSON object per line.
/// The write goes through a sibling temp file and a rename so readers never
/// observe a half-written manifest. Returns the number of records written.
pub fn write_manifest<T: ManifestRecord>(records: &[T], path: &Path) -> Result<usize, ManifestError> {
    let mut keyed: Vec<(String, &T)> = Vec::with_capacity(records.len());
    for record in records {
        record
            .validate()
            .map_err(|reason| ManifestError::InvariantViolation {
                id: record.key(),
                reason,
            })?;
        keyed.push((record.key(), record));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in keyed.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(ManifestError::DuplicateId(pair[0].0.clone()));
        }
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        let mut writer = BufWriter::new(file);
        for (_, record) in &keyed {
            let line = serde_json::to_string(record).map_err(|e| ManifestError::MalformedRecord {
                path: path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })?;
            writer.write_all(line.as_bytes()).map_err(|e| io_err(&tmp, e))?;
            writer.write_all(b"\n").map_err(|e| io_err(&tmp, e))?;
        }
        writer.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(keyed.len())
}
