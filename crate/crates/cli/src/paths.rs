//! Canonical file layout of an output directory. Every stage reads and
//! writes these fixed names, which is what makes runs resumable and
//! chainable without extra wiring.

use std::path::{Path, PathBuf};

pub struct OutPaths {
    pub out_dir: PathBuf,
}

impl OutPaths {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn candidates(&self) -> PathBuf {
        self.out_dir.join("candidates.jsonl")
    }
    pub fn objects(&self) -> PathBuf {
        self.out_dir.join("objects.jsonl")
    }
    pub fn attributes(&self) -> PathBuf {
        self.out_dir.join("attributes.jsonl")
    }
    pub fn augmented(&self) -> PathBuf {
        self.out_dir.join("augmented.jsonl")
    }
    pub fn augmented_filtered(&self) -> PathBuf {
        self.out_dir.join("augmented_filtered.jsonl")
    }
    pub fn pairs(&self) -> PathBuf {
        self.out_dir.join("pairs.jsonl")
    }
    pub fn pairs_filtered(&self) -> PathBuf {
        self.out_dir.join("pairs_filtered.jsonl")
    }
    pub fn train_manifest(&self) -> PathBuf {
        self.out_dir.join("train_manifest.jsonl")
    }
    pub fn stats(&self) -> PathBuf {
        self.out_dir.join("stats.json")
    }
    pub fn images_dir(&self) -> PathBuf {
        self.out_dir.join("images")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.out_dir.join("checkpoint.json")
    }
    pub fn loss_trace(&self) -> PathBuf {
        self.out_dir.join("loss_trace.csv")
    }
    pub fn aro_results(&self) -> PathBuf {
        self.out_dir.join("aro_results.json")
    }
    pub fn retrieval_results(&self) -> PathBuf {
        self.out_dir.join("retrieval_results.json")
    }
}

/// Resolve a manifest-relative image reference against the manifest's
/// directory. Absolute references pass through.
pub fn resolve_ref(base_dir: &Path, image_ref: &str) -> PathBuf {
    let path = Path::new(image_ref);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

/// Re-express a produced image path relative to the output directory when
/// possible, keeping manifests location-independent.
pub fn relativize(out_dir: &Path, path: &str) -> String {
    Path::new(path)
        .strip_prefix(out_dir)
        .map(|p| p.to_string_lossy().to_string())
        .unwrap_or_else(|_| path.to_string())
}
