//! The three augmentation phases: propose objects from a caption, ground
//! them in the image, decouple each object from its attributes with a
//! counter-description, then rewrite captions and inpaint images for both
//! sides of every hard negative pair.

mod decouple;
mod extract;
mod synthesize;

pub use decouple::{augment_caption, decouple_attributes, DecoupleResult};
pub use extract::{extract_objects, ground_objects};
pub use synthesize::synthesize_example;

use thiserror::Error;

use crate::backends::BackendError;

#[derive(Debug, Error)]
pub enum AugmentError {
    /// The generator answered but the reply did not fit the expected
    /// grammar, even after one repair re-prompt. The raw reply is kept so
    /// callers can ledger it.
    #[error("unparseable generator response: {reason}; raw: {raw:?}")]
    UnparseableResponse { reason: String, raw: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Which of the two file-loadable prompts a template is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    /// One placeholder: the caption.
    ObjectExtraction,
    /// Two placeholders: the caption, then the object.
    AttributeDecoupling,
}

impl TemplateKind {
    pub fn arity(&self) -> usize {
        match self {
            TemplateKind::ObjectExtraction => 1,
            TemplateKind::AttributeDecoupling => 2,
        }
    }
}

/// A prompt template with `{}` placeholders, loadable from a plain-text
/// file. An optional few-shot block is spliced in ahead of the final query.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub body: String,
    pub few_shot_examples: Option<String>,
}

pub const BUILTIN_OBJECT_EXTRACTION: &str =
    include_str!("../../templates/object_extraction.txt");
pub const BUILTIN_ATTRIBUTE_DECOUPLING: &str =
    include_str!("../../templates/attribute_decoupling.txt");

impl PromptTemplate {
    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Result<Self, AugmentError> {
        let body = body.into();
        let found = body.matches("{}").count();
        if found != kind.arity() {
            return Err(AugmentError::Template(format!(
                "template declares {} placeholder(s) but needs {}",
                found,
                kind.arity()
            )));
        }
        Ok(Self {
            kind,
            body,
            few_shot_examples: None,
        })
    }

    /// The template shipped with the crate for `kind`.
    pub fn builtin(kind: TemplateKind) -> Self {
        let body = match kind {
            TemplateKind::ObjectExtraction => BUILTIN_OBJECT_EXTRACTION,
            TemplateKind::AttributeDecoupling => BUILTIN_ATTRIBUTE_DECOUPLING,
        };
        Self::new(kind, body).expect("builtin templates carry the right placeholder count")
    }

    /// Read a template from a plain-text file. When `<path>.examples.txt`
    /// exists next to it, its contents become the few-shot block.
    pub fn load(path: &std::path::Path, kind: TemplateKind) -> Result<Self, AugmentError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| AugmentError::Template(format!("{}: {e}", path.display())))?;
        let mut template = Self::new(kind, body)?;
        let examples_path = path.with_extension("examples.txt");
        if examples_path.exists() {
            let block = std::fs::read_to_string(&examples_path)
                .map_err(|e| AugmentError::Template(format!("{}: {e}", examples_path.display())))?;
            template.few_shot_examples = Some(block.trim().to_string());
        }
        Ok(template)
    }

    pub fn with_few_shot(mut self, block: impl Into<String>) -> Self {
        self.few_shot_examples = Some(block.into());
        self
    }

    /// Substitute the placeholders in declaration order and splice the
    /// few-shot block (if any) in front of the final `Caption:` query line.
    pub fn render(&self, args: &[&str]) -> Result<String, AugmentError> {
        if args.len() != self.kind.arity() {
            return Err(AugmentError::Template(format!(
                "expected {} argument(s), got {}",
                self.kind.arity(),
                args.len()
            )));
        }
        let body = match &self.few_shot_examples {
            Some(block) => match self.body.rfind("\nCaption:") {
                Some(pos) => format!(
                    "{}\n{block}\n{}",
                    &self.body[..pos].trim_end(),
                    self.body[pos..].trim_start()
                ),
                None => format!("{block}\n\n{}", self.body),
            },
            None => self.body.clone(),
        };
        let mut out = String::with_capacity(body.len() + 64);
        let mut rest = body.as_str();
        for arg in args {
            match rest.find("{}") {
                Some(pos) => {
                    out.push_str(&rest[..pos]);
                    out.push_str(arg);
                    rest = &rest[pos + 2..];
                }
                None => {
                    return Err(AugmentError::Template(
                        "fewer placeholders than arguments".into(),
                    ))
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}
