//! Phase two: decouple an object from its attributes. For each attribute
//! category the generator proposes a description plus a counter-description,
//! and the source caption is rewritten to carry a chosen description.

use std::str::FromStr;

use super::{AugmentError, PromptTemplate, TemplateKind};
use crate::backends::mock::{find_word, strip_article};
use crate::backends::{BackendError, TextGenRequest, TextGenerator};
use crate::types::{head_noun, AttributeCategory, AttributeSpec};

/// The attribute specs one object yielded: at most one per category.
/// Categories the generator declined are simply absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecoupleResult {
    pub specs: Vec<AttributeSpec>,
}

const REPAIR_SUFFIX: &str = "\n\nYour previous reply could not be parsed. Answer again with one line per category, formatted exactly as \"category: description | counter-description\", and nothing else.";

/// Ask the generator for per-category descriptions of `object_name` and
/// parse the line-oriented reply. A reply that fails the strict grammar is
/// re-prompted once with a repair instruction before giving up. An empty
/// reply counts as declining every category.
pub fn decouple_attributes(
    caption: &str,
    object_name: &str,
    template: &PromptTemplate,
    generator: &dyn TextGenerator,
    seed: u64,
) -> Result<DecoupleResult, AugmentError> {
    if template.kind != TemplateKind::AttributeDecoupling {
        return Err(AugmentError::Precondition(
            "decouple_attributes needs an attribute-decoupling template".into(),
        ));
    }
    let prompt = template.render(&[caption, object_name])?;
    let raw = match generator.generate_text(&TextGenRequest::new(prompt.clone(), seed)?) {
        Ok(text) => text,
        Err(BackendError::EmptyResponse) => return Ok(DecoupleResult::default()),
        Err(e) => return Err(e.into()),
    };

    match parse_spec_block(&raw, object_name) {
        Ok(specs) => Ok(DecoupleResult { specs }),
        Err(first_reason) => {
            // one-shot repair re-prompt
            let repair_prompt = format!("{prompt}{REPAIR_SUFFIX}");
            let retry = match generator.generate_text(&TextGenRequest::new(repair_prompt, seed)?) {
                Ok(text) => text,
                Err(BackendError::EmptyResponse) => return Ok(DecoupleResult::default()),
                Err(e) => return Err(e.into()),
            };
            match parse_spec_block(&retry, object_name) {
                Ok(specs) => Ok(DecoupleResult { specs }),
                Err(_) => Err(AugmentError::UnparseableResponse {
                    reason: first_reason,
                    raw,
                }),
            }
        }
    }
}

/// Strict line grammar: `category: description | counter-description`.
/// Unknown categories, duplicate categories, and invariant-violating specs
/// all invalidate the whole reply. A line reading `none` is an explicit
/// decline and is skipped.
fn parse_spec_block(raw: &str, object_name: &str) -> Result<Vec<AttributeSpec>, String> {
    let mut specs: Vec<AttributeSpec> = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("none") {
            continue;
        }
        let (cat_text, rest) = line
            .split_once(':')
            .ok_or_else(|| format!("line without `category:` prefix: {line:?}"))?;
        let category = AttributeCategory::from_str(cat_text.trim().to_lowercase().as_str())
            .map_err(|e| format!("{e} in line {line:?}"))?;
        let (positive, negative) = rest
            .split_once('|')
            .ok_or_else(|| format!("line without `|` separator: {line:?}"))?;
        if specs.iter().any(|s| s.category == category) {
            return Err(format!("duplicate category `{category}`"));
        }
        let spec = AttributeSpec {
            source_id: String::new(), // filled by the caller that owns the id
            object_name: object_name.to_string(),
            category,
            positive_desc: positive.trim().to_string(),
            negative_desc: negative.trim().to_string(),
        };
        spec.validate()?;
        specs.push(spec);
    }
    specs.sort_by_key(|s| s.category);
    Ok(specs)
}

const AUGMENT_INSTRUCTION: &str = "Rewrite the caption so that the given object is described by the given description, replacing any existing description of that object. Answer with the rewritten caption and nothing else.";

/// Rewrite `caption` so that `object_name` carries `description`. Under the
/// mock generator this is a deterministic phrase substitution of the
/// object's first mention; a caption that already contains the description
/// comes back unchanged, so repeated augmentation is stable.
pub fn augment_caption(
    caption: &str,
    object_name: &str,
    description: &str,
    generator: &dyn TextGenerator,
    seed: u64,
) -> Result<String, AugmentError> {
    let head = head_noun(object_name).to_lowercase();
    if !description.to_lowercase().contains(&head) {
        return Err(AugmentError::Precondition(format!(
            "description `{description}` does not reference object `{object_name}`"
        )));
    }
    let attribute_tokens = attribute_tokens(description, object_name);
    if attribute_tokens.is_empty() {
        return Err(AugmentError::Precondition(format!(
            "description `{description}` carries no attribute token"
        )));
    }

    let prompt = format!(
        "{AUGMENT_INSTRUCTION}\n\nCaption: {caption}\nObject: {object_name}\nDescription: {description}\nRewritten caption:"
    );
    let raw = generator.generate_text(&TextGenRequest::new(prompt, seed)?)?;
    let rewritten = raw.trim().to_string();

    for token in &attribute_tokens {
        if find_word(&rewritten, token).is_none() {
            return Err(AugmentError::UnparseableResponse {
                reason: format!("rewritten caption lost attribute word `{token}`"),
                raw,
            });
        }
    }
    let already_described = rewritten_contains_phrase(caption, description);
    if !already_described && rewritten == caption {
        return Err(AugmentError::UnparseableResponse {
            reason: "rewritten caption is identical to the input".into(),
            raw,
        });
    }
    Ok(rewritten)
}

fn rewritten_contains_phrase(caption: &str, description: &str) -> bool {
    let phrase = strip_article(description);
    caption.to_lowercase().contains(&phrase.to_lowercase())
}

/// Tokens of the description that are neither articles nor part of the
/// object name: the attribute words the rewrite must keep.
fn attribute_tokens(description: &str, object_name: &str) -> Vec<String> {
    let object_tokens: Vec<String> = object_name
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect();
    strip_article(description)
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .filter(|t| !object_tokens.iter().any(|o| o == t))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockConfig, MockTextGenerator};

    fn mock() -> MockTextGenerator {
        MockTextGenerator::new(MockConfig::default())
    }

    fn template() -> PromptTemplate {
        PromptTemplate::builtin(TemplateKind::AttributeDecoupling)
    }

    #[test]
    fn decoupling_emits_color_pair_for_boat() {
        let result =
            decouple_attributes("a boat on the lake", "boat", &template(), &mock(), 7).unwrap();
        let color = result
            .specs
            .iter()
            .find(|s| s.category == AttributeCategory::Color)
            .expect("color spec present");
        assert_eq!(color.positive_desc, "a blue boat");
        assert_eq!(color.negative_desc, "a red boat");
    }

    #[test]
    fn declining_all_categories_yields_empty_result() {
        let generator = MockTextGenerator::new(MockConfig {
            category_words: Default::default(),
            ..MockConfig::default()
        });
        let result =
            decouple_attributes("a boat on the lake", "boat", &template(), &generator, 7).unwrap();
        assert!(result.specs.is_empty());
    }

    struct FixedGenerator(&'static str);

    impl TextGenerator for FixedGenerator {
        fn generate_text(&self, _req: &TextGenRequest) -> Result<String, BackendError> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn identical_descriptions_are_unparseable() {
        let generator = FixedGenerator("color: a blue boat | a blue boat");
        let err =
            decouple_attributes("a boat", "boat", &template(), &generator, 7).unwrap_err();
        assert!(matches!(err, AugmentError::UnparseableResponse { .. }));
    }

    #[test]
    fn unknown_category_is_unparseable() {
        let generator = FixedGenerator("texture: a rough boat | a smooth boat");
        let err =
            decouple_attributes("a boat", "boat", &template(), &generator, 7).unwrap_err();
        assert!(matches!(err, AugmentError::UnparseableResponse { .. }));
    }

    /// A generator that fails the strict grammar once, then recovers.
    struct RepairableGenerator {
        calls: std::sync::Mutex<usize>,
    }

    impl TextGenerator for RepairableGenerator {
        fn generate_text(&self, req: &TextGenRequest) -> Result<String, BackendError> {
            let mut calls = self.calls.lock().unwrap();
            *calls += 1;
            if req.prompt.contains("could not be parsed") {
                Ok("color: a blue boat | a red boat".to_string())
            } else {
                Ok("sure! here are some ideas".to_string())
            }
        }
    }

    #[test]
    fn repair_reprompt_recovers_once() {
        let generator = RepairableGenerator {
            calls: std::sync::Mutex::new(0),
        };
        let result = decouple_attributes("a boat", "boat", &template(), &generator, 7).unwrap();
        assert_eq!(result.specs.len(), 1);
        assert_eq!(*generator.calls.lock().unwrap(), 2);
    }

    #[test]
    fn caption_rewrite_substitutes_object_phrase() {
        let rewritten = augment_caption(
            "salmon dish on the table",
            "salmon",
            "sliced salmon",
            &mock(),
            7,
        )
        .unwrap();
        assert_eq!(rewritten, "sliced salmon dish on the table");
    }

    #[test]
    fn caption_rewrite_is_idempotent_under_mock() {
        let once = augment_caption(
            "salmon dish on the table",
            "salmon",
            "sliced salmon",
            &mock(),
            7,
        )
        .unwrap();
        let twice = augment_caption(&once, "salmon", "sliced salmon", &mock(), 7).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn description_without_attribute_is_a_precondition_violation() {
        let err = augment_caption("a boat", "boat", "the boat", &mock(), 7).unwrap_err();
        assert!(matches!(err, AugmentError::Precondition(_)));
    }

    #[test]
    fn description_must_reference_object() {
        let err = augment_caption("a boat", "boat", "a blue kite", &mock(), 7).unwrap_err();
        assert!(matches!(err, AugmentError::Precondition(_)));
    }
}
