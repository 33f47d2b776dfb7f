//! Deterministic mock backends.
//!
//! Each mock is a pure function of its request plus the fixed [`MockConfig`],
//! so two pipeline runs with the same configuration produce byte-identical
//! manifests. The text mock understands the three prompt shapes the augment
//! stage emits and answers them from configured word lists:
//!
//! * object extraction: returns the configured lexicon nouns that occur in
//!   the caption (in caption order) plus any scene-implied nouns whose
//!   trigger word occurs, covering objects the caption never names;
//! * attribute decoupling: one `category: positive | counter` line per
//!   category that has at least two configured words, built as
//!   "a <word> <object>" with the first word and second word;
//! * caption rewriting: a phrase substitution of the object's first mention,
//!   described by [`substitute_description`].

use std::collections::BTreeMap;
use std::path::PathBuf;

use image::Rgb;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, Detection, DetectionRequest, InpaintRequest, Inpainter, ObjectDetector,
    TextGenRequest, TextGenerator,
};
use crate::raster;
use crate::types::{AttributeCategory, BoundingBox};

/// A noun that the scene implies whenever a trigger word appears in the
/// caption, even though the caption never names it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneImplied {
    pub trigger: String,
    pub implied: String,
}

/// Shared configuration for the mock generator and detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    /// Nouns the mock generator can recognize in captions.
    pub lexicon: Vec<String>,
    /// Trigger-conditioned nouns exercising the not-explicitly-named path.
    #[serde(default)]
    pub scene_implied: Vec<SceneImplied>,
    /// Word lists per attribute category; a category with fewer than two
    /// words is declined during decoupling.
    #[serde(default)]
    pub category_words: BTreeMap<AttributeCategory, Vec<String>>,
    /// Objects the mock detector can ground, with their fixed boxes.
    #[serde(default)]
    pub known_objects: BTreeMap<String, BoundingBox>,
}

impl Default for MockConfig {
    fn default() -> Self {
        let mut category_words = BTreeMap::new();
        category_words.insert(
            AttributeCategory::Color,
            vec!["blue".to_string(), "red".to_string()],
        );
        category_words.insert(
            AttributeCategory::Shape,
            vec!["round".to_string(), "square".to_string()],
        );
        category_words.insert(
            AttributeCategory::Material,
            vec!["wooden".to_string(), "metal".to_string()],
        );
        category_words.insert(
            AttributeCategory::Other,
            vec!["small".to_string(), "large".to_string()],
        );
        Self {
            lexicon: vec![
                "dog".to_string(),
                "tennis ball".to_string(),
                "salmon".to_string(),
                "table".to_string(),
                "boat".to_string(),
            ],
            scene_implied: vec![SceneImplied {
                trigger: "dish".to_string(),
                implied: "plate".to_string(),
            }],
            category_words,
            known_objects: BTreeMap::new(),
        }
    }
}

/// Case-insensitive word-boundary search. Returns the byte span of the
/// first match whose neighbors are not alphanumeric.
pub fn find_word(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = start == 0
            || !hay[..start]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric());
        let right_ok = end == hay.len()
            || !hay[end..].chars().next().is_some_and(|c| c.is_alphanumeric());
        if left_ok && right_ok {
            return Some((start, end));
        }
        from = start + 1;
    }
    None
}

/// Drop a leading article from a description: "a blue boat" -> "blue boat".
pub fn strip_article(description: &str) -> &str {
    let trimmed = description.trim();
    for article in ["a ", "an ", "the ", "A ", "An ", "The "] {
        if let Some(rest) = trimmed.strip_prefix(article) {
            return rest.trim_start();
        }
    }
    trimmed
}

/// The mock caption-rewrite rule: replace the object's first mention with
/// the description phrase. Idempotent: a caption that already contains the
/// phrase is returned unchanged. When the object never appears in the
/// caption (a scene-implied object), the description is appended instead.
pub fn substitute_description(caption: &str, object_name: &str, description: &str) -> String {
    let phrase = strip_article(description);
    if find_word(caption, phrase).is_some()
        || caption.to_lowercase().contains(&phrase.to_lowercase())
    {
        return caption.to_string();
    }
    match find_word(caption, object_name) {
        Some((start, end)) => format!("{}{}{}", &caption[..start], phrase, &caption[end..]),
        None => format!("{caption}, with {}", description.trim()),
    }
}

fn text_after_marker<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let pos = prompt.rfind(marker)?;
    let rest = &prompt[pos + marker.len()..];
    let line = rest.lines().next().unwrap_or("").trim();
    Some(line)
}

/// Deterministic text generator driven by [`MockConfig`] word lists.
pub struct MockTextGenerator {
    config: MockConfig,
}

impl MockTextGenerator {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }

    fn extraction_reply(&self, caption: &str) -> String {
        let mut found: Vec<(usize, &str)> = Vec::new();
        for noun in &self.config.lexicon {
            if let Some((start, _)) = find_word(caption, noun) {
                found.push((start, noun.as_str()));
            }
        }
        found.sort_by_key(|(start, _)| *start);
        let mut names: Vec<&str> = found.into_iter().map(|(_, n)| n).collect();
        for rule in &self.config.scene_implied {
            if find_word(caption, &rule.trigger).is_some()
                && !names
                    .iter()
                    .any(|n| n.eq_ignore_ascii_case(&rule.implied))
            {
                names.push(rule.implied.as_str());
            }
        }
        names.join(", ")
    }

    fn decoupling_reply(&self, object: &str) -> String {
        let mut lines = Vec::new();
        for category in AttributeCategory::ALL {
            let words = match self.config.category_words.get(&category) {
                Some(words) if words.len() >= 2 => words,
                _ => continue, // declined category
            };
            lines.push(format!(
                "{category}: a {} {object} | a {} {object}",
                words[0], words[1]
            ));
        }
        lines.join("\n")
    }
}

impl TextGenerator for MockTextGenerator {
    fn generate_text(&self, req: &TextGenRequest) -> Result<String, BackendError> {
        let prompt = &req.prompt;
        let reply = if prompt.contains("Rewritten caption:") {
            let caption = text_after_marker(prompt, "Caption:").unwrap_or("");
            let object = text_after_marker(prompt, "Object:").unwrap_or("");
            let description = text_after_marker(prompt, "Description:").unwrap_or("");
            substitute_description(caption, object, description)
        } else if prompt.contains("Object:") {
            let object = text_after_marker(prompt, "Object:").unwrap_or("");
            self.decoupling_reply(object)
        } else {
            let caption = text_after_marker(prompt, "Caption:").unwrap_or(prompt);
            self.extraction_reply(caption)
        };
        if reply.trim().is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        Ok(reply)
    }
}

/// Deterministic detector: grounds a candidate when it is a known object
/// whose configured box fits inside the image, with confidence
/// `0.5 + 0.5 * (box area / image area)`.
pub struct MockDetector {
    config: MockConfig,
}

impl MockDetector {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }
}

impl ObjectDetector for MockDetector {
    fn detect(&self, req: &DetectionRequest) -> Result<Vec<Detection>, BackendError> {
        let (width, height) = raster::dimensions(std::path::Path::new(&req.image_ref))
            .map_err(BackendError::ImageUnreadable)?;
        let image_area = f64::from(width) * f64::from(height);
        let mut detections = Vec::new();
        for name in &req.candidate_names {
            let Some(bbox) = self.config.known_objects.get(name) else {
                continue;
            };
            if !bbox.within(width, height) {
                continue;
            }
            let coverage = bbox.area() as f64 / image_area;
            detections.push(Detection {
                name: name.clone(),
                bbox: *bbox,
                confidence: 0.5 + 0.5 * coverage,
            });
        }
        Ok(detections)
    }
}

/// 24-bit color derived from a prompt; the fill color of the mock inpainter.
pub fn prompt_color(prompt: &str) -> Rgb<u8> {
    let digest = Sha256::digest(prompt.as_bytes());
    Rgb([digest[0], digest[1], digest[2]])
}

/// Deterministic inpainter: fills the mask with [`prompt_color`] and writes
/// the result under `images_dir` with a name derived from the request, so
/// re-running a pipeline reproduces the same files.
pub struct MockInpainter {
    images_dir: PathBuf,
}

impl MockInpainter {
    pub fn new(images_dir: PathBuf) -> Self {
        Self { images_dir }
    }
}

/// Output file name for an inpainting request: input stem plus a hash of
/// (mask, prompt). Shared by the mock and the HTTP client so backends can
/// be swapped without renaming artifacts.
pub fn inpaint_output_name(req: &InpaintRequest) -> String {
    let stem = std::path::Path::new(&req.image_ref)
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "image".to_string());
    let mut hasher = Sha256::new();
    hasher.update(req.image_ref.as_bytes());
    hasher.update([0x1f]);
    hasher.update(format!("{:?}", <[u32; 4]>::from(req.mask)).as_bytes());
    hasher.update([0x1f]);
    hasher.update(req.prompt.as_bytes());
    let digest = hasher.finalize();
    format!("{stem}-{}.png", hex::encode(&digest[..6]))
}

impl Inpainter for MockInpainter {
    fn inpaint(&self, req: &InpaintRequest) -> Result<String, BackendError> {
        let mut img = raster::load_rgb(std::path::Path::new(&req.image_ref))
            .map_err(BackendError::ImageUnreadable)?;
        let (width, height) = img.dimensions();
        if !req.mask.within(width, height) {
            return Err(BackendError::MaskOutOfBounds {
                mask: req.mask.into(),
                width,
                height,
            });
        }
        raster::fill_rect(&mut img, &req.mask, prompt_color(&req.prompt));
        let out = self.images_dir.join(inpaint_output_name(req));
        raster::save_png(&img, &out).map_err(BackendError::ImageUnreadable)?;
        Ok(out.to_string_lossy().to_string())
    }
}
