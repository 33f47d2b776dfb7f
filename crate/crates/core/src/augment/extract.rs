//! Phase one: propose objects from the caption, then keep the ones the
//! detector can actually find in the image.

use std::path::Path;

use super::{AugmentError, PromptTemplate, TemplateKind};
use crate::backends::{DetectionRequest, ObjectDetector, TextGenRequest, TextGenerator};
use crate::raster;
use crate::types::{CaptionImagePair, DetectedObject};

/// Ask the generator which objects the scene contains and parse its reply
/// into a deduplicated, order-preserving list of noun phrases. The list may
/// include objects the caption itself never names.
pub fn extract_objects(
    caption: &str,
    template: &PromptTemplate,
    generator: &dyn TextGenerator,
    seed: u64,
) -> Result<Vec<String>, AugmentError> {
    if template.kind != TemplateKind::ObjectExtraction {
        return Err(AugmentError::Precondition(
            "extract_objects needs an object-extraction template".into(),
        ));
    }
    let prompt = template.render(&[caption])?;
    let req = TextGenRequest::new(prompt, seed)?;
    let raw = match generator.generate_text(&req) {
        Ok(text) => text,
        Err(crate::backends::BackendError::EmptyResponse) => String::new(),
        Err(e) => return Err(e.into()),
    };
    let names = parse_noun_list(&raw);
    if names.is_empty() {
        return Err(AugmentError::UnparseableResponse {
            reason: "no noun phrases in reply".into(),
            raw,
        });
    }
    Ok(names)
}

/// Split a comma/newline separated reply into trimmed noun phrases,
/// dropping duplicates while keeping first-seen order.
fn parse_noun_list(raw: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for part in raw.split(|c| c == ',' || c == '\n') {
        let name = part.trim().trim_matches('.').trim().to_string();
        if name.is_empty() {
            continue;
        }
        if !names.iter().any(|n| n.eq_ignore_ascii_case(&name)) {
            names.push(name);
        }
    }
    names
}

/// Ground candidate names in the source image. Candidates the detector
/// cannot find are dropped; when the detector reports a name more than once
/// only the highest-confidence box is kept. Boxes are clipped to the image.
pub fn ground_objects(
    pair: &CaptionImagePair,
    candidates: &[String],
    detector: &dyn ObjectDetector,
) -> Result<Vec<DetectedObject>, AugmentError> {
    let req = DetectionRequest::new(pair.image_ref.clone(), candidates.to_vec())?;
    let detections = detector.detect(&req)?;
    let (width, height) = raster::dimensions(Path::new(&pair.image_ref))
        .map_err(crate::backends::BackendError::ImageUnreadable)?;

    let mut objects: Vec<DetectedObject> = Vec::new();
    for detection in detections {
        if !candidates.iter().any(|c| c == &detection.name) {
            continue;
        }
        let Some(bbox) = detection.bbox.clipped(width, height) else {
            continue;
        };
        let object = DetectedObject {
            source_id: pair.id.clone(),
            name: detection.name,
            bbox,
            confidence: detection.confidence.clamp(0.0, 1.0),
        };
        match objects.iter_mut().find(|o| o.name == object.name) {
            Some(existing) => {
                if object.confidence > existing.confidence {
                    *existing = object;
                }
            }
            None => objects.push(object),
        }
    }
    Ok(objects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockConfig, MockDetector, MockTextGenerator, SceneImplied};
    use crate::backends::{BackendError, Detection};
    use crate::types::BoundingBox;
    use std::collections::BTreeMap;

    struct FixedGenerator(String);

    impl TextGenerator for FixedGenerator {
        fn generate_text(&self, _req: &TextGenRequest) -> Result<String, BackendError> {
            Ok(self.0.clone())
        }
    }

    fn template() -> PromptTemplate {
        PromptTemplate::builtin(TemplateKind::ObjectExtraction)
    }

    #[test]
    fn extraction_includes_scene_implied_objects() {
        let generator = MockTextGenerator::new(MockConfig {
            lexicon: vec!["salmon".into(), "table".into(), "plate".into()],
            scene_implied: vec![SceneImplied {
                trigger: "dish".into(),
                implied: "plate".into(),
            }],
            ..MockConfig::default()
        });
        let names =
            extract_objects("salmon dish on the table", &template(), &generator, 7).unwrap();
        assert_eq!(names, vec!["salmon", "table", "plate"]);
    }

    #[test]
    fn extraction_finds_caption_objects() {
        let generator = MockTextGenerator::new(MockConfig::default());
        let names = extract_objects(
            "A dog runs with a tennis ball in its mouth",
            &template(),
            &generator,
            7,
        )
        .unwrap();
        assert!(names.iter().any(|n| n == "dog"), "{names:?}");
    }

    #[test]
    fn empty_reply_is_unparseable() {
        let generator = FixedGenerator(String::new());
        let err = extract_objects("a caption", &template(), &generator, 7).unwrap_err();
        assert!(matches!(err, AugmentError::UnparseableResponse { .. }));
    }

    #[test]
    fn reply_parsing_dedupes_preserving_order() {
        let generator = FixedGenerator("dog, ball, Dog,\nplate.".into());
        let names = extract_objects("x", &template(), &generator, 7).unwrap();
        assert_eq!(names, vec!["dog", "ball", "plate"]);
    }

    fn scene_with_dog(dir: &std::path::Path) -> CaptionImagePair {
        let img = dir.join("scene.png");
        raster::save_png(&image::RgbImage::new(10, 10), &img).unwrap();
        CaptionImagePair::new("s1", "a dog", img.to_string_lossy().to_string())
    }

    #[test]
    fn grounding_drops_undetected_candidates() {
        let dir = tempfile::tempdir().unwrap();
        let pair = scene_with_dog(dir.path());
        let mut known = BTreeMap::new();
        known.insert("dog".to_string(), BoundingBox::new(1, 1, 4, 4).unwrap());
        let detector = MockDetector::new(MockConfig {
            known_objects: known,
            ..MockConfig::default()
        });
        let objects =
            ground_objects(&pair, &["dog".to_string(), "flag".to_string()], &detector).unwrap();
        assert_eq!(objects.len(), 1);
        assert_eq!(objects[0].name, "dog");
        assert_eq!(objects[0].source_id, "s1");
    }

    #[test]
    fn grounding_can_return_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let pair = scene_with_dog(dir.path());
        let detector = MockDetector::new(MockConfig {
            known_objects: BTreeMap::new(),
            ..MockConfig::default()
        });
        let objects = ground_objects(&pair, &["dog".to_string()], &detector).unwrap();
        assert!(objects.is_empty());
    }

    #[test]
    fn grounding_keeps_best_box_per_name() {
        struct TwoBoxes;
        impl ObjectDetector for TwoBoxes {
            fn detect(&self, _req: &DetectionRequest) -> Result<Vec<Detection>, BackendError> {
                Ok(vec![
                    Detection {
                        name: "dog".into(),
                        bbox: BoundingBox::new(0, 0, 2, 2).unwrap(),
                        confidence: 0.4,
                    },
                    Detection {
                        name: "dog".into(),
                        bbox: BoundingBox::new(1, 1, 3, 3).unwrap(),
                        confidence: 0.9,
                    },
                ])
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let pair = scene_with_dog(dir.path());
        let objects = ground_objects(&pair, &["dog".to_string()], &TwoBoxes).unwrap();
        assert_eq!(objects.len(), 1);
        assert!((objects[0].confidence - 0.9).abs() < 1e-12);
    }
}
