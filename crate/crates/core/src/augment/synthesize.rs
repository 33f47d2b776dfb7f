//! Phase three: build one augmented example per (spec, side) by rewriting
//! the caption and inpainting the object's box with the side's description.
//! The two sides of one spec share a pair id and act as mutual hard
//! negatives.

use super::decouple::augment_caption;
use super::AugmentError;
use crate::backends::{InpaintRequest, Inpainter, TextGenerator};
use crate::types::{
    derive_example_id, derive_pair_id, AttributeSpec, AugmentedExample, CaptionImagePair,
    DetectedObject, Provenance, Side,
};

/// Synthesize one side of a hard negative pair: the caption rewritten with
/// the side's description and a new image whose object box is regenerated
/// from it. When one side fails, the other survives as an orphan example.
pub fn synthesize_example(
    pair: &CaptionImagePair,
    object: &DetectedObject,
    spec: &AttributeSpec,
    side: Side,
    inpainter: &dyn Inpainter,
    generator: &dyn TextGenerator,
    seed: u64,
) -> Result<AugmentedExample, AugmentError> {
    if object.source_id != pair.id || spec.source_id != pair.id {
        return Err(AugmentError::Precondition(format!(
            "object/spec belong to `{}`/`{}`, not source `{}`",
            object.source_id, spec.source_id, pair.id
        )));
    }
    if object.name != spec.object_name {
        return Err(AugmentError::Precondition(format!(
            "spec describes `{}`, object is `{}`",
            spec.object_name, object.name
        )));
    }

    let description = match side {
        Side::Positive => &spec.positive_desc,
        Side::Negative => &spec.negative_desc,
    };
    let caption = augment_caption(&pair.caption, &object.name, description, generator, seed)?;
    let image_ref = inpainter.inpaint(&InpaintRequest {
        image_ref: pair.image_ref.clone(),
        mask: object.bbox,
        prompt: description.clone(),
    })?;

    let pair_id = derive_pair_id(&pair.id, &object.name, spec.category);
    Ok(AugmentedExample {
        example_id: derive_example_id(&pair_id, side),
        source_id: pair.id.clone(),
        object_name: object.name.clone(),
        category: Some(spec.category),
        side: Some(side),
        caption,
        image_ref,
        pair_id,
        provenance: Provenance::Synthesized,
    })
}
