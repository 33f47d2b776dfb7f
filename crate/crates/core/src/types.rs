//! Domain data model shared by every pipeline stage.
//!
//! All types here are immutable value objects: cheap to clone, safe to send
//! across threads, and serializable in the exact field layout the manifest
//! files use.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;

/// One record of the source dataset: an id, a caption, and a relative path
/// to the image the caption describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionImagePair {
    pub id: String,
    pub caption: String,
    pub image_ref: String,
}

impl CaptionImagePair {
    pub fn new(
        id: impl Into<String>,
        caption: impl Into<String>,
        image_ref: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            caption: caption.into(),
            image_ref: image_ref.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id must be non-empty".into());
        }
        if self.caption.trim().is_empty() {
            return Err("caption must be non-empty after trimming".into());
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle: `x`/`y` are the left/top corner, `w`/`h`
/// the extent. Construction rejects zero-area boxes; whether the box fits
/// inside a particular image is checked at use time via [`BoundingBox::within`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, String> {
        if w == 0 || h == 0 {
            return Err(format!("box must have positive extent, got {w}x{h}"));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> u32 {
        self.x
    }
    pub fn y(&self) -> u32 {
        self.y
    }
    pub fn w(&self) -> u32 {
        self.w
    }
    pub fn h(&self) -> u32 {
        self.h
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// Area of the overlap with `other`, exact in integer arithmetic.
    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let ix = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let iy = self
            .bottom()
            .min(other.bottom())
            .saturating_sub(self.y.max(other.y));
        u64::from(ix) * u64::from(iy)
    }

    /// True when the box lies entirely inside a `width` x `height` image.
    pub fn within(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    /// Clip to a `width` x `height` image, returning `None` when nothing
    /// remains. Used to sanitize detector output before it enters a manifest.
    pub fn clipped(&self, width: u32, height: u32) -> Option<Self> {
        let x = self.x.min(width);
        let y = self.y.min(height);
        let w = self.right().min(width).saturating_sub(x);
        let h = self.bottom().min(height).saturating_sub(y);
        Self::new(x, y, w, h).ok()
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = String;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> [u32; 4] {
        [b.x, b.y, b.w, b.h]
    }
}

/// An object grounded in a source image: which record it came from, the
/// noun phrase naming it, where it sits, and the detector's confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub source_id: String,
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl DetectedObject {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("object name must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }
}

/// The closed set of attribute categories a description can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeCategory {
    Color,
    Shape,
    Material,
    Other,
}

impl AttributeCategory {
    pub const ALL: [AttributeCategory; 4] = [
        AttributeCategory::Color,
        AttributeCategory::Shape,
        AttributeCategory::Material,
        AttributeCategory::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttributeCategory::Color => "color",
            AttributeCategory::Shape => "shape",
            AttributeCategory::Material => "material",
            AttributeCategory::Other => "other",
        }
    }
}

impl fmt::Display for AttributeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "color" => Ok(AttributeCategory::Color),
            "shape" => Ok(AttributeCategory::Shape),
            "material" => Ok(AttributeCategory::Material),
            "other" => Ok(AttributeCategory::Other),
            other => Err(format!("unknown attribute category `{other}`")),
        }
    }
}

/// A positive attribute description of one object plus the counter-description
/// that differs only in the attribute value. The counterpart is what turns an
/// augmented example into one half of a hard negative pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub source_id: String,
    pub object_name: String,
    pub category: AttributeCategory,
    pub positive_desc: String,
    pub negative_desc: String,
}

/// Last whitespace-separated word of a noun phrase, used when checking that
/// a description actually talks about the object.
pub fn head_noun(object_name: &str) -> &str {
    object_name.split_whitespace().last().unwrap_or(object_name)
}

impl AttributeSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.object_name.is_empty() {
            return Err("object_name must be non-empty".into());
        }
        let pos = self.positive_desc.trim();
        let neg = self.negative_desc.trim();
        if pos.is_empty() || neg.is_empty() {
            return Err("descriptions must be non-empty".into());
        }
        if pos.eq_ignore_ascii_case(neg) {
            return Err(format!(
                "positive and negative descriptions are identical: `{pos}`"
            ));
        }
        let head = head_noun(&self.object_name).to_lowercase();
        for (side, desc) in [("positive", pos), ("negative", neg)] {
            if !desc.to_lowercase().contains(&head) {
                return Err(format!(
                    "{side} description `{desc}` does not mention object `{}`",
                    self.object_name
                ));
            }
        }
        Ok(())
    }
}

/// Which half of a hard negative pair an example is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
}

impl Side {
    pub fn opposite(&self) -> Side {
        match self {
            Side::Positive => Side::Negative,
            Side::Negative => Side::Positive,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Positive => "positive",
            Side::Negative => "negative",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a training example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthesized,
    Source,
}

/// One training example: either a synthesized caption-image pair carrying
/// its hard-negative linkage, or a pass-through source record
/// (`provenance = source`, empty `pair_id`, no category/side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub example_id: String,
    pub source_id: String,
    pub object_name: String,
    pub category: Option<AttributeCategory>,
    pub side: Option<Side>,
    pub caption: String,
    pub image_ref: String,
    pub pair_id: String,
    pub provenance: Provenance,
}

impl AugmentedExample {
    /// Wrap a source record for inclusion in a training manifest.
    pub fn from_source(pair: &CaptionImagePair) -> Self {
        Self {
            example_id: format!("source/{}", pair.id),
            source_id: pair.id.clone(),
            object_name: String::new(),
            category: None,
            side: None,
            caption: pair.caption.clone(),
            image_ref: pair.image_ref.clone(),
            pair_id: String::new(),
            provenance: Provenance::Source,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.example_id.is_empty() {
            return Err("example_id must be non-empty".into());
        }
        if self.caption.trim().is_empty() {
            return Err("caption must be non-empty".into());
        }
        match self.provenance {
            Provenance::Synthesized => {
                if self.pair_id.is_empty() {
                    return Err("synthesized example must carry a pair_id".into());
                }
                if self.category.is_none() || self.side.is_none() {
                    return Err("synthesized example must carry category and side".into());
                }
                if self.object_name.is_empty() {
                    return Err("synthesized example must carry object_name".into());
                }
            }
            Provenance::Source => {
                if !self.pair_id.is_empty() {
                    return Err("source example must have an empty pair_id".into());
                }
            }
        }
        Ok(())
    }
}

/// Linkage record between the two sides of a completed hard negative pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegativePair {
    pub pair_id: String,
    pub positive_example_id: String,
    pub negative_example_id: String,
}

/// Deterministic pair identifier for one (source, object, category) slot.
/// Stable across runs so that re-running a pipeline reproduces ids exactly.
pub fn derive_pair_id(source_id: &str, object_name: &str, category: AttributeCategory) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(object_name.as_bytes());
    hasher.update([0x1f]);
    hasher.update(category.as_str().as_bytes());
    let digest = hasher.finalize();
    hex::encode(&digest[..16])
}

/// Example identifier for one side of a pair: `<pair_id>/<side>`.
pub fn derive_example_id(pair_id: &str, side: Side) -> String {
    format!("{pair_id}/{side}")
}
