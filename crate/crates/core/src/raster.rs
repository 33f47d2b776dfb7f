//! Small raster helpers shared by the mock backends, the toy encoder, and
//! fixture generation. Everything goes through PNG on disk.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::types::BoundingBox;

/// Load an image as RGB8, mapping any failure to a printable reason.
pub fn load_rgb(path: &Path) -> Result<RgbImage, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(img.to_rgb8())
}

/// Image dimensions without decoding the full pixel payload.
pub fn dimensions(path: &Path) -> Result<(u32, u32), String> {
    image::image_dimensions(path).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
    }
    img.save(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Fill a rectangle with a solid color, in place.
pub fn fill_rect(img: &mut RgbImage, rect: &BoundingBox, color: Rgb<u8>) {
    let x1 = rect.right().min(img.width());
    let y1 = rect.bottom().min(img.height());
    for y in rect.y()..y1 {
        for x in rect.x()..x1 {
            img.put_pixel(x, y, color);
        }
    }
}

/// Count pixels that differ between two equally sized images.
pub fn diff_pixel_count(a: &RgbImage, b: &RgbImage) -> Option<u64> {
    if a.dimensions() != b.dimensions() {
        return None;
    }
    let mut n = 0;
    for (pa, pb) in a.pixels().zip(b.pixels()) {
        if pa != pb {
            n += 1;
        }
    }
    Some(n)
}

/// Mean RGB of each cell of a `grid x grid` partition, scaled to [0, 1].
/// This is the image-side feature vector of the toy encoder: 3 * grid^2
/// numbers, deterministic for a given image.
pub fn grid_features(img: &RgbImage, grid: u32) -> Vec<f64> {
    let (w, h) = img.dimensions();
    let mut features = Vec::with_capacity((grid * grid * 3) as usize);
    for gy in 0..grid {
        for gx in 0..grid {
            let x0 = gx * w / grid;
            let x1 = ((gx + 1) * w / grid).max(x0 + 1).min(w);
            let y0 = gy * h / grid;
            let y1 = ((gy + 1) * h / grid).max(y0 + 1).min(h);
            let mut sums = [0.0f64; 3];
            let mut count = 0.0f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = img.get_pixel(x.min(w - 1), y.min(h - 1));
                    for c in 0..3 {
                        sums[c] += f64::from(px.0[c]);
                    }
                    count += 1.0;
                }
            }
            for sum in sums {
                features.push(sum / (count * 255.0));
            }
        }
    }
    features
}
