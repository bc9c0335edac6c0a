//! Inserting a rendered object into a photo through the RAW domain.
//!
//! The photo is translated to RAW, the object is alpha-blended there, and the
//! blend is translated back to JPEG conditioned on the original photo's
//! shared feature. Only masked pixels of the photo change.

use crate::error::{ensure, Error, Result};
use crate::histnet::NetworkWeights;
use crate::image::{Image, Mask};

/// Object colors in the canonical linear space with a coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedObject {
    pub rgb: Image,
    pub mask: Mask,
}

impl RenderedObject {
    pub fn new(rgb: Image, mask: Mask) -> Result<Self> {
        ensure!(
            rgb.width() == mask.width() && rgb.height() == mask.height(),
            Shape,
            "object is {}x{} but its mask is {}x{}",
            rgb.width(),
            rgb.height(),
            mask.width(),
            mask.height()
        );
        ensure!(rgb.is_finite(), NonFinite, "object colors must be finite");
        ensure!(rgb.data().iter().all(|&v| v >= 0.0), Contract, "object colors must be non-negative");
        Ok(RenderedObject { rgb, mask })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResult {
    /// The photo translated to RAW.
    pub raw_pred: Image,
    /// Object blended over `raw_pred`.
    pub blended_raw: Image,
    /// The blend translated back to JPEG, clamped.
    pub jpeg_pred: Image,
    pub final_image: Image,
}

/// `m * fg + (1 - m) * bg` per pixel, the mask shared by all channels.
fn mask_blend(mask: &Mask, fg: &Image, bg: &Image) -> Image {
    let mut out = bg.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
        let m = mask.data()[i];
        for c in 0..3 {
            px[c] = m * fg.data()[3 * i + c] + (1.0 - m) * px[c];
        }
    }
    out
}

fn check_mask(mask: &Mask, image: &Image, what: &str) -> Result<()> {
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::Shape(format!(
            "object is {}x{} but the {what} is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Alpha-blends the object over a RAW background.
pub fn blend_raw(object: &RenderedObject, raw_background: &Image) -> Result<Image> {
    check_mask(&object.mask, raw_background, "RAW background")?;
    Ok(mask_blend(&object.mask, &object.rgb, raw_background))
}

pub fn composite_object(photo: &Image, object: &RenderedObject, weights: &NetworkWeights) -> Result<CompositeResult> {
    check_mask(&object.mask, photo, "photo")?;
    let (raw_pred, shared) = weights.jpeg_to_raw(photo)?;
    let blended_raw = blend_raw(object, &raw_pred)?;
    let jpeg_pred = weights.raw_to_jpeg(&blended_raw, shared.as_ref())?;
    let final_image = mask_blend(&object.mask, &jpeg_pred, photo);
    Ok(CompositeResult { raw_pred, blended_raw, jpeg_pred, final_image })
}
