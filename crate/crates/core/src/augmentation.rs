//! Label-preserving augmentation: multiplicative brightness and the sliding
//! dark mask window burned into both members of an RGB / point-cloud pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pose::CameraPose;

/// Brightness factors applied to every selected source sample.
pub const DEFAULT_BRIGHTNESS_LEVELS: [f64; 5] = [0.6, 0.8, 1.0, 1.2, 1.4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mask_fraction: f64,
    pub stride_fraction: f64,
    #[serde(default)]
    pub fill: [f32; 3],
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            mask_fraction: 0.25,
            stride_fraction: 0.25,
            fill: [0.0; 3],
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "mask_fraction {} outside (0, 1)",
                self.mask_fraction
            )));
        }
        if !(self.stride_fraction > 0.0 && self.stride_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "stride_fraction {} outside (0, 1]",
                self.stride_fraction
            )));
        }
        Ok(())
    }

    /// Mask placements per axis: `ceil((1 - f) / s) + 1`.
    pub fn positions_per_axis(&self) -> usize {
        let n = (1.0 - self.mask_fraction) / self.stride_fraction;
        (n - 1e-9).ceil().max(0.0) as usize + 1
    }

    /// Fractional start offsets along one axis; the last one is flush with
    /// the far edge.
    fn offsets(&self) -> Vec<f64> {
        let last = 1.0 - self.mask_fraction;
        (0..self.positions_per_axis())
            .map(|k| (k as f64 * self.stride_fraction).min(last))
            .collect()
    }
}

/// Pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Mask rectangles in row-major order starting at the top-left corner.
pub fn mask_grid(spec: &MaskSpec, width: usize, height: usize) -> Result<Vec<MaskRect>> {
    spec.validate()?;
    let mw = (spec.mask_fraction * width as f64).round() as usize;
    let mh = (spec.mask_fraction * height as f64).round() as usize;
    if mw == 0 || mh == 0 || mw > width || mh > height {
        return Err(Error::invalid(format!(
            "mask of {mw}x{mh} px does not fit a {width}x{height} image"
        )));
    }
    let offs = spec.offsets();
    let to_px = |f: f64, size: usize, m: usize| ((f * size as f64).round() as usize).min(size - m);
    let mut rects = Vec::with_capacity(offs.len() * offs.len());
    for &fy in &offs {
        for &fx in &offs {
            rects.push(MaskRect {
                x: to_px(fx, width, mw),
                y: to_px(fy, height, mh),
                w: mw,
                h: mh,
            });
        }
    }
    Ok(rects)
}

/// In-memory RGB / point-cloud pair with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedImages {
    pub rgb: Image,
    pub pc: Image,
    pub scene_id: usize,
    pub pose: CameraPose,
}

/// Pixelwise multiply, clipped to `[0, 1]`.
pub fn adjust_brightness(image: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("brightness factor must be positive, got {factor}")));
    }
    let f = factor as f32;
    Ok(image.map(|v| (v * f).clamp(0.0, 1.0)))
}

/// One variant per mask placement; the same rectangle is filled in both
/// images and the labels are copied unchanged.
pub fn sliding_mask_variants(
    sample: &PairedImages,
    spec: &MaskSpec,
) -> Result<Vec<(MaskRect, PairedImages)>> {
    if sample.rgb.dims() != sample.pc.dims() {
        return Err(Error::invalid(format!(
            "pair dimensions differ: rgb {:?}, point cloud {:?}",
            sample.rgb.dims(),
            sample.pc.dims()
        )));
    }
    let (w, h) = sample.rgb.dims();
    let rects = mask_grid(spec, w, h)?;
    Ok(rects
        .into_iter()
        .map(|r| {
            let mut v = sample.clone();
            v.rgb.fill_rect(r.x, r.y, r.w, r.h, spec.fill);
            v.pc.fill_rect(r.x, r.y, r.w, r.h, spec.fill);
            (r, v)
        })
        .collect())
}
