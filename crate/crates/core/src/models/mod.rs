//! The three networks of the pipeline: scene classifier, RGB to point-cloud
//! translator (U-Net generator + patch discriminator), and the pose
//! regressors (single-modality branches and their fused form).

pub mod backbone;
pub mod nn;

mod checkpoint;
mod classifier;
mod pix2pix;
mod regressor;

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::image::Image;

pub use backbone::BackboneConfig;
pub use checkpoint::{
    load_branch, load_checkpoint_meta, load_classifier, load_fused, load_generator, save_branch, save_checkpoint,
    save_classifier, save_fused, save_generator, CheckpointInfo, CheckpointMeta, CHECKPOINT_VERSION, TRUNCATION_LAYER,
};
pub use classifier::{build_classifier, ClassifierModel};
pub use nn::{Ctx, ParamStore};
pub use pix2pix::{build_pix2pix, Discriminator, Generator, Pix2PixConfig, Pix2PixModel};
pub use regressor::{
    build_regressor_branch, fuse_branches, FusedInit, Modality, MultiModalRegressor, RegressorBranch,
    POSE_OUTPUTS,
};

/// Stacks images into an `(N, 3, H, W)` tensor mapped from `[0, 1]` to `[-1, 1]`.
pub fn images_to_input(images: &[&Image]) -> Result<Tensor> {
    stack(images, |v| v * 2.0 - 1.0)
}

/// Stacks images into an `(N, 3, H, W)` tensor keeping the `[0, 1]` range.
pub fn images_to_unit(images: &[&Image]) -> Result<Tensor> {
    stack(images, |v| v)
}

fn stack(images: &[&Image], f: impl Fn(f32) -> f32) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.dims() != (w, h) {
            return Err(Error::invalid("images in a batch must share dimensions"));
        }
        let raw = img.as_raw();
        for c in 0..3 {
            data.extend(raw.iter().skip(c).step_by(3).map(|&v| f(v)));
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?)
}

/// Inverse of [`images_to_unit`], clipping to `[0, 1]`.
pub fn unit_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::invalid("expected 3 channels"));
    }
    let flat: Vec<f32> = t.flatten_all()?.to_vec1()?;
    let plane = h * w;
    (0..n)
        .map(|i| {
            let base = i * 3 * plane;
            let mut data = Vec::with_capacity(3 * plane);
            for p in 0..plane {
                for ch in 0..3 {
                    data.push(flat[base + ch * plane + p].clamp(0.0, 1.0));
                }
            }
            Image::from_raw(w, h, data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_tensor_round_trip() {
        let mut img = Image::new(5, 4, [0.1, 0.2, 0.3]);
        img.set_pixel(4, 3, [0.9, 0.8, 0.7]);
        let t = images_to_unit(&[&img, &img]).unwrap();
        assert_eq!(t.dims(), &[2, 3, 4, 5]);
        let back = unit_to_images(&t).unwrap();
        assert_eq!(back[1], img);
        let x = images_to_input(&[&img]).unwrap();
        let v: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        assert!((v[0] - (-0.8)).abs() < 1e-6);
    }
}
