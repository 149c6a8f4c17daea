use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{Device, Tensor};

use crate::dataset::{regression_target, NormalizationParams, PairedSample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::{images_to_input, images_to_unit};

/// Which image members to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modalities {
    pub rgb: bool,
    pub pc: bool,
}

impl Modalities {
    pub const BOTH: Modalities = Modalities { rgb: true, pc: true };
    pub const RGB: Modalities = Modalities { rgb: true, pc: false };
    pub const PC: Modalities = Modalities { rgb: false, pc: true };
}

/// Loads a PNG and brings it to `size x size` (centre crop, then resize).
pub fn load_square(path: &Path, size: usize) -> Result<Image> {
    let img = Image::load_png(path)?;
    if img.dims() == (size, size) {
        return Ok(img);
    }
    Ok(img.center_crop_square().resize(size, size))
}

/// In-memory images of one split. Every image access is counted so that
/// modality isolation can be checked.
pub struct SplitData {
    samples: Vec<PairedSample>,
    rgb: Option<Vec<Image>>,
    pc: Option<Vec<Image>>,
    rgb_reads: AtomicUsize,
    pc_reads: AtomicUsize,
}

impl SplitData {
    pub fn load(root: &Path, samples: &[PairedSample], size: usize, which: Modalities) -> Result<Self> {
        let load_all = |member: fn(&PairedSample) -> &Path| -> Result<Vec<Image>> {
            samples.iter().map(|s| load_square(&root.join(member(s)), size)).collect()
        };
        let rgb = if which.rgb { Some(load_all(|s| &s.rgb_path)?) } else { None };
        let pc = if which.pc { Some(load_all(|s| &s.pc_path)?) } else { None };
        Self::from_images(samples.to_vec(), rgb, pc)
    }

    pub fn from_images(samples: Vec<PairedSample>, rgb: Option<Vec<Image>>, pc: Option<Vec<Image>>) -> Result<Self> {
        for imgs in [&rgb, &pc].into_iter().flatten() {
            if imgs.len() != samples.len() {
                return Err(Error::invalid(format!(
                    "{} images for {} samples",
                    imgs.len(),
                    samples.len()
                )));
            }
        }
        Ok(Self {
            samples,
            rgb,
            pc,
            rgb_reads: AtomicUsize::new(0),
            pc_reads: AtomicUsize::new(0),
        })
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_rgb(&self) -> bool {
        self.rgb.is_some()
    }

    pub fn has_pc(&self) -> bool {
        self.pc.is_some()
    }

    pub fn rgb_reads(&self) -> usize {
        self.rgb_reads.load(Ordering::Relaxed)
    }

    pub fn pc_reads(&self) -> usize {
        self.pc_reads.load(Ordering::Relaxed)
    }

    pub fn rgb(&self, i: usize) -> Result<&Image> {
        let imgs = self.rgb.as_ref().ok_or_else(|| Error::invalid("split has no RGB images"))?;
        self.rgb_reads.fetch_add(1, Ordering::Relaxed);
        imgs.get(i).ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))
    }

    pub fn pc(&self, i: usize) -> Result<&Image> {
        let imgs = self.pc.as_ref().ok_or_else(|| Error::invalid("split has no point-cloud images"))?;
        self.pc_reads.fetch_add(1, Ordering::Relaxed);
        imgs.get(i).ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))
    }

    /// Replaces the point-cloud member, e.g. with generator reconstructions.
    pub fn with_pc(self, pc: Vec<Image>) -> Result<Self> {
        Self::from_images(self.samples, self.rgb, Some(pc))
    }

    pub fn without_rgb(self) -> Self {
        Self { rgb: None, ..self }
    }

    /// Copy restricted to `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pick = |v: &Option<Vec<Image>>| -> Result<Option<Vec<Image>>> {
            v.as_ref()
                .map(|imgs| {
                    indices
                        .iter()
                        .map(|&i| imgs.get(i).cloned().ok_or_else(|| Error::invalid("subset index out of range")))
                        .collect()
                })
                .transpose()
        };
        let samples = indices
            .iter()
            .map(|&i| self.samples.get(i).cloned().ok_or_else(|| Error::invalid("subset index out of range")))
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(samples, pick(&self.rgb)?, pick(&self.pc)?)
    }

    fn gather<'a>(&'a self, idx: &[usize], get: impl Fn(usize) -> Result<&'a Image>) -> Result<Vec<&'a Image>> {
        idx.iter().map(|&i| get(i)).collect()
    }

    /// RGB batch in the network input range `[-1, 1]`.
    pub fn rgb_input(&self, idx: &[usize]) -> Result<Tensor> {
        images_to_input(&self.gather(idx, |i| self.rgb(i))?)
    }

    /// Point-cloud batch in the network input range `[-1, 1]`.
    pub fn pc_input(&self, idx: &[usize]) -> Result<Tensor> {
        images_to_input(&self.gather(idx, |i| self.pc(i))?)
    }

    /// Point-cloud batch in its encoding range `[0, 1]`.
    pub fn pc_unit(&self, idx: &[usize]) -> Result<Tensor> {
        images_to_unit(&self.gather(idx, |i| self.pc(i))?)
    }

    pub fn labels(&self, idx: &[usize]) -> Result<Tensor> {
        let v: Vec<u32> = idx.iter().map(|&i| self.samples[i].scene_id as u32).collect();
        Ok(Tensor::from_vec(v, idx.len(), &Device::Cpu)?)
    }

    /// `(N, 7)` normalized position and unit quaternion targets.
    pub fn pose_targets(&self, idx: &[usize], norm: &NormalizationParams) -> Result<Tensor> {
        let mut v = Vec::with_capacity(idx.len() * 7);
        for &i in idx {
            let (p, q) = regression_target(&self.samples[i], norm)?;
            v.extend(p.iter().chain(&q).map(|&x| x as f32));
        }
        Ok(Tensor::from_vec(v, (idx.len(), 7), &Device::Cpu)?)
    }
}

/// Training and validation data of one stage.
pub struct TrainingData {
    pub train: SplitData,
    pub val: SplitData,
}

impl TrainingData {
    pub fn check_non_empty(&self) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::invalid(format!(
                "empty split: {} train, {} validation samples",
                self.train.len(),
                self.val.len()
            )));
        }
        Ok(())
    }
}

/// Consecutive index chunks of `0..n`.
pub(crate) fn chunks(n: usize, batch: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(batch.max(1)).map(move |s| (s..(s + batch).min(n)).collect())
}
