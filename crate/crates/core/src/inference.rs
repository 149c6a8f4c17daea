//! Single-image localization: scene classification, point-cloud
//! reconstruction, fused pose regression and denormalization.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{denormalize_position, NormalizationParams};
use crate::digest::sha256_file;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::{
    images_to_input, load_classifier, load_fused, load_generator, save_classifier, save_fused, save_generator,
    unit_to_images, CheckpointInfo, ClassifierModel, Ctx, Generator, MultiModalRegressor,
};
use crate::pose::{normalize_quat, Quat};

pub const BUNDLE_VERSION: u32 = 1;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

const CLASSIFIER_FILE: &str = "classifier.ckpt";
const GENERATOR_FILE: &str = "generator.ckpt";
const REGRESSOR_FILE: &str = "regressor.ckpt";
const NORM_FILE: &str = "norm_params.json";
const MANIFEST_FILE: &str = "bundle.json";

/// Centre-crops to a square and resizes to `target x target`. Pixel values
/// stay in [0, 1]; the shift to the network range happens at tensor
/// conversion.
pub fn preprocess_image(image: &Image, target: usize) -> Result<Image> {
    if image.is_empty() {
        return Err(Error::Decode("empty image".into()));
    }
    if target == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    Ok(image.center_crop_square().resize(target, target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub input_size: usize,
    pub scene_count: usize,
    pub dataset_hash: String,
    pub config_hash: String,
    pub confidence_threshold: f64,
    /// SHA-256 of every file in the bundle directory, keyed by file name.
    pub files: BTreeMap<String, String>,
}

pub struct ModelBundle {
    pub classifier: ClassifierModel,
    pub generator: Generator,
    pub regressor: MultiModalRegressor,
    pub norm: NormalizationParams,
    pub manifest: BundleManifest,
}

impl ModelBundle {
    pub fn new(
        classifier: ClassifierModel,
        generator: Generator,
        regressor: MultiModalRegressor,
        norm: NormalizationParams,
        dataset_hash: &str,
        config_hash: &str,
    ) -> Result<Self> {
        let manifest = BundleManifest {
            format_version: BUNDLE_VERSION,
            input_size: classifier.config.input_size,
            scene_count: classifier.scene_count(),
            dataset_hash: dataset_hash.to_string(),
            config_hash: config_hash.to_string(),
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            files: BTreeMap::new(),
        };
        let bundle = Self {
            classifier,
            generator,
            regressor,
            norm,
            manifest,
        };
        bundle.check_consistency()?;
        Ok(bundle)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("confidence threshold {threshold} outside [0, 1]")));
        }
        self.manifest.confidence_threshold = threshold;
        Ok(self)
    }

    pub fn input_size(&self) -> usize {
        self.manifest.input_size
    }

    pub fn scene_count(&self) -> usize {
        self.manifest.scene_count
    }

    fn check_consistency(&self) -> Result<()> {
        let size = self.manifest.input_size;
        let sizes = [
            ("classifier", self.classifier.config.input_size),
            ("generator", self.generator.config.input_size),
            ("regressor rgb branch", self.regressor.rgb_config.input_size),
            ("regressor pc branch", self.regressor.pc_config.input_size),
        ];
        for (name, s) in sizes {
            if s != size {
                return Err(Error::BundleIntegrity(format!("{name} input size {s}, bundle uses {size}")));
            }
        }
        let n = self.manifest.scene_count;
        if self.classifier.scene_count() != n {
            return Err(Error::BundleIntegrity(format!(
                "classifier has {} scenes, bundle declares {n}",
                self.classifier.scene_count()
            )));
        }
        let ids: Vec<usize> = self.norm.scenes.keys().copied().collect();
        if ids != (0..n).collect::<Vec<_>>() {
            return Err(Error::BundleIntegrity(format!(
                "normalization params cover scenes {ids:?}, expected 0..{n}"
            )));
        }
        Ok(())
    }

    /// Writes the five bundle files plus checkpoint sidecars, then records
    /// their digests in `bundle.json`.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.norm.save(&dir.join(NORM_FILE))?;
        let info = CheckpointInfo {
            norm_params_hash: Some(sha256_file(&dir.join(NORM_FILE))?),
            ..Default::default()
        };
        save_classifier(&self.classifier, &dir.join(CLASSIFIER_FILE), &info)?;
        save_generator(&self.generator, &dir.join(GENERATOR_FILE), &info)?;
        save_fused(&self.regressor, &dir.join(REGRESSOR_FILE), &info)?;
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != MANIFEST_FILE && entry.file_type()?.is_file() {
                files.insert(name, sha256_file(&entry.path())?);
            }
        }
        self.manifest.files = files;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    /// Loads and verifies a bundle directory. Any digest mismatch, missing
    /// file or cross-component disagreement is a bundle-integrity error.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::BundleIntegrity(format!("{}: {e}", manifest_path.display())))?;
        let manifest: BundleManifest = serde_json::from_str(&text)?;
        if manifest.format_version != BUNDLE_VERSION {
            return Err(Error::BundleIntegrity(format!(
                "bundle format version {} (expected {BUNDLE_VERSION})",
                manifest.format_version
            )));
        }
        for required in [CLASSIFIER_FILE, GENERATOR_FILE, REGRESSOR_FILE, NORM_FILE] {
            if !manifest.files.contains_key(required) {
                return Err(Error::BundleIntegrity(format!("bundle manifest does not list {required}")));
            }
        }
        for (name, expected) in &manifest.files {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(Error::BundleIntegrity(format!("missing bundle file {name}")));
            }
            let found = sha256_file(&path)?;
            if &found != expected {
                return Err(Error::BundleIntegrity(format!("digest mismatch for {name}")));
            }
        }
        let bundle = Self {
            classifier: load_classifier(&dir.join(CLASSIFIER_FILE))?,
            generator: load_generator(&dir.join(GENERATOR_FILE))?,
            regressor: load_fused(&dir.join(REGRESSOR_FILE))?,
            norm: NormalizationParams::load(&dir.join(NORM_FILE))?,
            manifest,
        };
        bundle.check_consistency()?;
        Ok(bundle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub scene_id: usize,
    pub confidence: f64,
    /// World position in metres.
    pub position: [f64; 3],
    /// Regressor position output before denormalization.
    pub normalized_position: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    pub quaternion: Quat,
    pub low_confidence: bool,
    pub reconstruction: Option<Image>,
    pub latency: Duration,
}

impl LocalizationResult {
    pub fn to_json(&self) -> serde_json::Value {
        let [x, y, z] = self.position;
        let [qw, qx, qy, qz] = self.quaternion;
        serde_json::json!({
            "scene_id": self.scene_id,
            "confidence": self.confidence,
            "x": x, "y": y, "z": z,
            "qw": qw, "qx": qx, "qy": qy, "qz": qz,
            "low_confidence": self.low_confidence,
            "latency_ms": self.latency.as_secs_f64() * 1e3,
        })
    }

    pub fn to_json_line(&self) -> String {
        self.to_json().to_string()
    }
}

pub fn localize(image: &Image, bundle: &ModelBundle) -> Result<LocalizationResult> {
    Ok(localize_batch(std::slice::from_ref(image), bundle, None)?.remove(0))
}

/// Same as [`localize`] but decodes the position with `scene_id` instead of
/// the classifier's prediction.
pub fn localize_with_scene(image: &Image, bundle: &ModelBundle, scene_id: usize) -> Result<LocalizationResult> {
    if scene_id >= bundle.scene_count() {
        return Err(Error::OutOfBounds(format!(
            "scene {scene_id} outside 0..{}",
            bundle.scene_count()
        )));
    }
    Ok(localize_batch(std::slice::from_ref(image), bundle, Some(&[scene_id]))?.remove(0))
}

/// Runs the full pipeline on a batch. `forced_scenes`, when given, replaces
/// the predicted scene for denormalization.
pub fn localize_batch(
    images: &[Image],
    bundle: &ModelBundle,
    forced_scenes: Option<&[usize]>,
) -> Result<Vec<LocalizationResult>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(f) = forced_scenes {
        if f.len() != images.len() {
            return Err(Error::invalid(format!("{} forced scenes for {} images", f.len(), images.len())));
        }
    }
    let start = Instant::now();
    let size = bundle.input_size();
    let prepared = images
        .iter()
        .map(|im| preprocess_image(im, size))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Image> = prepared.iter().collect();
    let rgb = images_to_input(&refs)?;

    let probs = bundle.classifier.probabilities(&rgb)?.to_vec2::<f32>()?;
    let reconstruction = bundle.generator.forward(&rgb, &mut Ctx::eval())?;
    let pc = reconstruction.affine(2.0, -1.0)?;
    let pose = bundle.regressor.forward(&rgb, &pc, &mut Ctx::eval())?.to_vec2::<f32>()?;
    let recon_images = unit_to_images(&reconstruction)?;
    let latency = start.elapsed() / images.len() as u32;

    let mut out = Vec::with_capacity(images.len());
    for (i, (row, recon)) in probs.iter().zip(recon_images).enumerate() {
        let (predicted, confidence) = argmax(row);
        let scene_id = forced_scenes.map_or(predicted, |f| f[i]);
        let r = &pose[i];
        let normalized_position = [r[0] as f64, r[1] as f64, r[2] as f64];
        let position = denormalize_position(normalized_position, scene_id, &bundle.norm)?;
        let quaternion = normalize_quat([r[3] as f64, r[4] as f64, r[5] as f64, r[6] as f64])?;
        out.push(LocalizationResult {
            scene_id,
            confidence,
            position,
            normalized_position,
            quaternion,
            low_confidence: confidence < bundle.manifest.confidence_threshold,
            reconstruction: Some(recon),
            latency,
        });
    }
    Ok(out)
}

fn argmax(row: &[f32]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    (best, (row[best] as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PositionRange;
    use crate::models::{build_classifier, build_pix2pix, build_regressor_branch, fuse_branches, BackboneConfig};
    use crate::models::{FusedInit, Modality, Pix2PixConfig};

    fn tiny_bundle() -> ModelBundle {
        let cfg = BackboneConfig {
            input_size: 64,
            head_units: vec![16, 8],
            ..BackboneConfig::default()
        };
        let classifier = build_classifier(&cfg, 2, 1).unwrap();
        let p2p = build_pix2pix(
            &Pix2PixConfig {
                input_size: 64,
                generator_filters: 4,
                discriminator_filters: 4,
                ..Pix2PixConfig::default()
            },
            2,
        )
        .unwrap();
        let rgb = build_regressor_branch(&cfg, Modality::Rgb, 3).unwrap();
        let pc = build_regressor_branch(&cfg, Modality::PointCloud, 4).unwrap();
        let fused = fuse_branches(&rgb, &pc, FusedInit::Pretrained, 5).unwrap();
        let mut scenes = BTreeMap::new();
        scenes.insert(0, PositionRange { p_min: [0.0; 3], p_max: [1.0; 3] });
        scenes.insert(1, PositionRange { p_min: [10.0; 3], p_max: [12.0; 3] });
        ModelBundle::new(classifier, p2p.generator, fused, NormalizationParams { scenes }, "d", "c").unwrap()
    }

    fn gradient(w: usize, h: usize) -> Image {
        let mut im = Image::new(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                im.set_pixel(x, y, [x as f32 / w as f32, y as f32 / h as f32, 0.5]);
            }
        }
        im
    }

    #[test]
    fn preprocess_shapes_and_constants() {
        let out = preprocess_image(&gradient(640, 480), 128).unwrap();
        assert_eq!(out.dims(), (128, 128));
        let same = gradient(128, 128);
        assert_eq!(preprocess_image(&same, 128).unwrap(), same);
        let flat = Image::new(50, 30, [0.2, 0.4, 0.6]);
        let out = preprocess_image(&flat, 16).unwrap();
        for v in out.as_raw().chunks(3) {
            assert!((v[0] - 0.2).abs() < 1e-6 && (v[1] - 0.4).abs() < 1e-6 && (v[2] - 0.6).abs() < 1e-6);
        }
        assert!(matches!(preprocess_image(&Image::new(0, 0, [0.0; 3]), 8), Err(Error::Decode(_))));
    }

    #[test]
    fn localize_is_deterministic_and_unit() {
        let b = tiny_bundle();
        let im = gradient(80, 64);
        let r1 = localize(&im, &b).unwrap();
        let r2 = localize(&im, &b).unwrap();
        assert_eq!(r1.scene_id, r2.scene_id);
        assert_eq!(r1.position, r2.position);
        assert_eq!(r1.quaternion, r2.quaternion);
        let n: f64 = r1.quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&r1.confidence));
        assert_eq!(r1.low_confidence, r1.confidence < 0.5);
        let line = r1.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        for k in ["scene_id", "confidence", "x", "y", "z", "qw", "qx", "qy", "qz"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn forced_scene_selects_denormalization() {
        let b = tiny_bundle();
        let im = gradient(64, 64);
        let a = localize_with_scene(&im, &b, 0).unwrap();
        let c = localize_with_scene(&im, &b, 1).unwrap();
        assert_eq!(a.normalized_position, c.normalized_position);
        for k in 0..3 {
            let pn = a.normalized_position[k];
            assert!((a.position[k] - (pn + 1.0) * 0.5).abs() < 1e-9);
            assert!((c.position[k] - (10.0 + (pn + 1.0))).abs() < 1e-9);
        }
        assert!(localize_with_scene(&im, &b, 2).is_err());
    }

    #[test]
    fn bundle_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = tiny_bundle();
        b.save(dir.path()).unwrap();
        for f in ["classifier.ckpt", "generator.ckpt", "regressor.ckpt", "norm_params.json", "bundle.json"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let loaded = ModelBundle::load(dir.path()).unwrap();
        let im = gradient(64, 64);
        let r1 = localize(&im, &b).unwrap();
        let r2 = localize(&im, &loaded).unwrap();
        assert_eq!(r1.position, r2.position);
        assert_eq!(r1.scene_id, r2.scene_id);

        let norm = dir.path().join("norm_params.json");
        let mut text = std::fs::read_to_string(&norm).unwrap();
        text.push(' ');
        std::fs::write(&norm, text).unwrap();
        assert!(matches!(ModelBundle::load(dir.path()), Err(Error::BundleIntegrity(_))));
    }

    #[test]
    fn inconsistent_components_are_rejected() {
        let b = tiny_bundle();
        let mut scenes = b.norm.scenes.clone();
        scenes.remove(&1);
        let err = ModelBundle::new(
            b.classifier,
            b.generator,
            b.regressor,
            NormalizationParams { scenes },
            "d",
            "c",
        );
        assert!(matches!(err, Err(Error::BundleIntegrity(_))));
    }
}
