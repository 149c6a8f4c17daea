//! Sample manifests, per-scene position normalization and stratified splits.
//!
//! Positions are mapped to `[-1, 1]` per scene and per axis with
//! `2 (p - p_min) / (p_max - p_min) - 1`, where the ranges come from the
//! training split. Quaternions are left as unit vectors.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::MaskRect;
use crate::error::{Error, Result};
use crate::pose::{CameraPose, Quat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationKind {
    Mask {
        rect: MaskRect,
        mask_fraction: f64,
        stride_fraction: f64,
    },
    Brightness {
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Augmented {
        source_id: u64,
        #[serde(flatten)]
        kind: AugmentationKind,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: u64,
    pub scene_id: usize,
    /// Paths relative to the manifest directory.
    pub rgb_path: PathBuf,
    pub pc_path: PathBuf,
    pub pose: CameraPose,
    pub provenance: Provenance,
}

impl PairedSample {
    /// Id of the original sample this one derives from (itself if original).
    pub fn source_id(&self) -> u64 {
        match self.provenance {
            Provenance::Original => self.id,
            Provenance::Augmented { source_id, .. } => source_id,
        }
    }

    pub fn is_original(&self) -> bool {
        matches!(self.provenance, Provenance::Original)
    }

    pub fn position(&self) -> [f64; 3] {
        let p = self.pose.position;
        [p.x, p.y, p.z]
    }
}

/// Flat JSON-lines record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLine {
    id: u64,
    scene_id: usize,
    rgb_path: PathBuf,
    pc_path: PathBuf,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    provenance: Provenance,
}

impl From<&PairedSample> for ManifestLine {
    fn from(s: &PairedSample) -> Self {
        let [qw, qx, qy, qz] = s.pose.orientation();
        let p = s.pose.position;
        Self {
            id: s.id,
            scene_id: s.scene_id,
            rgb_path: s.rgb_path.clone(),
            pc_path: s.pc_path.clone(),
            x: p.x,
            y: p.y,
            z: p.z,
            qw,
            qx,
            qy,
            qz,
            provenance: s.provenance.clone(),
        }
    }
}

impl TryFrom<ManifestLine> for PairedSample {
    type Error = Error;

    fn try_from(l: ManifestLine) -> Result<Self> {
        Ok(Self {
            id: l.id,
            scene_id: l.scene_id,
            rgb_path: l.rgb_path,
            pc_path: l.pc_path,
            pose: CameraPose::new(Vector3::new(l.x, l.y, l.z), [l.qw, l.qx, l.qy, l.qz])?,
            provenance: l.provenance,
        })
    }
}

pub fn write_manifest(path: &Path, samples: &[PairedSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, &ManifestLine::from(s))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairedSample>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(PairedSample::try_from(rec).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

/// Checks that every referenced image exists under `base_dir`.
pub fn validate_manifest(samples: &[PairedSample], base_dir: &Path) -> Result<()> {
    for s in samples {
        for p in [&s.rgb_path, &s.pc_path] {
            let full = base_dir.join(p);
            if !full.is_file() {
                return Err(Error::ReferentialIntegrity {
                    sample_id: s.id,
                    path: full,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRange {
    pub p_min: [f64; 3],
    pub p_max: [f64; 3],
}

/// Per-scene position ranges keyed by scene id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizationParams {
    pub scenes: BTreeMap<usize, PositionRange>,
}

const AXES: [char; 3] = ['x', 'y', 'z'];

impl NormalizationParams {
    fn range(&self, scene_id: usize) -> Result<&PositionRange> {
        let r = self
            .scenes
            .get(&scene_id)
            .ok_or_else(|| Error::NotFound(format!("normalization params for scene {scene_id}")))?;
        for axis in 0..3 {
            if !(r.p_max[axis] > r.p_min[axis]) {
                return Err(Error::DegenerateAxis {
                    scene_id,
                    axis: AXES[axis],
                });
            }
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Per-scene component-wise min / max over `samples` (pass the training
/// split).
pub fn compute_norm_params(samples: &[PairedSample]) -> Result<NormalizationParams> {
    let mut scenes: BTreeMap<usize, PositionRange> = BTreeMap::new();
    for s in samples {
        let p = s.position();
        let r = scenes.entry(s.scene_id).or_insert(PositionRange {
            p_min: p,
            p_max: p,
        });
        for a in 0..3 {
            r.p_min[a] = r.p_min[a].min(p[a]);
            r.p_max[a] = r.p_max[a].max(p[a]);
        }
    }
    if scenes.is_empty() {
        return Err(Error::invalid("no samples to compute normalization from"));
    }
    let params = NormalizationParams { scenes };
    for &id in params.scenes.keys() {
        params.range(id)?;
    }
    Ok(params)
}

pub fn normalize_position(p: [f64; 3], scene_id: usize, params: &NormalizationParams) -> Result<[f64; 3]> {
    let r = params.range(scene_id)?;
    Ok(std::array::from_fn(|a| {
        2.0 * (p[a] - r.p_min[a]) / (r.p_max[a] - r.p_min[a]) - 1.0
    }))
}

pub fn denormalize_position(pn: [f64; 3], scene_id: usize, params: &NormalizationParams) -> Result<[f64; 3]> {
    let r = params.range(scene_id)?;
    Ok(std::array::from_fn(|a| {
        r.p_min[a] + (pn[a] + 1.0) * 0.5 * (r.p_max[a] - r.p_min[a])
    }))
}

/// Normalized regression target: three position components then the unit
/// quaternion.
pub fn regression_target(sample: &PairedSample, params: &NormalizationParams) -> Result<([f64; 3], Quat)> {
    Ok((
        normalize_position(sample.position(), sample.scene_id, params)?,
        sample.pose.orientation(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&v| !(v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios {r:?} must be positive and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<PairedSample>,
    pub val: Vec<PairedSample>,
    pub test: Vec<PairedSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "validation",
            SplitName::Test => "test",
        }
    }
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[PairedSample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Stratified split over original samples; augmented variants follow their
/// source into the same split.
pub fn split_manifest(manifest: &[PairedSample], spec: &SplitSpec) -> Result<Splits> {
    if manifest.is_empty() {
        return Err(Error::invalid("cannot split an empty manifest"));
    }
    spec.validate()?;
    let mut per_scene: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for s in manifest.iter().filter(|s| s.is_original()) {
        per_scene.entry(s.scene_id).or_default().push(s.id);
    }
    let mut assignment: HashMap<u64, SplitName> = HashMap::new();
    for (scene, mut ids) in per_scene {
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (scene as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = ((spec.train * n as f64).round() as usize).min(n);
        let n_val = ((spec.val * n as f64).round() as usize).min(n - n_train);
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_train {
                SplitName::Train
            } else if i < n_train + n_val {
                SplitName::Val
            } else {
                SplitName::Test
            };
            assignment.insert(id, split);
        }
    }
    let mut out = Splits::default();
    for s in manifest {
        let split = assignment.get(&s.source_id()).ok_or_else(|| {
            Error::invalid(format!(
                "sample {} derives from {} which is not an original in the manifest",
                s.id,
                s.source_id()
            ))
        })?;
        match split {
            SplitName::Train => out.train.push(s.clone()),
            SplitName::Val => out.val.push(s.clone()),
            SplitName::Test => out.test.push(s.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(id: u64, scene: usize, p: [f64; 3]) -> PairedSample {
        PairedSample {
            id,
            scene_id: scene,
            rgb_path: format!("rgb/{id}.png").into(),
            pc_path: format!("pc/{id}.png").into(),
            pose: CameraPose::from_yaw(Vector3::new(p[0], p[1], p[2]), id as f64 * 0.1),
            provenance: Provenance::Original,
        }
    }

    fn variant(id: u64, src: &PairedSample) -> PairedSample {
        PairedSample {
            id,
            provenance: Provenance::Augmented {
                source_id: src.id,
                kind: AugmentationKind::Brightness { factor: 0.8 },
            },
            ..src.clone()
        }
    }

    #[test]
    fn two_point_params_and_interior_point() {
        let a = sample(0, 0, [0.0, 0.0, 1.0]);
        let b = sample(1, 0, [2.0, 4.0, 3.0]);
        let p = compute_norm_params(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(p.scenes[&0].p_min, [0.0, 0.0, 1.0]);
        assert_eq!(p.scenes[&0].p_max, [2.0, 4.0, 3.0]);
        let q = compute_norm_params(&[a, b, sample(2, 0, [1.0, 1.0, 2.0])]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn params_match_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..100)
            .map(|i| sample(i, 0, [rng.random_range(-5.0..5.0), rng.random_range(0.0..9.0), rng.random_range(1.0..2.0)]))
            .collect();
        let p = compute_norm_params(&samples).unwrap();
        for a in 0..3 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in &samples {
                let v = s.position()[a];
                if v < lo {
                    lo = v;
                }
                if v > hi {
                    hi = v;
                }
            }
            assert_eq!(p.scenes[&0].p_min[a], lo);
            assert_eq!(p.scenes[&0].p_max[a], hi);
        }
    }

    #[test]
    fn degenerate_axis_is_named() {
        let err = compute_norm_params(&[sample(0, 4, [0.0, 1.0, 1.6]), sample(1, 4, [2.0, 3.0, 1.6])]).unwrap_err();
        assert!(matches!(err, Error::DegenerateAxis { scene_id: 4, axis: 'z' }));
    }

    #[test]
    fn normalization_bounds_and_midpoint() {
        let params = compute_norm_params(&[sample(0, 0, [1.0, 2.0, 3.0]), sample(1, 0, [5.0, 4.0, 4.0])]).unwrap();
        assert_eq!(normalize_position([1.0, 2.0, 3.0], 0, &params).unwrap(), [-1.0; 3]);
        assert_eq!(normalize_position([5.0, 4.0, 4.0], 0, &params).unwrap(), [1.0; 3]);
        assert_eq!(normalize_position([3.0, 3.0, 3.5], 0, &params).unwrap(), [0.0; 3]);
        assert_eq!(denormalize_position([0.0; 3], 0, &params).unwrap(), [3.0, 3.0, 3.5]);
        assert_eq!(denormalize_position([1.0; 3], 0, &params).unwrap(), [5.0, 4.0, 4.0]);
        assert!(matches!(normalize_position([0.0; 3], 7, &params), Err(Error::NotFound(_))));
    }

    proptest! {
        #[test]
        fn round_trip_and_affinity(
            lo in prop::array::uniform3(-50.0f64..50.0),
            span in prop::array::uniform3(0.01f64..40.0),
            p in prop::array::uniform3(-80.0f64..80.0),
            q in prop::array::uniform3(-80.0f64..80.0),
            alpha in 0.0f64..1.0,
        ) {
            let hi = [lo[0] + span[0], lo[1] + span[1], lo[2] + span[2]];
            let params = NormalizationParams {
                scenes: BTreeMap::from([(0, PositionRange { p_min: lo, p_max: hi })]),
            };
            let back = denormalize_position(normalize_position(p, 0, &params).unwrap(), 0, &params).unwrap();
            for a in 0..3 {
                prop_assert!((back[a] - p[a]).abs() < 1e-9);
            }
            let mix: [f64; 3] = std::array::from_fn(|a| alpha * p[a] + (1.0 - alpha) * q[a]);
            let nm = normalize_position(mix, 0, &params).unwrap();
            let np = normalize_position(p, 0, &params).unwrap();
            let nq = normalize_position(q, 0, &params).unwrap();
            for a in 0..3 {
                let expect = alpha * np[a] + (1.0 - alpha) * nq[a];
                prop_assert!((nm[a] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
            }
        }
    }

    fn toy_manifest() -> Vec<PairedSample> {
        let mut out = Vec::new();
        let mut id = 0;
        for scene in 0..3 {
            for k in 0..100 {
                out.push(sample(id, scene, [k as f64, 0.5 * k as f64, 1.0 + 0.01 * k as f64]));
                id += 1;
            }
        }
        let originals = out.clone();
        for src in originals.iter().step_by(4) {
            for _ in 0..16 {
                out.push(variant(id, src));
                id += 1;
            }
        }
        out
    }

    #[test]
    fn stratified_split_without_leakage() {
        let m = toy_manifest();
        let s = split_manifest(&m, &SplitSpec::default()).unwrap();
        for scene in 0..3 {
            let count = |v: &[PairedSample]| v.iter().filter(|x| x.scene_id == scene && x.is_original()).count();
            assert_eq!(count(&s.train), 60);
            assert_eq!(count(&s.val), 20);
            assert_eq!(count(&s.test), 20);
        }
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), m.len());
        let src = |v: &[PairedSample]| v.iter().map(|x| x.source_id()).collect::<std::collections::HashSet<_>>();
        let (a, b, c) = (src(&s.train), src(&s.val), src(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        let again = split_manifest(&m, &SplitSpec::default()).unwrap();
        assert_eq!(s, again);
        assert!(split_manifest(&[], &SplitSpec::default()).is_err());
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let m = toy_manifest();
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);

        let text = std::fs::read_to_string(&path).unwrap();
        let n_lines = text.lines().count();
        let truncated = &text[..text.len() - 20];
        std::fs::write(&path, truncated).unwrap();
        match read_manifest(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, n_lines),
            e => panic!("unexpected {e}"),
        }

        let err = validate_manifest(&m[..1], dir.path()).unwrap_err();
        assert!(matches!(err, Error::ReferentialIntegrity { sample_id: 0, .. }));
    }
}
