use std::fmt::Write as _;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataset::{denormalize_position, normalize_position, NormalizationParams, PairedSample};
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, Ctx};
use crate::pose::{quat_norm, Quat};
use crate::training::{pose_loss, PosePrediction, SplitData};

/// Rotation angle between two orientations in degrees, treating `q` and
/// `-q` as the same rotation. Inputs need not be unit length.
///
/// Evaluated as `4 atan2(|a - b|, |a + b|)` on the unit quaternions with `b`
/// sign-aligned to `a`, which equals `2 acos(|<a, b>|)` but stays accurate
/// for small angles.
pub fn quat_angle_deg(q1: &Quat, q2: &Quat) -> Result<f64> {
    let (n1, n2) = (quat_norm(q1), quat_norm(q2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidQuaternion("zero quaternion in angle".into()));
    }
    let a: Quat = std::array::from_fn(|i| q1[i] / n1);
    let mut b: Quat = std::array::from_fn(|i| q2[i] / n2);
    if (0..4).map(|i| a[i] * b[i]).sum::<f64>() < 0.0 {
        b = b.map(|v| -v);
    }
    let diff = (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
    let sum = (0..4).map(|i| (a[i] + b[i]).powi(2)).sum::<f64>().sqrt();
    Ok(4.0 * diff.atan2(sum).to_degrees())
}

/// Rows are true scenes, columns predicted scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], scene_count: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0u64; scene_count]; scene_count];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= scene_count || p >= scene_count {
                return Err(Error::OutOfBounds(format!("label {t}/{p} outside 0..{scene_count}")));
            }
            counts[t][p] += 1;
        }
        let labels = (0..scene_count).map(|i| format!("scene {i}")).collect();
        Ok(Self { counts, labels })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.labels {
            write!(s, ",{l}").unwrap();
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            s.push_str(l);
            for c in row {
                write!(s, ",{c}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Mean categorical cross-entropy.
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

/// Accuracy, cross-entropy and confusion matrix from raw logits.
pub fn classification_from_logits(logits: &[Vec<f64>], truth: &[usize], scene_count: usize) -> Result<ClassificationReport> {
    if logits.is_empty() {
        return Err(Error::invalid("empty split"));
    }
    if logits.len() != truth.len() {
        return Err(Error::invalid(format!("{} logit rows for {} labels", logits.len(), truth.len())));
    }
    let mut predicted = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    for (row, &t) in logits.iter().zip(truth) {
        if row.len() != scene_count || t >= scene_count {
            return Err(Error::invalid(format!("logit row of {} for {scene_count} scenes", row.len())));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        predicted.push(best);
    }
    let confusion = ConfusionMatrix::from_predictions(truth, &predicted, scene_count)?;
    Ok(ClassificationReport {
        accuracy: confusion.accuracy(),
        loss: loss / logits.len() as f64,
        confusion,
    })
}

pub fn classifier_logits(model: &ClassifierModel, split: &SplitData, batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(split.len());
    let n = split.len();
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + batch.max(1)).min(n)).collect();
        let l: Tensor = model.logits(&split.rgb_input(&idx)?, &mut Ctx::eval())?;
        out.extend(l.to_vec2::<f32>()?.into_iter().map(|r| r.into_iter().map(f64::from).collect::<Vec<_>>()));
        start += batch.max(1);
    }
    Ok(out)
}

pub fn classification_report(model: &ClassifierModel, split: &SplitData, batch: usize) -> Result<ClassificationReport> {
    if split.is_empty() {
        return Err(Error::invalid("empty split"));
    }
    let logits = classifier_logits(model, split, batch)?;
    let truth: Vec<usize> = split.samples().iter().map(|s| s.scene_id).collect();
    classification_from_logits(&logits, &truth, model.scene_count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    /// Mean pose loss on normalized targets.
    pub loss: f64,
    pub position_loss: f64,
    pub quaternion_loss: f64,
    /// Mean absolute world-space error per axis, millimetres.
    pub mae_mm: [f64; 3],
    /// Mean rotation angle error, degrees.
    pub quat_deg: f64,
    pub count: usize,
}

/// Scores predictions against `samples`. `decode_scenes[i]` names the scene
/// whose normalization decodes prediction `i`; when it differs from the true
/// scene the decoded world position is re-encoded with the true scene's
/// params before the loss is taken.
pub fn regression_metrics(
    predictions: &[PosePrediction],
    decode_scenes: Option<&[usize]>,
    samples: &[PairedSample],
    norm: &NormalizationParams,
    beta: f64,
) -> Result<RegressionReport> {
    if samples.is_empty() {
        return Err(Error::invalid("empty split"));
    }
    if predictions.len() != samples.len() || decode_scenes.is_some_and(|d| d.len() != samples.len()) {
        return Err(Error::invalid(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let mut r = RegressionReport {
        loss: 0.0,
        position_loss: 0.0,
        quaternion_loss: 0.0,
        mae_mm: [0.0; 3],
        quat_deg: 0.0,
        count: samples.len(),
    };
    for (i, (pred, s)) in predictions.iter().zip(samples).enumerate() {
        let decode = decode_scenes.map_or(s.scene_id, |d| d[i]);
        let world = denormalize_position(pred.position, decode, norm)?;
        let p_hat = if decode == s.scene_id {
            pred.position
        } else {
            normalize_position(world, s.scene_id, norm)?
        };
        let p = normalize_position(s.position(), s.scene_id, norm)?;
        let q = s.pose.orientation();
        let total = pose_loss(p_hat, pred.quaternion, p, q, beta)?;
        r.loss += total;
        r.position_loss += (0..3).map(|a| (p[a] - p_hat[a]).powi(2)).sum::<f64>().sqrt();
        r.quaternion_loss += pose_loss(p, pred.quaternion, p, q, beta)?;
        let truth = denormalize_position(p, s.scene_id, norm)?;
        for a in 0..3 {
            r.mae_mm[a] += (world[a] - truth[a]).abs() * 1000.0;
        }
        r.quat_deg += if quat_norm(&pred.quaternion) == 0.0 {
            180.0
        } else {
            quat_angle_deg(&pred.quaternion, &q)?
        };
    }
    let n = samples.len() as f64;
    r.loss /= n;
    r.position_loss /= n;
    r.quaternion_loss /= n;
    r.quat_deg /= n;
    for a in 0..3 {
        r.mae_mm[a] /= n;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PositionRange, Provenance};
    use crate::pose::CameraPose;
    use nalgebra::Vector3;
    use std::collections::BTreeMap;

    #[test]
    fn angle_examples() {
        let id = [1.0, 0.0, 0.0, 0.0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(quat_angle_deg(&id, &id).unwrap(), 0.0);
        assert_eq!(quat_angle_deg(&id, &[-1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((quat_angle_deg(&id, &[h, 0.0, 0.0, h]).unwrap() - 90.0).abs() < 1e-9);
        assert!(matches!(quat_angle_deg(&id, &[0.0; 4]), Err(Error::InvalidQuaternion(_))));
    }

    #[test]
    fn confusion_invariants() {
        let truth = [0, 0, 1, 2, 2, 2];
        let pred = [0, 1, 1, 2, 0, 2];
        let m = ConfusionMatrix::from_predictions(&truth, &pred, 3).unwrap();
        assert_eq!(m.row_sums(), vec![2, 1, 3]);
        assert_eq!(m.trace(), 4);
        assert_eq!(m.accuracy(), 4.0 / 6.0);
        assert!(m.to_csv().starts_with("true\\predicted,scene 0"));
        assert!(ConfusionMatrix::from_predictions(&[3], &[0], 3).is_err());
    }

    #[test]
    fn perfect_logits_give_identity_matrix() {
        let truth = [0, 1, 2, 1];
        let logits: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| (0..3).map(|i| if i == t { 20.0 } else { 0.0 }).collect())
            .collect();
        let r = classification_from_logits(&logits, &truth, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.loss < 1e-8);
        assert_eq!(r.confusion.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        let uniform = vec![vec![0.0; 3]; 4];
        let r = classification_from_logits(&uniform, &truth, 3).unwrap();
        assert!((r.loss - 3f64.ln()).abs() < 1e-12);
        assert!(classification_from_logits(&[], &[], 3).is_err());
    }

    fn sample(scene: usize, p: [f64; 3]) -> PairedSample {
        PairedSample {
            id: 0,
            scene_id: scene,
            rgb_path: "a.png".into(),
            pc_path: "b.png".into(),
            pose: CameraPose::from_yaw(Vector3::from(p), 0.3),
            provenance: Provenance::Original,
        }
    }

    fn params() -> NormalizationParams {
        let mut scenes = BTreeMap::new();
        scenes.insert(0, PositionRange { p_min: [0.0; 3], p_max: [2.0; 3] });
        scenes.insert(1, PositionRange { p_min: [10.0; 3], p_max: [11.0; 3] });
        NormalizationParams { scenes }
    }

    #[test]
    fn regression_perfect_and_offset() {
        let norm = params();
        let s = sample(0, [1.0, 0.5, 1.5]);
        let exact = PosePrediction {
            position: normalize_position(s.position(), 0, &norm).unwrap(),
            quaternion: s.pose.orientation(),
        };
        let r = regression_metrics(&[exact], None, std::slice::from_ref(&s), &norm, 1.0).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.mae_mm, [0.0; 3]);
        assert_eq!(r.quat_deg, 0.0);

        let off = PosePrediction {
            position: normalize_position([1.001, 0.502, 1.5], 0, &norm).unwrap(),
            quaternion: s.pose.orientation(),
        };
        let r = regression_metrics(&[off], None, std::slice::from_ref(&s), &norm, 1.0).unwrap();
        assert!((r.mae_mm[0] - 1.0).abs() < 1e-6);
        assert!((r.mae_mm[1] - 2.0).abs() < 1e-6);
        assert!(r.mae_mm[2].abs() < 1e-9);
    }

    #[test]
    fn wrong_decode_scene_costs_position() {
        let norm = params();
        let s = sample(0, [1.0, 1.0, 1.0]);
        let pred = PosePrediction {
            position: [0.0; 3],
            quaternion: s.pose.orientation(),
        };
        let right = regression_metrics(&[pred], Some(&[0]), std::slice::from_ref(&s), &norm, 1.0).unwrap();
        let wrong = regression_metrics(&[pred], Some(&[1]), std::slice::from_ref(&s), &norm, 1.0).unwrap();
        assert_eq!(right.loss, 0.0);
        // decoded at (10.5, 10.5, 10.5), 9.5 m off per axis
        assert!((wrong.mae_mm[0] - 9500.0).abs() < 1e-6);
        assert!((wrong.position_loss - 3f64.sqrt() * 9.5).abs() < 1e-9);
    }
}
