//! Classification and pose metrics, occlusion robustness and model
//! comparison tables.

mod disruption;
mod metrics;
pub mod plots;
mod report;

pub use disruption::{disruption_test, regression_report, ModelKind, PoseModel, Upstream};
pub use metrics::{
    classification_from_logits, classification_report, classifier_logits, quat_angle_deg, regression_metrics,
    ClassificationReport, ConfusionMatrix, RegressionReport,
};
pub use report::{compare_models, ClassificationSummary, ComparisonTable, EvalReport};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PairedSample, PositionRange, Provenance};
    use crate::image::Image;
    use crate::models::{build_pix2pix, build_regressor_branch, fuse_branches, BackboneConfig, FusedInit, Modality};
    use crate::models::Pix2PixConfig;
    use crate::pose::CameraPose;
    use crate::training::{reconstruct_point_clouds, SplitData};
    use crate::dataset::NormalizationParams;
    use nalgebra::Vector3;
    use std::collections::BTreeMap;

    fn split(n: usize) -> (SplitData, NormalizationParams) {
        let samples: Vec<PairedSample> = (0..n)
            .map(|i| PairedSample {
                id: i as u64,
                scene_id: i % 2,
                rgb_path: "r.png".into(),
                pc_path: "p.png".into(),
                pose: CameraPose::from_yaw(Vector3::new(i as f64 * 0.1, 0.5, 1.5), i as f64),
                provenance: Provenance::Original,
            })
            .collect();
        let rgb = (0..n).map(|i| Image::new(64, 64, [i as f32 / n as f32, 0.3, 0.6])).collect();
        let mut scenes = BTreeMap::new();
        for s in 0..2 {
            scenes.insert(s, PositionRange { p_min: [0.0, 0.0, 1.0], p_max: [1.0, 1.0, 2.0] });
        }
        (SplitData::from_images(samples, Some(rgb), None).unwrap(), NormalizationParams { scenes })
    }

    #[test]
    fn zero_occluder_disruption_matches_plain_loss() {
        let cfg = BackboneConfig {
            input_size: 64,
            head_units: vec![16, 8],
            ..BackboneConfig::default()
        };
        let (data, norm) = split(6);
        let rgb = build_regressor_branch(&cfg, Modality::Rgb, 0).unwrap();
        let pc = build_regressor_branch(&cfg, Modality::PointCloud, 1).unwrap();
        let fused = fuse_branches(&rgb, &pc, FusedInit::Fresh, 2).unwrap();
        let gen = build_pix2pix(
            &Pix2PixConfig {
                input_size: 64,
                generator_filters: 4,
                discriminator_filters: 4,
                ..Pix2PixConfig::default()
            },
            3,
        )
        .unwrap()
        .generator;
        let up = Upstream { classifier: None, generator: Some(&gen) };

        let plain = regression_report(PoseModel::Branch(&rgb), &data, &norm, 1.0, 4).unwrap();
        let d = disruption_test(PoseModel::Branch(&rgb), &data, up, &norm, 1.0, 4).unwrap();
        assert_eq!(plain.loss.to_bits(), d.loss.to_bits());

        let recon = reconstruct_point_clouds(&gen, &data, 4).unwrap();
        let all: Vec<usize> = (0..data.len()).collect();
        let with_pc = data.subset(&all).unwrap().with_pc(recon).unwrap();
        let plain = regression_report(PoseModel::Fused(&fused), &with_pc, &norm, 1.0, 4).unwrap();
        let d1 = disruption_test(PoseModel::Fused(&fused), &data, up, &norm, 1.0, 4).unwrap();
        let d2 = disruption_test(PoseModel::Fused(&fused), &data, up, &norm, 1.0, 4).unwrap();
        assert_eq!(plain.loss.to_bits(), d1.loss.to_bits());
        assert_eq!(d1, d2);

        assert!(disruption_test(PoseModel::Branch(&pc), &data, Upstream::default(), &norm, 1.0, 4).is_err());
        assert_eq!(PoseModel::Branch(&pc).kind(), ModelKind::PointCloud);
    }
}
