#![allow(dead_code)]

use std::path::Path;

use aps_core::orchestration::ExperimentConfig;

/// Two small rooms, 64 px renders and single-epoch training.
pub const TINY: &str = r#"
output_dir = "unused"

[world]
seed = 1
scene_count = 2
extent = 8.0

[render]
width = 64
height = 64
vertical_fov = 60.0
brightness = 1.0
background = [0.0, 0.0, 0.0]

[[trajectories]]
kind = "circular"
direction = "both"
height = 1.5
step = 1.0
margin = 0.6
radius = 0.8

[[trajectories]]
kind = "random"
direction = "forward"
height = 1.8
step = 1.0
margin = 0.6
sample_count = 6

[augmentation]
brightness_levels = [1.3]
mask_subsample = 0.1

[models.classifier]
input_size = 64
width_multiplier = 0.25
depth_multiplier = 0.25
head_units = [16, 8]
dropconnect_rate = 0.0
dropout_rate = 0.0
batch_norm = true

[models.rgb_branch]
input_size = 64
width_multiplier = 0.25
depth_multiplier = 0.25
head_units = [16, 8]
dropconnect_rate = 0.0
dropout_rate = 0.0
batch_norm = true

[models.pc_branch]
input_size = 64
width_multiplier = 0.25
depth_multiplier = 0.25
head_units = [16, 8]
dropconnect_rate = 0.0
dropout_rate = 0.0
batch_norm = true

[models.pix2pix]
input_size = 64
generator_filters = 4
discriminator_filters = 4
l1_weight = 100.0
dropout_rate = 0.0

[training.classifier]
epochs = 1
batch_size = 8
learning_rate = 0.001
early_metric = "val_accuracy"

[training.pix2pix]
epochs = 1
batch_size = 8
learning_rate = 0.0002
early_metric = "val_l1"

[training.branch]
epochs = 1
batch_size = 8
learning_rate = 0.001
early_metric = "val_loss"

[training.fused]
epochs = 1
batch_size = 8
learning_rate = 0.001
early_metric = "val_loss"

[disruption]
occluders_per_scene = 2
size_range = [0.3, 0.6]
"#;

pub fn tiny_config(dir: &Path, overrides: &[&str]) -> ExperimentConfig {
    let mut o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    o.push(format!("output_dir = {:?}", dir.to_string_lossy()));
    ExperimentConfig::from_toml_with_overrides(TINY, &o).expect("tiny config is valid")
}
