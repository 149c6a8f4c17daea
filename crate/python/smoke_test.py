"""Smoke test for the aps_py extension module.

Build and install first:
    maturin build -m crates/py/Cargo.toml -o dist
    pip install dist/aps_py-*.whl
then run:
    python python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import aps_py

TINY = """
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
kind = "circular"
direction = "forward"
height = 1.8
step = 1.0
margin = 0.6
radius = 0.6

[augmentation]
brightness_levels = [1.3]
mask_subsample = 0.0

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
"""


def check_math():
    lo, hi = [0.0, -1.0, 2.0], [4.0, 1.0, 3.0]
    p = [1.0, 0.25, 2.9]
    back = aps_py.denormalize(aps_py.normalize(p, lo, hi), lo, hi)
    assert all(abs(a - b) < 1e-12 for a, b in zip(back, p))
    assert aps_py.normalize(lo, lo, hi) == [-1.0, -1.0, -1.0]

    q = [0.5, 0.5, -0.5, 0.5]
    assert aps_py.pose_loss(p, q, p, [2 * v for v in q]) == 0.0
    assert aps_py.quat_angle_deg(q, [-v for v in q]) == 0.0
    half = math.sqrt(0.5)
    assert abs(aps_py.quat_angle_deg([1, 0, 0, 0], [half, 0, 0, half]) - 90.0) < 1e-9

    cm = aps_py.confusion_matrix([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert cm["counts"] == [[1, 1], [0, 2]]
    assert cm["accuracy"] == cm["trace"] / cm["total"] == 0.75


def check_rendering(tmp):
    world = aps_py.World(3, 2, 8.0)
    assert world.scene_count == 2
    lo, hi = world.scene_bounds(0)
    center = [(a + b) / 2 for a, b in zip(lo, hi)]
    center[2] = 1.5
    rgb = world.render_rgb(0, center, [1.0, 0.0, 0.0, 0.0], 64)
    pc = world.render_pointcloud(0, center, [1.0, 0.0, 0.0, 0.0], 64)
    assert (rgb.width, rgb.height) == (64, 64)
    assert any(v > 0 for v in rgb.to_list())
    path = tmp / "pc.png"
    pc.save(str(path), sixteen_bit=True)
    again = aps_py.Image.load(str(path))
    assert max(abs(a - b) for a, b in zip(again.to_list(), pc.to_list())) <= 1 / 65535


def check_pipeline(tmp):
    try:
        aps_py.Config.from_toml(TINY.replace("height = 64", "height = 48"))
    except aps_py.ConfigError:
        pass
    else:
        raise AssertionError("non-square render accepted")

    cfg = aps_py.Config.from_toml(TINY, [f'output_dir = "{tmp / "run"}"'])
    assert cfg.run_dir == str(tmp / "run") or Path(cfg.run_dir) == tmp / "run"
    try:
        aps_py.run_stage(cfg, "augment")
    except aps_py.DependencyError:
        pass
    else:
        raise AssertionError("augment ran without generate")

    results = aps_py.run_all(cfg)
    assert [s for s, _ in results] == aps_py.stages()
    assert all(o == "ran" for _, o in results)
    assert aps_py.run_stage(cfg, "generate") == "up-to-date"

    bundle = aps_py.Bundle.load(str(tmp / "run" / "evaluate" / "bundle"))
    assert bundle.scene_count == 2 and bundle.input_size == 64
    image = next((tmp / "run" / "generate" / "images" / "rgb").glob("*.png"))
    r = bundle.localize(str(image))
    assert r["scene_id"] in (0, 1)
    assert abs(sum(v * v for v in r["quaternion"]) - 1.0) < 1e-9
    forced = bundle.localize(str(image), scene_id=1)
    assert forced["scene_id"] == 1


def main():
    check_math()
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d)
        check_rendering(tmp)
        check_pipeline(tmp)
    print("aps_py smoke test passed")


if __name__ == "__main__":
    main()
