//! Camera movement regimes inside a scene: rectangular, spiral, circular,
//! semicircular and random paths, viewed forward, backward or both.
//!
//! All paths are planar at a fixed height. Containment is checked against the
//! scene bounds shrunk horizontally by `margin`; the height must lie strictly
//! between floor and ceiling.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{CameraPose, Quat};
use crate::scene_world::SceneModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Rectangular,
    Spiral,
    Circular,
    Semicircular,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewDirection {
    Forward,
    Backward,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrajectoryRegime {
    pub kind: TrajectoryKind,
    pub direction: ViewDirection,
}

impl TrajectoryRegime {
    pub fn new(kind: TrajectoryKind, direction: ViewDirection) -> Self {
        Self { kind, direction }
    }
}

impl std::fmt::Display for TrajectoryRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let k = serde_json::to_value(self.kind).unwrap_or_default();
        let d = serde_json::to_value(self.direction).unwrap_or_default();
        write!(f, "{}/{}", k.as_str().unwrap_or("?"), d.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    #[serde(default = "default_height")]
    pub height: f64,
    pub step: f64,
    #[serde(default)]
    pub margin: f64,
    #[serde(default)]
    pub turns: Option<u32>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub sample_count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_height() -> f64 {
    1.6
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            height: default_height(),
            step: 0.5,
            margin: 0.5,
            turns: None,
            radius: None,
            sample_count: None,
            seed: 0,
        }
    }
}

/// A path point with its unit direction of travel in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Vector3<f64>,
    pub tangent: Vector2<f64>,
}

struct Area {
    lo: Vector2<f64>,
    hi: Vector2<f64>,
}

impl Area {
    fn center(&self) -> Vector2<f64> {
        (self.lo + self.hi) * 0.5
    }
    fn half(&self) -> Vector2<f64> {
        (self.hi - self.lo) * 0.5
    }
}

fn free_area(scene: &SceneModel, params: &TrajectoryParams) -> Result<Area> {
    if !(params.step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {}", params.step)));
    }
    if !(params.margin >= 0.0) {
        return Err(Error::invalid(format!("margin must be >= 0, got {}", params.margin)));
    }
    let b = &scene.bounds;
    if !(params.height > b.min.z && params.height < b.max.z) {
        return Err(Error::DoesNotFit(format!(
            "height {} outside scene {} z-range ({}, {})",
            params.height, scene.id, b.min.z, b.max.z
        )));
    }
    let lo = Vector2::new(b.min.x + params.margin, b.min.y + params.margin);
    let hi = Vector2::new(b.max.x - params.margin, b.max.y - params.margin);
    if lo.x >= hi.x || lo.y >= hi.y {
        return Err(Error::DoesNotFit(format!(
            "margin {} leaves no free area in scene {}",
            params.margin, scene.id
        )));
    }
    Ok(Area { lo, hi })
}

fn segments(length: f64, step: f64) -> usize {
    ((length / step) - 1e-9).ceil().max(1.0) as usize
}

fn required<T: Copy>(v: Option<T>, what: &str, kind: TrajectoryKind) -> Result<T> {
    v.ok_or_else(|| Error::invalid(format!("{kind:?} trajectory requires `{what}`")))
}

fn radius_for(area: &Area, params: &TrajectoryParams, kind: TrajectoryKind) -> Result<f64> {
    let r = required(params.radius, "radius", kind)?;
    if !(r > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    let half = area.half();
    if r > half.x.min(half.y) {
        return Err(Error::DoesNotFit(format!(
            "radius {r} exceeds the free half-extent {:.3}",
            half.x.min(half.y)
        )));
    }
    Ok(r)
}

fn arc(center: Vector2<f64>, r: f64, theta: f64, h: f64) -> Waypoint {
    let (s, c) = theta.sin_cos();
    Waypoint {
        position: Vector3::new(center.x + r * c, center.y + r * s, h),
        tangent: Vector2::new(-s, c),
    }
}

fn spiral_arc_length(b: f64, theta: f64) -> f64 {
    0.5 * b * (theta * (1.0 + theta * theta).sqrt() + theta.asinh())
}

/// Path points (before orientation is attached) for every regime.
pub fn generate_waypoints(
    scene: &SceneModel,
    kind: TrajectoryKind,
    params: &TrajectoryParams,
) -> Result<Vec<Waypoint>> {
    let area = free_area(scene, params)?;
    let h = params.height;
    let c = area.center();
    let pts = match kind {
        TrajectoryKind::Circular => {
            let r = radius_for(&area, params, kind)?;
            let n = segments(TAU * r, params.step);
            (0..n).map(|k| arc(c, r, TAU * k as f64 / n as f64, h)).collect()
        }
        TrajectoryKind::Semicircular => {
            let r = radius_for(&area, params, kind)?;
            let n = segments(PI * r, params.step);
            (0..=n).map(|k| arc(c, r, PI * k as f64 / n as f64, h)).collect()
        }
        TrajectoryKind::Rectangular => {
            let (w, d) = (area.hi.x - area.lo.x, area.hi.y - area.lo.y);
            let corners = [
                area.lo,
                Vector2::new(area.hi.x, area.lo.y),
                area.hi,
                Vector2::new(area.lo.x, area.hi.y),
            ];
            let lengths = [w, d, w, d];
            let perimeter = 2.0 * (w + d);
            let n = segments(perimeter, params.step);
            (0..n)
                .map(|k| {
                    let mut s = perimeter * k as f64 / n as f64;
                    let mut edge = 0;
                    while edge < 3 && s >= lengths[edge] {
                        s -= lengths[edge];
                        edge += 1;
                    }
                    let a = corners[edge];
                    let dir = (corners[(edge + 1) % 4] - a) / lengths[edge];
                    let p = a + dir * s;
                    Waypoint {
                        position: Vector3::new(p.x, p.y, h),
                        tangent: dir,
                    }
                })
                .collect()
        }
        TrajectoryKind::Spiral => {
            let turns = required(params.turns, "turns", kind)?;
            if turns == 0 {
                return Err(Error::invalid("spiral needs at least one turn"));
            }
            let half = area.half();
            let r_max = half.x.min(half.y);
            let theta_max = TAU * turns as f64;
            let b = r_max / theta_max;
            let total = spiral_arc_length(b, theta_max);
            let n = segments(total, params.step);
            let mut theta = 0.0_f64;
            (0..=n)
                .map(|k| {
                    let target = total * k as f64 / n as f64;
                    // Newton on s(theta) = target; ds/dtheta = b * sqrt(1 + theta^2).
                    for _ in 0..60 {
                        let f = spiral_arc_length(b, theta) - target;
                        let df = b * (1.0 + theta * theta).sqrt();
                        let next = (theta - f / df).clamp(0.0, theta_max);
                        if (next - theta).abs() < 1e-14 {
                            theta = next;
                            break;
                        }
                        theta = next;
                    }
                    let (s, co) = theta.sin_cos();
                    let r = b * theta;
                    let t = Vector2::new(co - theta * s, s + theta * co).normalize();
                    Waypoint {
                        position: Vector3::new(c.x + r * co, c.y + r * s, h),
                        tangent: t,
                    }
                })
                .collect()
        }
        TrajectoryKind::Random => {
            let count = required(params.sample_count, "sample_count", kind)?;
            if count == 0 {
                return Err(Error::invalid("random trajectory needs sample_count >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            (0..count)
                .map(|_| {
                    let x = rng.random_range(area.lo.x..=area.hi.x);
                    let y = rng.random_range(area.lo.y..=area.hi.y);
                    let yaw: f64 = rng.random_range(0.0..TAU);
                    Waypoint {
                        position: Vector3::new(x, y, h),
                        tangent: Vector2::new(yaw.cos(), yaw.sin()),
                    }
                })
                .collect()
        }
    };
    Ok(pts)
}

/// Ordered camera poses along the regime's path. Orientations are yaw-only
/// and follow (forward) or oppose (backward) the direction of travel; `Both`
/// emits each waypoint twice, forward first.
pub fn generate_trajectory(
    scene: &SceneModel,
    regime: TrajectoryRegime,
    params: &TrajectoryParams,
) -> Result<Vec<CameraPose>> {
    let pts = generate_waypoints(scene, regime.kind, params)?;
    let mut out = Vec::with_capacity(pts.len() * 2);
    for wp in pts {
        let yaw = wp.tangent.y.atan2(wp.tangent.x);
        match regime.direction {
            ViewDirection::Forward => out.push(CameraPose::from_yaw(wp.position, yaw)),
            ViewDirection::Backward => out.push(CameraPose::from_yaw(wp.position, yaw + PI)),
            ViewDirection::Both => {
                out.push(CameraPose::from_yaw(wp.position, yaw));
                out.push(CameraPose::from_yaw(wp.position, yaw + PI));
            }
        }
    }
    Ok(out)
}

/// One JSON-lines trajectory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub index: usize,
    pub regime: TrajectoryRegime,
    pub position: [f64; 3],
    pub quaternion: Quat,
}

pub fn write_trajectory_jsonl(
    path: &Path,
    regime: TrajectoryRegime,
    poses: &[CameraPose],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (index, p) in poses.iter().enumerate() {
        let rec = PoseRecord {
            index,
            regime,
            position: [p.position.x, p.position.y, p.position.z],
            quaternion: p.orientation(),
        };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_trajectory_jsonl(path: &Path) -> Result<Vec<PoseRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_world::{build_world, Aabb, Primitive, PrimitiveKind, Shape};

    fn square_scene(side: f64) -> SceneModel {
        let b = Aabb::new(Vector3::zeros(), Vector3::new(side, side, 3.0));
        let floor = |z| Primitive {
            shape: Shape::Plane {
                axis: 2,
                offset: z,
                lo: [0.0, 0.0],
                hi: [side, side],
            },
            color: [0.5; 3],
            kind: PrimitiveKind::Floor,
        };
        SceneModel::new(0, "sq", vec![floor(0.0), floor(3.0), floor(0.0), floor(3.0)], b, 0.5)
            .unwrap()
    }

    fn forward_angle_to(pose: &CameraPose, t: Vector2<f64>) -> f64 {
        let f = pose.forward();
        let f2 = Vector2::new(f.x, f.y).normalize();
        f2.dot(&t.normalize()).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn circle_sixteen_tangent_poses() {
        let scene = square_scene(6.0);
        let params = TrajectoryParams {
            radius: Some(2.0),
            step: PI / 8.0 * 2.0,
            margin: 0.5,
            ..Default::default()
        };
        let regime = TrajectoryRegime::new(TrajectoryKind::Circular, ViewDirection::Forward);
        let poses = generate_trajectory(&scene, regime, &params).unwrap();
        assert_eq!(poses.len(), 16);
        let c = Vector2::new(3.0, 3.0);
        for (k, p) in poses.iter().enumerate() {
            let rel = Vector2::new(p.position.x, p.position.y) - c;
            assert!((rel.norm() - 2.0).abs() < 1e-12);
            let theta = TAU * k as f64 / 16.0;
            assert!((rel.y.atan2(rel.x).rem_euclid(TAU) - theta).abs() < 1e-9);
            // analytic tangent: perpendicular to the radius, counterclockwise
            let t = Vector2::new(-rel.y, rel.x);
            assert!(forward_angle_to(p, t) < 1e-6);
        }
    }

    #[test]
    fn rectangle_perimeter_waypoints() {
        let scene = square_scene(4.0);
        let params = TrajectoryParams {
            step: 0.5,
            margin: 0.5,
            ..Default::default()
        };
        let regime = TrajectoryRegime::new(TrajectoryKind::Rectangular, ViewDirection::Backward);
        let poses = generate_trajectory(&scene, regime, &params).unwrap();
        assert_eq!(poses.len(), 24);
        for w in poses.windows(2) {
            assert!((w[1].position - w[0].position).norm() <= 0.5 + 1e-12);
        }
        for p in &poses {
            let (x, y) = (p.position.x, p.position.y);
            // edge-wise tangent of the counterclockwise loop
            let t = if (y - 0.5).abs() < 1e-12 && x < 3.5 - 1e-12 {
                Vector2::new(1.0, 0.0)
            } else if (x - 3.5).abs() < 1e-12 && y < 3.5 - 1e-12 {
                Vector2::new(0.0, 1.0)
            } else if (y - 3.5).abs() < 1e-12 && x > 0.5 + 1e-12 {
                Vector2::new(-1.0, 0.0)
            } else {
                Vector2::new(0.0, -1.0)
            };
            assert!((forward_angle_to(p, t) - PI).abs() < 1e-6);
        }
    }

    #[test]
    fn random_regime_is_contained_and_reproducible() {
        let world = build_world(2, 3, 12.0).unwrap();
        let scene = &world.scenes[2];
        let params = TrajectoryParams {
            sample_count: Some(100),
            seed: 42,
            margin: 0.8,
            ..Default::default()
        };
        let regime = TrajectoryRegime::new(TrajectoryKind::Random, ViewDirection::Forward);
        let a = generate_trajectory(scene, regime, &params).unwrap();
        let b = generate_trajectory(scene, regime, &params).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        for p in &a {
            assert!(p.position.x >= scene.bounds.min.x + 0.8 && p.position.x <= scene.bounds.max.x - 0.8);
            assert!(p.position.y >= scene.bounds.min.y + 0.8 && p.position.y <= scene.bounds.max.y - 0.8);
        }
    }

    #[test]
    fn spiral_and_semicircle_follow_tangent_and_step() {
        let scene = square_scene(6.0);
        let params = TrajectoryParams {
            turns: Some(2),
            radius: Some(2.0),
            step: 0.3,
            margin: 0.5,
            ..Default::default()
        };
        for kind in [TrajectoryKind::Spiral, TrajectoryKind::Semicircular] {
            let wps = generate_waypoints(&scene, kind, &params).unwrap();
            let poses = generate_trajectory(&scene, TrajectoryRegime::new(kind, ViewDirection::Both), &params).unwrap();
            assert_eq!(poses.len(), 2 * wps.len());
            for w in wps.windows(2) {
                assert!((w[1].position - w[0].position).norm() <= 0.3 + 1e-9);
            }
            for (i, wp) in wps.iter().enumerate() {
                // central-difference tangent as the independent check, away
                // from the high-curvature spiral start and the path ends
                if i >= 3 && i + 1 < wps.len() {
                    let d = wps[i + 1].position - wps[i - 1].position;
                    assert!(Vector2::new(d.x, d.y).normalize().dot(&wp.tangent) > 0.95);
                }
                assert!(forward_angle_to(&poses[2 * i], wp.tangent) < 1e-6);
                assert!((forward_angle_to(&poses[2 * i + 1], wp.tangent) - PI).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let scene = square_scene(4.0);
        let circ = TrajectoryRegime::new(TrajectoryKind::Circular, ViewDirection::Forward);
        let no_radius = TrajectoryParams::default();
        assert!(matches!(generate_trajectory(&scene, circ, &no_radius), Err(Error::InvalidArgument(_))));
        let huge = TrajectoryParams { radius: Some(3.0), ..Default::default() };
        assert!(matches!(generate_trajectory(&scene, circ, &huge), Err(Error::DoesNotFit(_))));
        let fat_margin = TrajectoryParams { margin: 2.5, radius: Some(0.1), ..Default::default() };
        assert!(matches!(generate_trajectory(&scene, circ, &fat_margin), Err(Error::DoesNotFit(_))));
        let zero_step = TrajectoryParams { step: 0.0, radius: Some(1.0), ..Default::default() };
        assert!(matches!(generate_trajectory(&scene, circ, &zero_step), Err(Error::InvalidArgument(_))));
        let rnd = TrajectoryRegime::new(TrajectoryKind::Random, ViewDirection::Forward);
        assert!(generate_trajectory(&scene, rnd, &TrajectoryParams::default()).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let scene = square_scene(6.0);
        let regime = TrajectoryRegime::new(TrajectoryKind::Circular, ViewDirection::Both);
        let params = TrajectoryParams { radius: Some(1.5), ..Default::default() };
        let poses = generate_trajectory(&scene, regime, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trajectory_jsonl(&path, regime, &poses).unwrap();
        let back = read_trajectory_jsonl(&path).unwrap();
        assert_eq!(back.len(), poses.len());
        assert_eq!(back[3].quaternion, poses[3].orientation());
        assert_eq!(back[3].regime, regime);
    }
}
