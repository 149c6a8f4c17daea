//! Procedural multi-scene indoor world and its RGB / point-cloud renderers.
//!
//! Each scene is an axis-aligned room (floor, ceiling, four walls) with a
//! handful of furniture boxes placed against the walls. Scenes are laid out
//! on a grid inside the world footprint. Every scene carries a vertex cloud
//! sampled from its primitive surfaces, which the point-cloud renderer splats.

mod geometry;
mod render;

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{Aabb, Color, Hit, Primitive, PrimitiveKind, Shape, Vertex};
pub use render::{
    decode_point, encode_point, render_pointcloud, render_pointcloud_indexed, render_rgb,
    PinholeCamera, RenderSettings,
};

pub const ROOM_HEIGHT: f64 = 3.0;
pub const DEFAULT_VERTEX_SPACING: f64 = 0.1;
pub const WORLD_FORMAT_VERSION: u32 = 1;

const OCCLUDER_ATTEMPTS: usize = 2000;
const OCCLUDER_CLEARANCE: f64 = 0.3;
const UNSEEN_COLOR_DISTANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub id: usize,
    pub name: String,
    pub primitives: Vec<Primitive>,
    pub vertex_cloud: Vec<Vertex>,
    pub bounds: Aabb,
}

impl SceneModel {
    /// Builds a scene and samples its vertex cloud from the primitive surfaces.
    pub fn new(
        id: usize,
        name: impl Into<String>,
        primitives: Vec<Primitive>,
        bounds: Aabb,
        vertex_spacing: f64,
    ) -> Result<Self> {
        if primitives.len() < 4 {
            return Err(Error::invalid(format!(
                "scene {id} needs at least 4 primitives, got {}",
                primitives.len()
            )));
        }
        if !(vertex_spacing > 0.0) {
            return Err(Error::invalid("vertex spacing must be positive"));
        }
        let vertex_cloud = primitives
            .iter()
            .flat_map(|p| p.sample_surface(vertex_spacing))
            .collect();
        Ok(Self {
            id,
            name: name.into(),
            primitives,
            vertex_cloud,
            bounds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub scenes: Vec<SceneModel>,
    pub world_bounds: Aabb,
    pub seed: u64,
    pub vertex_spacing: f64,
}

impl WorldModel {
    pub fn new(
        scenes: Vec<SceneModel>,
        world_bounds: Aabb,
        seed: u64,
        vertex_spacing: f64,
    ) -> Result<Self> {
        if scenes.len() < 2 {
            return Err(Error::invalid("a world needs at least two scenes"));
        }
        for (i, s) in scenes.iter().enumerate() {
            if s.id != i {
                return Err(Error::invalid(format!(
                    "scene ids must be 0..N-1 in order; position {i} has id {}",
                    s.id
                )));
            }
            if !world_bounds.contains_box(&s.bounds) {
                return Err(Error::invalid(format!(
                    "scene {i} bounds exceed the world bounds"
                )));
            }
        }
        Ok(Self {
            scenes,
            world_bounds,
            seed,
            vertex_spacing,
        })
    }

    pub fn scene(&self, id: usize) -> Result<&SceneModel> {
        self.scenes
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("scene {id} (world has {})", self.scenes.len())))
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    pub fn to_document(&self) -> WorldDocument {
        WorldDocument {
            version: WORLD_FORMAT_VERSION,
            seed: self.seed,
            bounds: self.world_bounds,
            vertex_spacing: self.vertex_spacing,
            scenes: self
                .scenes
                .iter()
                .map(|s| SceneDocument {
                    id: s.id,
                    name: s.name.clone(),
                    bounds: s.bounds,
                    primitives: s.primitives.clone(),
                    vertex_count: s.vertex_cloud.len(),
                })
                .collect(),
        }
    }

    /// Rebuilds the world (including vertex clouds) from its document form.
    pub fn from_document(doc: &WorldDocument) -> Result<Self> {
        if doc.version != WORLD_FORMAT_VERSION {
            return Err(Error::Decode(format!(
                "unsupported world document version {}",
                doc.version
            )));
        }
        let scenes = doc
            .scenes
            .iter()
            .map(|s| {
                let scene = SceneModel::new(
                    s.id,
                    s.name.clone(),
                    s.primitives.clone(),
                    s.bounds,
                    doc.vertex_spacing,
                )?;
                if scene.vertex_cloud.len() != s.vertex_count {
                    return Err(Error::Decode(format!(
                        "scene {} regenerated {} vertices, document records {}",
                        s.id,
                        scene.vertex_cloud.len(),
                        s.vertex_count
                    )));
                }
                Ok(scene)
            })
            .collect::<Result<Vec<_>>>()?;
        WorldModel::new(scenes, doc.bounds, doc.seed, doc.vertex_spacing)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: WorldDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_document(&doc)
    }

    fn colors(&self) -> impl Iterator<Item = &Color> {
        self.scenes
            .iter()
            .flat_map(|s| s.primitives.iter().map(|p| &p.color))
    }
}

/// Versioned on-disk form of a [`WorldModel`] (`world.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDocument {
    pub version: u32,
    pub seed: u64,
    pub bounds: Aabb,
    pub vertex_spacing: f64,
    pub scenes: Vec<SceneDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub id: usize,
    pub name: String,
    pub bounds: Aabb,
    pub primitives: Vec<Primitive>,
    pub vertex_count: usize,
}

fn hsv(h: f64, s: f64, v: f64) -> Color {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn plane(axis: usize, offset: f64, lo: [f64; 2], hi: [f64; 2], color: Color, kind: PrimitiveKind) -> Primitive {
    Primitive {
        shape: Shape::Plane { axis, offset, lo, hi },
        color,
        kind,
    }
}

/// Floor, ceiling and the four walls of `room`.
fn room_shell(room: &Aabb, wall_colors: [Color; 4], floor: Color, ceiling: Color) -> Vec<Primitive> {
    let (mn, mx) = (room.min, room.max);
    vec![
        plane(2, mn.z, [mn.x, mn.y], [mx.x, mx.y], floor, PrimitiveKind::Floor),
        plane(2, mx.z, [mn.x, mn.y], [mx.x, mx.y], ceiling, PrimitiveKind::Ceiling),
        plane(0, mn.x, [mn.y, mn.z], [mx.y, mx.z], wall_colors[0], PrimitiveKind::Wall),
        plane(0, mx.x, [mn.y, mn.z], [mx.y, mx.z], wall_colors[1], PrimitiveKind::Wall),
        plane(1, mn.y, [mn.x, mn.z], [mx.x, mx.z], wall_colors[2], PrimitiveKind::Wall),
        plane(1, mx.y, [mn.x, mn.z], [mx.x, mx.z], wall_colors[3], PrimitiveKind::Wall),
    ]
}

/// Furniture boxes standing against the room walls, pairwise non-overlapping.
fn place_furniture(rng: &mut ChaCha8Rng, room: &Aabb, hue: f64) -> Vec<Primitive> {
    let count = rng.random_range(2..=4);
    let size = room.size();
    let mut boxes: Vec<Aabb> = Vec::new();
    let mut tries = 0;
    while boxes.len() < count && tries < 200 {
        tries += 1;
        let depth = rng.random_range(0.3..0.6);
        let length = rng.random_range(0.6..(0.45 * size.x.min(size.y)).max(0.7));
        let height = rng.random_range(0.5..1.6);
        let wall = rng.random_range(0..4);
        let (ex, ey) = if wall < 2 { (depth, length) } else { (length, depth) };
        if ex >= size.x || ey >= size.y {
            continue;
        }
        let x = match wall {
            0 => room.min.x,
            1 => room.max.x - ex,
            _ => rng.random_range(room.min.x..room.max.x - ex),
        };
        let y = match wall {
            2 => room.min.y,
            3 => room.max.y - ey,
            _ => rng.random_range(room.min.y..room.max.y - ey),
        };
        let b = Aabb::new(
            Vector3::new(x, y, room.min.z),
            Vector3::new(x + ex, y + ey, room.min.z + height),
        );
        if boxes.iter().any(|o| o.expanded(0.1).overlaps(&b)) {
            continue;
        }
        boxes.push(b);
    }
    boxes
        .into_iter()
        .map(|b| Primitive {
            shape: Shape::Cuboid(b),
            color: hsv(
                hue + rng.random_range(0.3..0.7),
                rng.random_range(0.5..0.9),
                rng.random_range(0.4..0.9),
            ),
            kind: PrimitiveKind::Furniture,
        })
        .collect()
}

/// Procedurally builds `scene_count` rooms on a grid covering an
/// `extent x extent` footprint.
pub fn build_world(seed: u64, scene_count: usize, extent: f64) -> Result<WorldModel> {
    build_world_with_spacing(seed, scene_count, extent, DEFAULT_VERTEX_SPACING)
}

pub fn build_world_with_spacing(
    seed: u64,
    scene_count: usize,
    extent: f64,
    vertex_spacing: f64,
) -> Result<WorldModel> {
    if scene_count < 2 {
        return Err(Error::invalid(format!("scene_count must be >= 2, got {scene_count}")));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::invalid(format!("extent must be positive, got {extent}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (scene_count as f64).sqrt().ceil() as usize;
    let rows = scene_count.div_ceil(cols);
    let cell = Vector3::new(extent / cols as f64, extent / rows as f64, ROOM_HEIGHT);
    let world_bounds = Aabb::new(Vector3::zeros(), Vector3::new(extent, extent, ROOM_HEIGHT));

    let mut scenes = Vec::with_capacity(scene_count);
    for id in 0..scene_count {
        let (c, r) = (id % cols, id / cols);
        let fx = rng.random_range(0.75..1.0);
        let fy = rng.random_range(0.75..1.0);
        let (w, d) = (cell.x * fx, cell.y * fy);
        let x0 = c as f64 * cell.x + rng.random_range(0.0..=(cell.x - w));
        let y0 = r as f64 * cell.y + rng.random_range(0.0..=(cell.y - d));
        let room = Aabb::new(Vector3::new(x0, y0, 0.0), Vector3::new(x0 + w, y0 + d, ROOM_HEIGHT));

        let hue = id as f64 / scene_count as f64 + rng.random_range(-0.02..0.02);
        let mut wall = || {
            hsv(
                hue + rng.random_range(-0.06..0.06),
                rng.random_range(0.55..0.9),
                rng.random_range(0.55..0.95),
            )
        };
        let walls = [wall(), wall(), wall(), wall()];
        let floor = hsv(hue + 0.5, rng.random_range(0.1..0.35), rng.random_range(0.3..0.6));
        let ceiling = hsv(hue, rng.random_range(0.05..0.2), rng.random_range(0.8..0.95));
        let mut primitives = room_shell(&room, walls, floor, ceiling);
        primitives.extend(place_furniture(&mut rng, &room, hue));
        scenes.push(SceneModel::new(
            id,
            format!("scene_{id}"),
            primitives,
            room,
            vertex_spacing,
        )?);
    }
    WorldModel::new(scenes, world_bounds, seed, vertex_spacing)
}

/// Returns a copy of `world` with `count` extra boxes of previously unused
/// colors standing on the floor of `scene_id`.
pub fn insert_occluders(
    world: &WorldModel,
    scene_id: usize,
    count: usize,
    size_range: (f64, f64),
    seed: u64,
) -> Result<WorldModel> {
    insert_occluders_avoiding(world, scene_id, count, size_range, seed, &[])
}

/// As [`insert_occluders`], additionally keeping every box at least
/// 0.3 m (horizontally) away from each point in `keep_out`.
pub fn insert_occluders_avoiding(
    world: &WorldModel,
    scene_id: usize,
    count: usize,
    size_range: (f64, f64),
    seed: u64,
    keep_out: &[Vector3<f64>],
) -> Result<WorldModel> {
    if count == 0 {
        return Err(Error::invalid("occluder count must be >= 1"));
    }
    let (lo, hi) = size_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::invalid(format!("bad occluder size range {size_range:?}")));
    }
    let scene = world.scene(scene_id)?;
    let room = scene.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0cc1_u64.wrapping_mul(scene_id as u64 + 1));
    let mut used: Vec<Color> = world.colors().copied().collect();
    let mut solids: Vec<Aabb> = scene
        .primitives
        .iter()
        .filter(|p| matches!(p.shape, Shape::Cuboid(_)))
        .map(|p| p.bounding_box())
        .collect();

    let mut primitives = scene.primitives.clone();
    for index in 0..count {
        let mut placed = None;
        for _ in 0..OCCLUDER_ATTEMPTS {
            let sx = rng.random_range(lo..=hi);
            let sy = rng.random_range(lo..=hi);
            let sz = rng.random_range(lo..=hi).min(room.size().z);
            if sx >= room.size().x || sy >= room.size().y {
                continue;
            }
            let x = rng.random_range(room.min.x..=room.max.x - sx);
            let y = rng.random_range(room.min.y..=room.max.y - sy);
            let b = Aabb::new(
                Vector3::new(x, y, room.min.z),
                Vector3::new(x + sx, y + sy, room.min.z + sz),
            );
            if solids.iter().any(|s| s.overlaps(&b)) {
                continue;
            }
            let grown = b.expanded(OCCLUDER_CLEARANCE);
            if keep_out
                .iter()
                .any(|p| p.x >= grown.min.x && p.x <= grown.max.x && p.y >= grown.min.y && p.y <= grown.max.y)
            {
                continue;
            }
            placed = Some(b);
            break;
        }
        let b = placed.ok_or(Error::PlacementFailure {
            scene_id,
            index,
            attempts: OCCLUDER_ATTEMPTS,
        })?;
        // Most distant candidate from every color already in the world.
        let mut color = [0.0; 3];
        let mut best = -1.0;
        for _ in 0..256 {
            let c = hsv(rng.random(), rng.random_range(0.6..1.0), rng.random_range(0.5..1.0));
            let nearest = used
                .iter()
                .map(|u| (0..3).map(|i| (u[i] - c[i]).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if nearest > best {
                best = nearest;
                color = c;
            }
            if best > UNSEEN_COLOR_DISTANCE {
                break;
            }
        }
        used.push(color);
        solids.push(b);
        primitives.push(Primitive {
            shape: Shape::Cuboid(b),
            color,
            kind: PrimitiveKind::Occluder,
        });
    }

    let mut out = world.clone();
    out.scenes[scene_id] = SceneModel::new(
        scene_id,
        scene.name.clone(),
        primitives,
        room,
        world.vertex_spacing,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_scene_world_has_sequential_ids() {
        let w = build_world(7, 9, 30.0).unwrap();
        assert_eq!(w.scene_count(), 9);
        for (i, s) in w.scenes.iter().enumerate() {
            assert_eq!(s.id, i);
            assert!(s.primitives.len() >= 4);
            assert!(!s.vertex_cloud.is_empty());
            assert!(w.world_bounds.contains_box(&s.bounds));
        }
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let a = serde_json::to_vec(&build_world(7, 3, 12.0).unwrap()).unwrap();
        let b = serde_json::to_vec(&build_world(7, 3, 12.0).unwrap()).unwrap();
        let c = serde_json::to_vec(&build_world(8, 3, 12.0).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_build_arguments() {
        assert!(matches!(build_world(1, 1, 10.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_world(1, 3, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_world(1, 3, -2.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vertices_lie_on_primitives() {
        let w = build_world(3, 2, 10.0).unwrap();
        for s in &w.scenes {
            for v in s.vertex_cloud.iter().step_by(37) {
                let d = s
                    .primitives
                    .iter()
                    .map(|p| p.distance_to_surface(&v.position))
                    .fold(f64::INFINITY, f64::min);
                assert!(d < 1e-6, "vertex {v:?} is {d} m from every surface");
            }
        }
    }

    #[test]
    fn scenes_have_distinct_color_histograms() {
        let w = build_world(11, 4, 16.0).unwrap();
        let hist = |s: &SceneModel| {
            let mut h = [0usize; 12];
            for p in &s.primitives {
                let bin = |v: f64| ((v * 3.999) as usize).min(3);
                h[bin(p.color[0])] += 1;
                h[4 + bin(p.color[1])] += 1;
                h[8 + bin(p.color[2])] += 1;
            }
            h
        };
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(hist(&w.scenes[i]), hist(&w.scenes[j]));
            }
        }
    }

    #[test]
    fn document_round_trip_rebuilds_world() {
        let w = build_world(5, 3, 12.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        w.save(&path).unwrap();
        assert_eq!(WorldModel::load(&path).unwrap(), w);
    }

    #[test]
    fn occluders_add_primitives_without_touching_input() {
        let w = build_world(7, 3, 12.0).unwrap();
        let before = w.clone();
        let occ = insert_occluders(&w, 1, 3, (0.3, 0.8), 99).unwrap();
        assert_eq!(w, before);
        assert_eq!(
            occ.scenes[1].primitives.len(),
            w.scenes[1].primitives.len() + 3
        );
        assert!(occ.scenes[1].vertex_cloud.len() > w.scenes[1].vertex_cloud.len());
        assert_eq!(occ.scenes[0], w.scenes[0]);
        let boxes: Vec<Aabb> = occ.scenes[1]
            .primitives
            .iter()
            .filter(|p| matches!(p.shape, Shape::Cuboid(_)))
            .map(|p| p.bounding_box())
            .collect();
        for i in 0..boxes.len() {
            assert!(occ.scenes[1].bounds.contains_box(&boxes[i]));
            for j in i + 1..boxes.len() {
                assert!(!boxes[i].overlaps(&boxes[j]));
            }
        }
    }

    #[test]
    fn impossible_occluder_placement_fails() {
        let w = build_world(7, 2, 6.0).unwrap();
        let err = insert_occluders(&w, 0, 200, (1.5, 2.0), 1).unwrap_err();
        assert!(matches!(err, Error::PlacementFailure { scene_id: 0, .. }));
        assert!(matches!(
            insert_occluders(&w, 5, 1, (0.3, 0.5), 1),
            Err(Error::NotFound(_))
        ));
    }
}
