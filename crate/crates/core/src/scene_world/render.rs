use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{geometry::NEAR, Aabb, WorldModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pose::CameraPose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub brightness: f64,
    pub background: [f32; 3],
    /// Point-cloud splat radius in pixels.
    #[serde(default = "default_splat_radius")]
    pub splat_radius: f64,
}

fn default_splat_radius() -> f64 {
    1.0
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            vertical_fov: 60.0,
            brightness: 1.0,
            background: [0.0; 3],
            splat_radius: default_splat_radius(),
        }
    }
}

impl RenderSettings {
    pub fn square(size: usize) -> Self {
        Self {
            width: size,
            height: size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::invalid(format!(
                "render size {}x{} below 16x16",
                self.width, self.height
            )));
        }
        if !(10.0..=170.0).contains(&self.vertical_fov) {
            return Err(Error::invalid(format!(
                "vertical fov {} outside [10, 170]",
                self.vertical_fov
            )));
        }
        if !(self.brightness > 0.0) {
            return Err(Error::invalid("brightness must be positive"));
        }
        if !(self.splat_radius >= 0.5) {
            return Err(Error::invalid("splat radius must be >= 0.5 px"));
        }
        Ok(())
    }
}

/// Pinhole intrinsics. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; rows grow
/// downward, columns to the right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeCamera {
    pub fn from_settings(s: &RenderSettings) -> Self {
        let focal = (s.height as f64 / 2.0) / (s.vertical_fov.to_radians() / 2.0).tan();
        Self {
            width: s.width,
            height: s.height,
            focal,
            cx: s.width as f64 / 2.0,
            cy: s.height as f64 / 2.0,
        }
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.x <= NEAR {
            return None;
        }
        Some((
            self.cx - self.focal * p.y / p.x,
            self.cy - self.focal * p.z / p.x,
        ))
    }

    /// Camera-frame direction (unit forward component) through pixel
    /// coordinates `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new(1.0, (self.cx - u) / self.focal, (self.cy - v) / self.focal)
    }
}

fn check_inputs(world: &WorldModel, scene_id: usize, pose: &CameraPose, settings: &RenderSettings) -> Result<()> {
    settings.validate()?;
    world.scene(scene_id)?;
    if !world.world_bounds.contains(&pose.position) {
        return Err(Error::OutOfBounds(format!(
            "camera at {:?} lies outside the world bounds",
            pose.position.as_slice()
        )));
    }
    Ok(())
}

/// Ray-cast render of one scene. Surfaces are flat-shaded with a view-angle
/// term; `brightness` scales linearly before clipping to `[0, 1]`.
pub fn render_rgb(
    world: &WorldModel,
    scene_id: usize,
    pose: &CameraPose,
    settings: &RenderSettings,
) -> Result<Image> {
    check_inputs(world, scene_id, pose, settings)?;
    let scene = world.scene(scene_id)?;
    let cam = PinholeCamera::from_settings(settings);
    let rot = pose.rotation();
    let mut img = Image::new(settings.width, settings.height, settings.background);
    for j in 0..settings.height {
        for i in 0..settings.width {
            let dir = rot * cam.ray(i as f64 + 0.5, j as f64 + 0.5).normalize();
            let hit = scene
                .primitives
                .iter()
                .filter_map(|p| p.intersect(&pose.position, &dir).map(|h| (h, p)))
                .min_by(|a, b| a.0.t.total_cmp(&b.0.t));
            if let Some((h, prim)) = hit {
                let albedo = prim.albedo_at(&h.point, &h.normal);
                let shade = 0.55 + 0.45 * h.normal.dot(&dir).abs();
                let px = albedo.map(|c| ((c * shade * settings.brightness).min(1.0)) as f32);
                img.set_pixel(i, j, px);
            }
        }
    }
    Ok(img)
}

/// Normalized world coordinate of `p` inside `bounds`.
pub fn encode_point(p: &Vector3<f64>, bounds: &Aabb) -> [f32; 3] {
    let s = bounds.size();
    [
        ((p.x - bounds.min.x) / s.x) as f32,
        ((p.y - bounds.min.y) / s.y) as f32,
        ((p.z - bounds.min.z) / s.z) as f32,
    ]
}

pub fn decode_point(pixel: [f32; 3], bounds: &Aabb) -> Vector3<f64> {
    let s = bounds.size();
    Vector3::new(
        bounds.min.x + pixel[0] as f64 * s.x,
        bounds.min.y + pixel[1] as f64 * s.y,
        bounds.min.z + pixel[2] as f64 * s.z,
    )
}

/// Splat render of the scene vertex cloud. Each non-background pixel holds
/// the normalized world coordinate of the nearest vertex whose projection lies
/// within `splat_radius` of the pixel center.
pub fn render_pointcloud(
    world: &WorldModel,
    scene_id: usize,
    pose: &CameraPose,
    settings: &RenderSettings,
) -> Result<Image> {
    Ok(render_pointcloud_indexed(world, scene_id, pose, settings)?.0)
}

/// [`render_pointcloud`] plus, per pixel, the index of the winning vertex.
pub fn render_pointcloud_indexed(
    world: &WorldModel,
    scene_id: usize,
    pose: &CameraPose,
    settings: &RenderSettings,
) -> Result<(Image, Vec<Option<usize>>)> {
    check_inputs(world, scene_id, pose, settings)?;
    let scene = world.scene(scene_id)?;
    let cam = PinholeCamera::from_settings(settings);
    let (w, h) = (settings.width, settings.height);
    let r = settings.splat_radius;
    let mut depth = vec![f64::INFINITY; w * h];
    let mut owner: Vec<Option<usize>> = vec![None; w * h];

    for (idx, v) in scene.vertex_cloud.iter().enumerate() {
        let pc = pose.world_to_camera(&v.position);
        let Some((u, vv)) = cam.project(&pc) else {
            continue;
        };
        let i0 = (u - r - 0.5).ceil().max(0.0) as i64;
        let i1 = ((u + r - 0.5).floor() as i64).min(w as i64 - 1);
        let j0 = (vv - r - 0.5).ceil().max(0.0) as i64;
        let j1 = ((vv + r - 0.5).floor() as i64).min(h as i64 - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let du = i as f64 + 0.5 - u;
                let dv = j as f64 + 0.5 - vv;
                if du * du + dv * dv > r * r {
                    continue;
                }
                let k = j as usize * w + i as usize;
                if pc.x < depth[k] {
                    depth[k] = pc.x;
                    owner[k] = Some(idx);
                }
            }
        }
    }

    let mut img = Image::new(w, h, settings.background);
    for (k, o) in owner.iter().enumerate() {
        if let Some(idx) = o {
            let p = encode_point(&scene.vertex_cloud[*idx].position, &world.world_bounds);
            img.set_pixel(k % w, k / w, p);
        }
    }
    Ok((img, owner))
}
