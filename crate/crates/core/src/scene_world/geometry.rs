use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Color = [f64; 3];

/// Ray hits closer than this are ignored.
pub const NEAR: f64 = 1e-3;

const PATTERN_PERIOD: f64 = 0.5;
const PATTERN_LINE: f64 = 0.04;
const PATTERN_DARKEN: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn size(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// Inclusive containment.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// True when the interiors overlap (touching faces do not count).
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    pub fn expanded(&self, by: f64) -> Aabb {
        let d = Vector3::repeat(by);
        Aabb::new(self.min - d, self.max + d)
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] < self.max[i])
    }
}

/// Axis-aligned surface primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Cuboid(Aabb),
    /// Rectangle in the plane `coord[axis] == offset`, spanning `[lo, hi]` on
    /// the two remaining axes (taken in increasing axis order).
    Plane {
        axis: usize,
        offset: f64,
        lo: [f64; 2],
        hi: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Floor,
    Ceiling,
    Wall,
    Furniture,
    Occluder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub color: Color,
    pub kind: PrimitiveKind,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

fn other_axes(axis: usize) -> [usize; 2] {
    match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

fn axis_unit(axis: usize) -> Vector3<f64> {
    let mut n = Vector3::zeros();
    n[axis] = 1.0;
    n
}

impl Primitive {
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        match &self.shape {
            Shape::Plane { axis, offset, lo, hi } => {
                let d = dir[*axis];
                if d.abs() < 1e-12 {
                    return None;
                }
                let t = (offset - origin[*axis]) / d;
                if t <= NEAR {
                    return None;
                }
                let p = origin + dir * t;
                let [a, b] = other_axes(*axis);
                if p[a] < lo[0] || p[a] > hi[0] || p[b] < lo[1] || p[b] > hi[1] {
                    return None;
                }
                Some(Hit {
                    t,
                    point: p,
                    normal: axis_unit(*axis),
                })
            }
            Shape::Cuboid(bx) => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut near_axis = 0;
                let mut far_axis = 0;
                for i in 0..3 {
                    if dir[i].abs() < 1e-12 {
                        if origin[i] < bx.min[i] || origin[i] > bx.max[i] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (bx.min[i] - origin[i]) / dir[i];
                    let t2 = (bx.max[i] - origin[i]) / dir[i];
                    let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if a > t_near {
                        t_near = a;
                        near_axis = i;
                    }
                    if b < t_far {
                        t_far = b;
                        far_axis = i;
                    }
                }
                if t_near > t_far {
                    return None;
                }
                let (t, axis) = if t_near > NEAR {
                    (t_near, near_axis)
                } else if t_far > NEAR {
                    (t_far, far_axis)
                } else {
                    return None;
                };
                Some(Hit {
                    t,
                    point: origin + dir * t,
                    normal: axis_unit(axis),
                })
            }
        }
    }

    /// Surface color at `p`, modulated by a regular grid-line pattern.
    pub fn albedo_at(&self, p: &Vector3<f64>, normal: &Vector3<f64>) -> Color {
        let axis = (0..3)
            .max_by(|&a, &b| normal[a].abs().total_cmp(&normal[b].abs()))
            .unwrap_or(2);
        let on_line = other_axes(axis).iter().any(|&a| {
            let r = p[a].rem_euclid(PATTERN_PERIOD);
            !(PATTERN_LINE..=PATTERN_PERIOD - PATTERN_LINE).contains(&r)
        });
        let k = if on_line { PATTERN_DARKEN } else { 1.0 };
        [self.color[0] * k, self.color[1] * k, self.color[2] * k]
    }

    /// Euclidean distance from `p` to the primitive surface.
    pub fn distance_to_surface(&self, p: &Vector3<f64>) -> f64 {
        self.faces()
            .iter()
            .map(|f| f.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn bounding_box(&self) -> Aabb {
        match &self.shape {
            Shape::Cuboid(b) => *b,
            Shape::Plane { axis, offset, lo, hi } => {
                let [a, b] = other_axes(*axis);
                let mut min = Vector3::zeros();
                let mut max = Vector3::zeros();
                min[*axis] = *offset;
                max[*axis] = *offset;
                min[a] = lo[0];
                max[a] = hi[0];
                min[b] = lo[1];
                max[b] = hi[1];
                Aabb::new(min, max)
            }
        }
    }

    fn faces(&self) -> Vec<Face> {
        match &self.shape {
            Shape::Plane { axis, offset, lo, hi } => vec![Face {
                axis: *axis,
                offset: *offset,
                lo: *lo,
                hi: *hi,
            }],
            Shape::Cuboid(b) => {
                let mut faces = Vec::with_capacity(6);
                for axis in 0..3 {
                    let [a, c] = other_axes(axis);
                    for offset in [b.min[axis], b.max[axis]] {
                        faces.push(Face {
                            axis,
                            offset,
                            lo: [b.min[a], b.min[c]],
                            hi: [b.max[a], b.max[c]],
                        });
                    }
                }
                faces
            }
        }
    }

    /// Regular grid of surface points, at most `spacing` apart along each
    /// in-plane axis, with the surface color (pattern included) attached.
    pub fn sample_surface(&self, spacing: f64) -> Vec<Vertex> {
        let mut out = Vec::new();
        for face in self.faces() {
            let [a, b] = other_axes(face.axis);
            let na = ((face.hi[0] - face.lo[0]) / spacing).ceil().max(1.0) as usize;
            let nb = ((face.hi[1] - face.lo[1]) / spacing).ceil().max(1.0) as usize;
            let normal = axis_unit(face.axis);
            for i in 0..=na {
                for j in 0..=nb {
                    let mut p = Vector3::zeros();
                    p[face.axis] = face.offset;
                    p[a] = face.lo[0] + (face.hi[0] - face.lo[0]) * i as f64 / na as f64;
                    p[b] = face.lo[1] + (face.hi[1] - face.lo[1]) * j as f64 / nb as f64;
                    out.push(Vertex {
                        position: p,
                        color: self.albedo_at(&p, &normal),
                    });
                }
            }
        }
        out
    }
}

struct Face {
    axis: usize,
    offset: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Face {
    fn distance(&self, p: &Vector3<f64>) -> f64 {
        let [a, b] = other_axes(self.axis);
        let da = (self.lo[0] - p[a]).max(0.0).max(p[a] - self.hi[0]);
        let db = (self.lo[1] - p[b]).max(0.0).max(p[b] - self.hi[1]);
        let dn = p[self.axis] - self.offset;
        (da * da + db * db + dn * dn).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub position: Vector3<f64>,
    pub color: Color,
}
