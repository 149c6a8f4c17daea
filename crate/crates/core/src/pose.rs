//! Camera poses: world position plus unit quaternion orientation.
//!
//! The camera body frame is x forward, y left, z up. The orientation rotates
//! body-frame vectors into the world frame; the identity looks along world +x.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quaternion components in `(w, x, y, z)` order.
pub type Quat = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    orientation: Quat,
}

impl CameraPose {
    /// Normalizes `orientation` and moves it to the `w >= 0` hemisphere;
    /// fails on a zero or non-finite quaternion.
    pub fn new(position: Vector3<f64>, orientation: Quat) -> Result<Self> {
        Ok(Self {
            position,
            orientation: canonical_quat(normalize_quat(orientation)?),
        })
    }

    /// Level camera rotated by `yaw` radians about world +z.
    pub fn from_yaw(position: Vector3<f64>, yaw: f64) -> Self {
        let (s, c) = (yaw * 0.5).sin_cos();
        Self {
            position,
            orientation: canonical_quat([c, 0.0, 0.0, s]),
        }
    }

    pub fn orientation(&self) -> Quat {
        self.orientation
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.orientation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))
    }

    /// Viewing direction in the world frame.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation() * Vector3::x()
    }

    /// Maps a world point into the camera body frame.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().inverse_transform_vector(&(p - self.position))
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.position
    }
}

pub fn quat_norm(q: &Quat) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn normalize_quat(q: Quat) -> Result<Quat> {
    let n = quat_norm(&q);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidQuaternion(format!("cannot normalize {q:?}")));
    }
    // already unit up to rounding: keep the exact components so stored poses
    // round-trip bit-for-bit
    if (n - 1.0).abs() <= 1e-12 {
        return Ok(q);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// The representative of `{q, -q}` with `w > 0`, or with the first non-zero
/// vector component positive when `w == 0`.
pub fn canonical_quat(q: Quat) -> Quat {
    let lead = q.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0);
    if lead < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constructor_normalizes() {
        let p = CameraPose::new(Vector3::zeros(), [2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((quat_norm(&p.orientation()) - 1.0).abs() < 1e-9);
        assert!(CameraPose::new(Vector3::zeros(), [0.0; 4]).is_err());
    }

    #[test]
    fn opposite_yaws_share_one_label() {
        let a = CameraPose::from_yaw(Vector3::zeros(), -std::f64::consts::FRAC_PI_2);
        let b = CameraPose::from_yaw(Vector3::zeros(), 1.5 * std::f64::consts::PI);
        assert!(a.orientation()[0] > 0.0);
        for i in 0..4 {
            assert!((a.orientation()[i] - b.orientation()[i]).abs() < 1e-12);
        }
        assert_eq!(canonical_quat([0.0, -1.0, 2.0, 0.0]), [0.0, 1.0, -2.0, 0.0]);
        assert_eq!(canonical_quat([0.0; 4]), [0.0; 4]);
    }

    #[test]
    fn yaw_rotates_forward_vector() {
        let p = CameraPose::from_yaw(Vector3::zeros(), std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(p.forward(), Vector3::y(), epsilon = 1e-12);
        let world = Vector3::new(1.0, 2.0, 3.0);
        let back = p.camera_to_world(&p.world_to_camera(&world));
        assert_relative_eq!(back, world, epsilon = 1e-12);
    }
}
