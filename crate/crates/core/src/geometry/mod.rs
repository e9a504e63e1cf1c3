//! Point clouds, pinhole cameras and rigid transforms.
//!
//! Camera convention: `p_cam = R * p_world + t`, x right, y down, z forward.
//! Integer pixel `(ix, iy)` covers the continuous square
//! `[ix - 0.5, ix + 0.5) x [iy - 0.5, iy + 0.5)`.

mod camera;
mod cloud;
pub mod ply;

pub use camera::{camera_halve, camera_upscale, Camera, CameraJson, Projection, Z_NEAR};
pub use cloud::{apply_transform, voxel_downsample, PointCloud, RigidTransform};

use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Nearest integer with ties rounded up: `floor(a + 0.5)`.
#[inline]
pub fn round_half_up(a: f64) -> i64 {
    (a + 0.5).floor() as i64
}

pub(crate) const ROTATION_TOLERANCE: f64 = 1e-6;

/// Checks `R^T R = I` and `det R = +1` to [`ROTATION_TOLERANCE`].
pub fn validate_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err > ROTATION_TOLERANCE {
        return Err(Error::InvalidRotation(format!(
            "R^T R deviates from identity by {err:.3e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::InvalidRotation(format!("determinant {det} != +1")));
    }
    Ok(())
}
