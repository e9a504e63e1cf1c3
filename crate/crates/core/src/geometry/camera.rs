use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{round_half_up, validate_rotation};
use crate::error::{Error, Result};

/// Points with camera-space depth at or below this are never visible.
pub const Z_NEAR: f64 = 1e-4;

/// Pinhole camera with a world-to-camera rigid pose and a target raster size.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

/// Per-point projection record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: (i64, i64),
    pub depth: f64,
    pub visible: bool,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        validate_rotation(&self.rotation)?;
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidCamera("principal point is not finite".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("translation is not finite".into()));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidCamera(format!(
                "raster must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`, with `up` the world direction
    /// that should appear upward in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            focal,
            focal,
            width as f64 / 2.0 - 0.5,
            height as f64 / 2.0 - 0.5,
            rotation,
            translation,
            width,
            height,
        )
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn viewpoint(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Continuous image coordinates of a camera-space point (no rounding).
    #[inline]
    pub fn image_coords(&self, pc: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }

    /// Pixel and depth of a world point, or `None` if behind the near plane or
    /// outside the raster.
    #[inline]
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(usize, usize, f64)> {
        let pc = self.to_camera(p);
        if !(pc.z > Z_NEAR) {
            return None;
        }
        let (u, v) = self.image_coords(&pc);
        let (ix, iy) = (round_half_up(u), round_half_up(v));
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            return None;
        }
        Some((ix as usize, iy as usize, pc.z))
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        let pc = self.to_camera(p);
        if !(pc.z > Z_NEAR) {
            return Projection {
                pixel: (0, 0),
                depth: pc.z,
                visible: false,
            };
        }
        let (u, v) = self.image_coords(&pc);
        let pixel = (round_half_up(u), round_half_up(v));
        let visible = pixel.0 >= 0
            && pixel.1 >= 0
            && pixel.0 < self.width as i64
            && pixel.1 < self.height as i64;
        Projection {
            pixel,
            depth: pc.z,
            visible,
        }
    }

    /// Intrinsics rescaled by `factor` with pixel-center preservation:
    /// `u' = factor * (u + 0.5) - 0.5`. Extents are left unchanged.
    pub fn rescaled_intrinsics(&self, factor: f64) -> Camera {
        if factor == 1.0 {
            return self.clone();
        }
        Camera {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: factor * (self.cx + 0.5) - 0.5,
            cy: factor * (self.cy + 0.5) - 0.5,
            ..self.clone()
        }
    }

    /// Viewport of `width x height` starting at pixel `(ox, oy)` of this camera.
    pub fn cropped(&self, ox: f64, oy: f64, width: usize, height: usize) -> Camera {
        Camera {
            cx: self.cx - ox,
            cy: self.cy - oy,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> CameraJson {
        let r = &self.rotation;
        CameraJson {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
    }
}

/// On-disk camera: `{"width","height","fx","fy","cx","cy","R":[9 row-major],"t":[3]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Camera> {
        Camera::new(
            j.fx,
            j.fy,
            j.cx,
            j.cy,
            Matrix3::from_row_slice(&j.rotation),
            Vector3::from(j.translation),
            j.width,
            j.height,
        )
    }
}

/// Half-resolution camera: extents and focal lengths halved, pixel centers preserved.
pub fn camera_halve(cam: &Camera) -> Result<Camera> {
    if cam.width % 2 != 0 || cam.height % 2 != 0 {
        return Err(Error::Extent(format!(
            "cannot halve a {}x{} camera: extents must be even",
            cam.width, cam.height
        )));
    }
    let mut half = cam.rescaled_intrinsics(0.5);
    half.width /= 2;
    half.height /= 2;
    Ok(half)
}

/// Inverse of [`camera_halve`] applied `log2(factor)` times in one step.
pub fn camera_upscale(cam: &Camera, factor: usize) -> Camera {
    let mut up = cam.rescaled_intrinsics(factor as f64);
    up.width *= factor;
    up.height *= factor;
    up
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera() -> Camera {
        Camera::new(
            100.0,
            100.0,
            64.0,
            64.0,
            Matrix3::identity(),
            Vector3::zeros(),
            128,
            128,
        )
        .unwrap()
    }

    #[test]
    fn axis_point_projects_to_principal_point() {
        let p = axis_camera().project(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(p.pixel, (64, 64));
        assert_eq!(p.depth, 1.0);
        assert!(p.visible);
    }

    #[test]
    fn behind_camera_is_invisible() {
        let cam = axis_camera();
        assert!(!cam.project(&Vector3::new(0.0, 0.0, 0.0)).visible);
        assert!(!cam.project(&Vector3::new(0.1, 0.0, -1.0)).visible);
        assert!(cam.project_point(&Vector3::new(0.0, 0.0, -2.0)).is_none());
    }

    #[test]
    fn halve_formula_and_composition() {
        let mut cam = axis_camera();
        cam.fx = 100.0;
        cam.cx = 63.5;
        cam.cy = 63.5;
        let half = camera_halve(&cam).unwrap();
        assert_eq!((half.width, half.height), (64, 64));
        assert_eq!(half.fx, 50.0);
        assert_eq!(half.cx, 31.5);
        let quarter = camera_halve(&half).unwrap();
        let direct = cam.rescaled_intrinsics(0.25);
        assert_eq!((quarter.width, quarter.height), (32, 32));
        assert_eq!(quarter.fx, direct.fx);
        assert_eq!(quarter.cx, direct.cx);
        assert_eq!(quarter.cy, direct.cy);
    }

    #[test]
    fn halve_rejects_odd_extents() {
        let mut cam = axis_camera();
        cam.width = 127;
        assert!(matches!(camera_halve(&cam), Err(Error::Extent(_))));
    }

    #[test]
    fn look_at_produces_valid_pose() {
        let cam = Camera::look_at(
            Vector3::new(3.0, 1.0, 0.5),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            128.0,
            128,
            128,
        )
        .unwrap();
        assert!((cam.viewpoint() - Vector3::new(3.0, 1.0, 0.5)).norm() < 1e-12);
        let center = cam.project(&Vector3::zeros());
        assert_eq!(center.pixel, (64, 64));
        // world up maps to image up (negative y)
        let above = cam.project(&Vector3::new(0.0, 0.0, 0.3));
        assert!(above.pixel.1 < 64);
    }

    #[test]
    fn json_rejects_bad_rotation() {
        let mut j = axis_camera().to_json();
        j.rotation[1] = 0.5;
        let err = Camera::try_from(j).unwrap_err();
        assert!(err.to_string().contains("invalid rotation"));
    }

    #[test]
    fn invalid_intrinsics() {
        let mut cam = axis_camera();
        cam.fx = 0.0;
        assert!(cam.validate().is_err());
        let mut cam = axis_camera();
        cam.height = 1;
        assert!(cam.validate().is_err());
    }
}
