//! Pinhole and orthographic cameras.
//!
//! Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; its center is at `(i + 0.5, j + 0.5)`.
//! Camera space is x right, y down, z forward. For orthographic cameras
//! `fx`/`fy` are pixels per meter.

use nalgebra::{Matrix2x3, Vector2};

use crate::error::{Result, SplatError};
use crate::math::{Mat3, Vec3};

/// Gaussians whose camera-space depth is at or below this are culled (m).
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    Perspective,
    Orthographic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// World → camera rotation.
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
    pub mode: ProjectionMode,
}

impl CameraModel {
    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        mode: ProjectionMode,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(SplatError::Invalid(format!("focal lengths must be positive ({}, {})", k.fx, k.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SplatError::Invalid("image size must be at least 1×1".into()));
        }
        let ortho_err = (self.rotation * self.rotation.transpose() - Mat3::identity()).amax();
        if ortho_err > 1e-8 || self.rotation.determinant() < 0.0 {
            return Err(SplatError::Invalid(format!("camera rotation is not a rotation (error {ortho_err:e})")));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing axis in world space.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    #[inline]
    pub fn project_camera_point(&self, pc: &Vec3) -> Vector2<f64> {
        let k = &self.intrinsics;
        match self.mode {
            ProjectionMode::Perspective => Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy),
            ProjectionMode::Orthographic => Vector2::new(k.fx * pc.x + k.cx, k.fy * pc.y + k.cy),
        }
    }

    pub fn project(&self, p: &Vec3) -> Vector2<f64> {
        self.project_camera_point(&self.to_camera(p))
    }

    /// Jacobian of the pixel mapping w.r.t. the camera-space point.
    #[inline]
    pub fn jacobian(&self, pc: &Vec3) -> Matrix2x3<f64> {
        let k = &self.intrinsics;
        match self.mode {
            ProjectionMode::Perspective => {
                let iz = 1.0 / pc.z;
                let iz2 = iz * iz;
                Matrix2x3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz2, 0.0, k.fy * iz, -k.fy * pc.y * iz2)
            }
            ProjectionMode::Orthographic => Matrix2x3::new(k.fx, 0.0, 0.0, 0.0, k.fy, 0.0),
        }
    }

    /// Unit direction from the camera toward `p` (used for view-dependent color).
    #[inline]
    pub fn view_dir(&self, p: &Vec3) -> (Vec3, f64) {
        match self.mode {
            ProjectionMode::Perspective => {
                let d = p - self.center();
                let n = d.norm();
                (d / n, n)
            }
            ProjectionMode::Orthographic => (self.forward(), 0.0),
        }
    }

    /// World-space direction of the ray through pixel coordinate `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        match self.mode {
            ProjectionMode::Perspective => {
                let k = &self.intrinsics;
                let d = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalize();
                self.rotation.transpose() * d
            }
            ProjectionMode::Orthographic => self.forward(),
        }
    }

    /// Same pose with new intrinsics and image size.
    pub fn with_intrinsics(&self, intrinsics: Intrinsics, width: usize, height: usize) -> Self {
        Self {
            intrinsics,
            width,
            height,
            ..self.clone()
        }
    }

    /// Applies a rigid world transform `x ↦ R x + t` to the camera so that it
    /// sees the transformed scene exactly as it saw the original.
    pub fn transformed(&self, r: &Mat3, t: &Vec3) -> Self {
        let rotation = self.rotation * r.transpose();
        let translation = self.translation - rotation * t;
        Self {
            rotation,
            translation,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::look_at(
            Vec3::new(0.0, 3.0, 1.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::z(),
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 32.0,
                cy: 32.0,
            },
            64,
            64,
            ProjectionMode::Perspective,
        )
    }

    #[test]
    fn look_at_builds_a_rotation() {
        let c = cam();
        c.validate().unwrap();
        assert!((c.center() - Vec3::new(0.0, 3.0, 1.0)).norm() < 1e-12);
        // the target lands on the principal point
        let uv = c.project(&Vec3::new(0.0, 0.0, 1.0));
        assert!((uv.x - 32.0).abs() < 1e-12 && (uv.y - 32.0).abs() < 1e-12);
        // world up projects upward (smaller v)
        assert!(c.project(&Vec3::new(0.0, 0.0, 1.5)).y < 32.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = cam();
        let pc = Vec3::new(0.3, -0.2, 2.7);
        let j = c.jacobian(&pc);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = pc;
            p[k] += h;
            let mut m = pc;
            m[k] -= h;
            let d = (c.project_camera_point(&p) - c.project_camera_point(&m)) / (2.0 * h);
            assert!((d.x - j[(0, k)]).abs() < 1e-6 && (d.y - j[(1, k)]).abs() < 1e-6);
        }
    }

    #[test]
    fn rigid_transform_keeps_projection() {
        let c = cam();
        let r = crate::math::rodrigues(&Vec3::new(0.1, 0.5, -0.3));
        let t = Vec3::new(0.4, -1.0, 2.0);
        let moved = c.transformed(&r, &t);
        let p = Vec3::new(0.2, 0.1, 1.2);
        let a = c.project(&p);
        let b = moved.project(&(r * p + t));
        assert!((a - b).norm() < 1e-10);
    }
}
