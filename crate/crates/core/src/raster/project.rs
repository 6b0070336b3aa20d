//! Screen-space projection of 3D Gaussians.

use nalgebra::{Matrix2, Matrix2x3, Vector2};

use crate::camera::{CameraModel, NEAR_PLANE};
use crate::gaussian::GaussianPrimitive;
use crate::math::{self, Mat3, Vec3};

/// Isotropic low-pass term added to every 2D covariance (px²).
pub const LOW_PASS: f64 = 0.3;
/// Squared Mahalanobis radius beyond which a Gaussian does not touch a pixel.
pub const CUTOFF_D2: f64 = 9.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Index of the source primitive.
    pub index: usize,
    pub mean2d: Vector2<f64>,
    /// Footprint covariance including the low-pass term.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as (a, b, c) for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl ProjectedGaussian {
    /// Inclusive pixel-index range `(x0, x1, y0, y1)` whose centers can lie
    /// within the cutoff ellipse. Empty ranges have `x0 > x1` or `y0 > y1`.
    pub fn pixel_bounds(&self) -> (i64, i64, i64, i64) {
        let r = CUTOFF_D2.sqrt();
        let rx = r * self.cov2d[(0, 0)].sqrt();
        let ry = r * self.cov2d[(1, 1)].sqrt();
        let x0 = (self.mean2d.x - rx - 0.5).ceil() as i64;
        let x1 = (self.mean2d.x + rx - 0.5).floor() as i64;
        let y0 = (self.mean2d.y - ry - 0.5).ceil() as i64;
        let y1 = (self.mean2d.y + ry - 0.5).floor() as i64;
        (x0, x1, y0, y1)
    }
}

/// Intermediate quantities reused by the backward pass.
pub(crate) struct ProjectionTerms {
    pub point_cam: Vec3,
    pub jacobian: Matrix2x3<f64>,
    /// `J · W` (world → pixel linearization).
    pub jw: Matrix2x3<f64>,
    pub rotation: Mat3,
    pub unit_quat: math::Quat,
    pub scale: Vec3,
    pub cov3d: Mat3,
    pub view_dir: Vec3,
    pub view_dist: f64,
}

pub(crate) fn projection_terms(g: &GaussianPrimitive, camera: &CameraModel) -> Option<ProjectionTerms> {
    let point_cam = camera.to_camera(&g.mean);
    if !(point_cam.z > NEAR_PLANE) || !point_cam.iter().all(|v| v.is_finite()) {
        return None;
    }
    let n = g.rotation.norm();
    if !(n > math::MIN_QUAT_NORM) {
        return None;
    }
    let unit_quat = g.rotation / n;
    let rotation = math::unit_quat_to_matrix(&unit_quat);
    let scale = g.scale();
    let m = rotation * Mat3::from_diagonal(&scale);
    let cov3d = m * m.transpose();
    let jacobian = camera.jacobian(&point_cam);
    let jw = jacobian * camera.rotation;
    let (view_dir, view_dist) = camera.view_dir(&g.mean);
    Some(ProjectionTerms {
        point_cam,
        jacobian,
        jw,
        rotation,
        unit_quat,
        scale,
        cov3d,
        view_dir,
        view_dist,
    })
}

pub(crate) fn finish_projection(
    index: usize,
    g: &GaussianPrimitive,
    camera: &CameraModel,
    degree: usize,
    t: &ProjectionTerms,
) -> Option<ProjectedGaussian> {
    let mut cov2d = t.jw * t.cov3d * t.jw.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    Some(ProjectedGaussian {
        index,
        mean2d: camera.project_camera_point(&t.point_cam),
        cov2d,
        conic,
        depth: t.point_cam.z,
        color: g.color_rgb(&t.view_dir, degree),
        opacity: g.opacity(),
    })
}

/// Projects one primitive; `None` means culled (behind the near plane or an
/// invalid rotation).
pub fn project_gaussian(
    g: &GaussianPrimitive,
    camera: &CameraModel,
    degree: usize,
) -> Option<ProjectedGaussian> {
    let t = projection_terms(g, camera)?;
    finish_projection(0, g, camera, degree, &t)
}
