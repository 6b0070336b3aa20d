//! Gaussian primitives and the dense sets the renderer consumes.

use nalgebra::Vector4;

use crate::error::{Result, SplatError};
use crate::math::{self, Mat3, Quat, Vec3};
use crate::sh::{self, MAX_COEFFS};

/// Determinant (m⁶) below which a covariance is considered singular.
pub const COVARIANCE_EPSILON: f64 = 1e-18;

/// One anisotropic Gaussian in pre-activation form.
///
/// `log_scale` maps through `exp` to standard deviations, `opacity_logit`
/// through the logistic function. `rotation` need not be normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub opacity_logit: f64,
    pub color: [f64; MAX_COEFFS],
}

impl GaussianPrimitive {
    pub fn isotropic(mean: Vec3, sigma: f64, opacity: f64, rgb_dc: [f64; 3]) -> Self {
        let mut color = [0.0; MAX_COEFFS];
        color[..3].copy_from_slice(&rgb_dc);
        Self {
            mean,
            log_scale: Vec3::repeat(sigma.ln()),
            rotation: math::quat_identity(),
            opacity_logit: math::logit(opacity),
            color,
        }
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    /// Unit rotation; errors on a zero quaternion.
    pub fn unit_rotation(&self) -> Result<Quat> {
        let n = self.rotation.norm();
        if !(n > math::MIN_QUAT_NORM) {
            return Err(SplatError::ZeroQuaternion);
        }
        Ok(self.rotation / n)
    }

    /// Rescales the stored quaternion to unit norm. Idempotent.
    pub fn normalize_rotation(&mut self) -> Result<()> {
        self.rotation = self.unit_rotation()?;
        Ok(())
    }

    pub fn covariance(&self) -> Result<Mat3> {
        build_covariance(&self.scale(), &self.rotation)
    }

    /// RGB color for a view direction pointing from the camera to the mean.
    pub fn color_rgb(&self, view_dir: &Vec3, degree: usize) -> [f64; 3] {
        sh::eval_unchecked(&self.color[..sh::coeff_count(degree)], view_dir, degree)
    }

    /// DC color in the [0,1] display sense (`SH_C0 · c0`).
    pub fn base_rgb(&self) -> [f64; 3] {
        [
            sh::SH_C0 * self.color[0],
            sh::SH_C0 * self.color[1],
            sh::SH_C0 * self.color[2],
        ]
    }
}

/// Which branch produced a primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SourceTag {
    Body,
    Face,
}

impl SourceTag {
    pub fn code(self) -> f64 {
        match self {
            SourceTag::Body => 0.0,
            SourceTag::Face => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        if code == 0.0 {
            Some(SourceTag::Body)
        } else if code == 1.0 {
            Some(SourceTag::Face)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub sh_degree: usize,
    pub primitives: Vec<GaussianPrimitive>,
    pub tags: Vec<SourceTag>,
}

impl GaussianSet {
    pub fn new(sh_degree: usize) -> Self {
        Self {
            sh_degree,
            primitives: Vec::new(),
            tags: Vec::new(),
        }
    }

    pub fn from_primitives(sh_degree: usize, primitives: Vec<GaussianPrimitive>, tag: SourceTag) -> Self {
        let tags = vec![tag; primitives.len()];
        Self {
            sh_degree,
            primitives,
            tags,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn push(&mut self, p: GaussianPrimitive, tag: SourceTag) {
        self.primitives.push(p);
        self.tags.push(tag);
    }

    pub fn extend_from(&mut self, other: &GaussianSet) {
        self.primitives.extend_from_slice(&other.primitives);
        self.tags.extend_from_slice(&other.tags);
    }

    pub fn coeff_count(&self) -> usize {
        sh::coeff_count(self.sh_degree)
    }
}

/// Per-primitive gradient with the same layout as [`GaussianPrimitive`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimitiveGrad {
    pub mean: Vec3,
    pub log_scale: Vec3,
    pub rotation: Vector4<f64>,
    pub opacity_logit: f64,
    pub color: [f64; MAX_COEFFS],
}

impl Default for PrimitiveGrad {
    fn default() -> Self {
        Self {
            mean: Vec3::zeros(),
            log_scale: Vec3::zeros(),
            rotation: Vector4::zeros(),
            opacity_logit: 0.0,
            color: [0.0; MAX_COEFFS],
        }
    }
}

impl PrimitiveGrad {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    pub fn add_assign(&mut self, o: &PrimitiveGrad) {
        self.mean += o.mean;
        self.log_scale += o.log_scale;
        self.rotation += o.rotation;
        self.opacity_logit += o.opacity_logit;
        for (a, b) in self.color.iter_mut().zip(o.color.iter()) {
            *a += b;
        }
    }
}

/// `R(q)·diag(s²)·R(q)ᵀ`. The quaternion is normalized internally.
pub fn build_covariance(scale: &Vec3, rotation: &Quat) -> Result<Mat3> {
    let r = math::quat_to_matrix(rotation).ok_or(SplatError::ZeroQuaternion)?;
    let m = r * Mat3::from_diagonal(&scale.component_mul(scale));
    let cov = m * r.transpose();
    // exact symmetry
    Ok((cov + cov.transpose()) * 0.5)
}

/// Normal density `N(point | mean, cov)`.
pub fn eval_density(point: &Vec3, mean: &Vec3, cov: &Mat3) -> Result<f64> {
    let det = cov.determinant();
    if !(det >= COVARIANCE_EPSILON) {
        return Err(SplatError::SingularCovariance {
            det,
            eps: COVARIANCE_EPSILON,
        });
    }
    let inv = cov.try_inverse().ok_or(SplatError::SingularCovariance {
        det,
        eps: COVARIANCE_EPSILON,
    })?;
    let d = point - mean;
    let d2 = d.dot(&(inv * d));
    let norm = (2.0 * std::f64::consts::PI).powf(-1.5) / det.sqrt();
    Ok(norm * (-0.5 * d2).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{exp_quat, unit_quat_to_matrix};
    use nalgebra::Quaternion;

    #[test]
    fn identity_covariance() {
        let c = build_covariance(&Vec3::repeat(1.0), &math::quat_identity()).unwrap();
        assert_eq!(c, Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let q = exp_quat(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let c = build_covariance(&Vec3::new(2.0, 1.0, 1.0), &q).unwrap();
        // compose Rz(90°) by hand: x -> y
        let rz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expect = rz * Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)) * rz.transpose();
        assert!((c - expect).norm() < 1e-12);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 4.0).abs() < 1e-12);
        assert!((c[(2, 2)] - 1.0).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12 && c[(0, 2)].abs() < 1e-12 && c[(1, 2)].abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_are_squared_scales() {
        let q = Quaternion::new(0.3, -0.4, 0.2, 0.8);
        let c = build_covariance(&Vec3::new(1.0, 2.0, 3.0), &q).unwrap();
        let mut ev: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip([1.0, 4.0, 9.0]) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((c.determinant() - 36.0).abs() < 1e-9);
    }

    #[test]
    fn zero_quaternion_rejected() {
        let q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(build_covariance(&Vec3::repeat(1.0), &q), Err(SplatError::ZeroQuaternion)));
    }

    #[test]
    fn density_peak_and_unit_distance() {
        let peak = eval_density(&Vec3::zeros(), &Vec3::zeros(), &Mat3::identity()).unwrap();
        assert!((peak - 0.063_493_6).abs() < 1e-7);
        for axis in [Vec3::x(), Vec3::y(), -Vec3::z()] {
            let v = eval_density(&axis, &Vec3::zeros(), &Mat3::identity()).unwrap();
            assert!((v - peak * (-0.5f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_covariance_rejected() {
        let cov = Mat3::from_diagonal(&Vec3::new(1e-7, 1e-7, 1e-7));
        assert!(matches!(
            eval_density(&Vec3::zeros(), &Vec3::zeros(), &cov),
            Err(SplatError::SingularCovariance { .. })
        ));
    }

    #[test]
    fn rotation_normalization_is_idempotent() {
        let mut g = GaussianPrimitive::isotropic(Vec3::zeros(), 0.1, 0.5, [1.0; 3]);
        g.rotation = Quaternion::new(2.0, 1.0, -1.0, 0.5);
        g.normalize_rotation().unwrap();
        let once = g.rotation;
        g.normalize_rotation().unwrap();
        assert_eq!(once, g.rotation);
        assert!((unit_quat_to_matrix(&once).determinant() - 1.0).abs() < 1e-12);
    }
}
