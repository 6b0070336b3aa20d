//! Linear blend skinning of Gaussian primitives.
//!
//! Each primitive blends its joints' skinning transforms into `M·x + t_b`.
//! The mean is moved by the full blend (identical to mesh-vertex LBS at the
//! same point) and the rotation `R` used for the covariance, quaternion and
//! view-dependent color is the polar factor of `M`, so `p = R·p_c + t` with
//! `t = t_b + (M - R)·p_c`.

use rayon::prelude::*;

use super::skeleton::RigidTransform;
use crate::error::{Result, SplatError};
use crate::gaussian::{GaussianSet, PrimitiveGrad};
use crate::math::{self, Mat3, Vec3};
use crate::sh;

/// Tolerance on row sums of a skinning weight matrix.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Dense row-major `rows × joints` matrix of skinning weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinWeights {
    joints: usize,
    data: Vec<f64>,
}

impl SkinWeights {
    pub fn zeros(rows: usize, joints: usize) -> Self {
        Self {
            joints,
            data: vec![0.0; rows * joints],
        }
    }

    pub fn from_rows(joints: usize, data: Vec<f64>) -> Result<Self> {
        if joints == 0 || !data.len().is_multiple_of(joints) {
            return Err(SplatError::Dimension(format!(
                "{} weights do not form rows of {joints} joints",
                data.len()
            )));
        }
        Ok(Self { joints, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.joints
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.joints..(i + 1) * self.joints]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.joints..(i + 1) * self.joints]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Checks that every row is non-negative and sums to one.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.rows() {
            let row = self.row(i);
            let sum: f64 = row.iter().sum();
            let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
            if !((sum - 1.0).abs() <= WEIGHT_SUM_TOLERANCE) || !(min >= 0.0) {
                return Err(SplatError::NonStochasticWeights { row: i, sum, min });
            }
        }
        Ok(())
    }

    /// Selects rows by index.
    pub fn select(&self, rows: &[usize]) -> SkinWeights {
        let mut data = Vec::with_capacity(rows.len() * self.joints);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        SkinWeights {
            joints: self.joints,
            data,
        }
    }

    pub fn concat(&self, other: &SkinWeights) -> Result<SkinWeights> {
        if self.joints != other.joints {
            return Err(SplatError::Dimension("joint counts differ".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(SkinWeights {
            joints: self.joints,
            data,
        })
    }
}

/// Weight-blended transform of one primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendedTransform {
    /// `Σ w_j R_j` (not a rotation in general).
    pub linear: Mat3,
    /// `Σ w_j t_j`.
    pub offset: Vec3,
    /// Polar factor of `linear`.
    pub rotation: Mat3,
    pub rotation_quat: math::Quat,
    /// All joints with non-zero weight carry the identity transform.
    pub identity: bool,
}

impl BlendedTransform {
    pub fn new(weights: &[f64], transforms: &[RigidTransform]) -> Self {
        // a single distinct transform is used as is, so rigid parts and the
        // identity pose are reproduced exactly rather than up to weight rounding
        let mut active = weights.iter().zip(transforms).filter(|(w, _)| **w != 0.0).map(|(_, a)| a);
        if let Some(first) = active.next() {
            if active.all(|a| a == first) {
                return Self {
                    linear: first.rotation,
                    offset: first.translation,
                    rotation: first.rotation,
                    rotation_quat: math::matrix_to_quat(&first.rotation),
                    identity: *first == RigidTransform::identity(),
                };
            }
        }
        let mut linear = Mat3::zeros();
        let mut offset = Vec3::zeros();
        for (w, a) in weights.iter().zip(transforms) {
            if *w != 0.0 {
                linear += a.rotation * *w;
                offset += a.translation * *w;
            }
        }
        let rotation = math::polar_rotation(&linear);
        Self {
            linear,
            offset,
            rotation,
            rotation_quat: math::matrix_to_quat(&rotation),
            identity: false,
        }
    }

    #[inline]
    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.linear * p + self.offset
    }

    /// Translation `t` of the equivalent rigid map `R·p + t` at canonical point `p`.
    pub fn rigid_translation(&self, p: &Vec3) -> Vec3 {
        self.offset + (self.linear - self.rotation) * p
    }
}

pub fn blend_transforms(weights: &SkinWeights, transforms: &[RigidTransform]) -> Result<Vec<BlendedTransform>> {
    if weights.joints() != transforms.len() {
        return Err(SplatError::Dimension(format!(
            "weights have {} joints, {} transforms given",
            weights.joints(),
            transforms.len()
        )));
    }
    weights.validate()?;
    Ok((0..weights.rows())
        .into_par_iter()
        .map(|i| BlendedTransform::new(weights.row(i), transforms))
        .collect())
}

/// Poses every primitive of a canonical set.
pub fn skin_gaussians(
    set: &GaussianSet,
    weights: &SkinWeights,
    transforms: &[RigidTransform],
) -> Result<GaussianSet> {
    if weights.rows() != set.len() {
        return Err(SplatError::Correspondence(format!(
            "{} weight rows for {} primitives",
            weights.rows(),
            set.len()
        )));
    }
    let blends = blend_transforms(weights, transforms)?;
    Ok(skin_with_blends(set, &blends))
}

pub fn skin_with_blends(set: &GaussianSet, blends: &[BlendedTransform]) -> GaussianSet {
    let degree = set.sh_degree;
    let primitives = set
        .primitives
        .par_iter()
        .zip(blends.par_iter())
        .map(|(g, b)| {
            if b.identity {
                return *g;
            }
            let mut out = *g;
            out.mean = b.apply_point(&g.mean);
            out.rotation = b.rotation_quat * g.rotation;
            if degree > 0 {
                for ch in 0..3 {
                    let w = sh::band1_vector(&g.color, ch);
                    sh::set_band1_vector(&mut out.color, ch, &(b.rotation * w));
                }
            }
            out
        })
        .collect();
    GaussianSet {
        sh_degree: degree,
        primitives,
        tags: set.tags.clone(),
    }
}

/// Pulls gradients w.r.t. posed attributes back to canonical attributes.
pub fn skin_backward(posed_grads: &[PrimitiveGrad], blends: &[BlendedTransform], degree: usize) -> Vec<PrimitiveGrad> {
    posed_grads
        .par_iter()
        .zip(blends.par_iter())
        .map(|(g, b)| {
            let mut out = *g;
            out.mean = b.linear.transpose() * g.mean;
            out.rotation = math::quat_left_matrix(&b.rotation_quat).transpose() * g.rotation;
            if degree > 0 {
                for ch in 0..3 {
                    let gw = sh::band1_vector(&g.color, ch);
                    sh::set_band1_vector(&mut out.color, ch, &(b.rotation.transpose() * gw));
                }
            }
            out
        })
        .collect()
}

/// Classic mesh-vertex LBS.
pub fn skin_points(points: &[Vec3], weights: &SkinWeights, transforms: &[RigidTransform]) -> Vec<Vec3> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut out = Vec3::zeros();
            for (w, a) in weights.row(i).iter().zip(transforms) {
                if *w != 0.0 {
                    out += a.apply(p) * *w;
                }
            }
            out
        })
        .collect()
}
