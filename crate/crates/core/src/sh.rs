//! Real spherical harmonics up to degree 1 for view-dependent color.
//!
//! Coefficients are stored basis-major: `coeffs[k * 3 + channel]` with
//! `k = 0` the constant band and `k = 1..=3` the (y, z, x) linear bands.

use crate::error::{Result, SplatError};
use crate::math::Vec3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Maximum number of coefficients a primitive carries (degree 1, RGB).
pub const MAX_COEFFS: usize = 12;

pub const fn coeff_count(degree: usize) -> usize {
    3 * (degree + 1) * (degree + 1)
}

/// Basis values `[Y00, Y1-1, Y10, Y11]` for a unit direction.
#[inline]
pub fn basis(dir: &Vec3) -> [f64; 4] {
    [SH_C0, -SH_C1 * dir.y, SH_C1 * dir.z, -SH_C1 * dir.x]
}

/// Evaluates RGB color for the given coefficients and view direction.
pub fn eval_color(coeffs: &[f64], view_dir: &Vec3, degree: usize) -> Result<[f64; 3]> {
    if degree > 1 {
        return Err(SplatError::UnsupportedDegree(degree));
    }
    let expected = coeff_count(degree);
    if coeffs.len() != expected {
        return Err(SplatError::CoefficientLength {
            degree,
            expected,
            actual: coeffs.len(),
        });
    }
    Ok(eval_unchecked(coeffs, view_dir, degree))
}

#[inline]
pub(crate) fn eval_unchecked(coeffs: &[f64], view_dir: &Vec3, degree: usize) -> [f64; 3] {
    let b = basis(view_dir);
    let bands = (degree + 1) * (degree + 1);
    let mut rgb = [0.0; 3];
    for (k, bk) in b.iter().enumerate().take(bands) {
        for c in 0..3 {
            rgb[c] += bk * coeffs[k * 3 + c];
        }
    }
    rgb
}

/// Gradient of `⟨g_rgb, color⟩` w.r.t. the (unnormalized) view direction's
/// unit vector, for degree-1 coefficients. Zero for degree 0.
#[inline]
pub(crate) fn dir_grad(coeffs: &[f64], g_rgb: &[f64; 3], degree: usize) -> Vec3 {
    if degree == 0 {
        return Vec3::zeros();
    }
    let mut g = Vec3::zeros();
    for c in 0..3 {
        g.y -= SH_C1 * coeffs[3 + c] * g_rgb[c];
        g.z += SH_C1 * coeffs[6 + c] * g_rgb[c];
        g.x -= SH_C1 * coeffs[9 + c] * g_rgb[c];
    }
    g
}

/// The linear band of one channel written as a world vector `w`, so that the
/// band contributes `SH_C1 · w·d` for view direction `d`.
#[inline]
pub(crate) fn band1_vector(coeffs: &[f64], channel: usize) -> Vec3 {
    Vec3::new(-coeffs[9 + channel], -coeffs[3 + channel], coeffs[6 + channel])
}

#[inline]
pub(crate) fn set_band1_vector(coeffs: &mut [f64], channel: usize, w: &Vec3) {
    coeffs[9 + channel] = -w.x;
    coeffs[3 + channel] = -w.y;
    coeffs[6 + channel] = w.z;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_constant() {
        let c = [0.4, 1.2, -0.3];
        for d in [Vec3::x(), -Vec3::z(), Vec3::new(0.6, 0.0, 0.8)] {
            let rgb = eval_color(&c, &d, 0).unwrap();
            for k in 0..3 {
                assert!((rgb[k] - 0.282_094_79 * c[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn degree_one_flips_z_band() {
        let coeffs: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.3).collect();
        let up = eval_color(&coeffs, &Vec3::z(), 1).unwrap();
        let down = eval_color(&coeffs, &-Vec3::z(), 1).unwrap();
        for c in 0..3 {
            // z band basis is SH_C1 * z
            let band = SH_C1 * coeffs[6 + c];
            assert!(((up[c] - down[c]) - 2.0 * band).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_linear_band_reduces_to_degree_zero() {
        let mut coeffs = [0.0; 12];
        coeffs[..3].copy_from_slice(&[0.2, 0.5, 0.9]);
        let d = Vec3::new(0.3, -0.4, 0.866).normalize();
        let a = eval_color(&coeffs, &d, 1).unwrap();
        let b = eval_color(&coeffs[..3], &d, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            eval_color(&[0.0; 5], &Vec3::z(), 1),
            Err(SplatError::CoefficientLength { expected: 12, .. })
        ));
        assert!(matches!(eval_color(&[0.0; 3], &Vec3::z(), 2), Err(SplatError::UnsupportedDegree(2))));
    }

    #[test]
    fn band1_vector_round_trip_matches_evaluation() {
        let coeffs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = Vec3::new(0.2, 0.9, -0.4).normalize();
        let rgb = eval_color(&coeffs, &d, 1).unwrap();
        for c in 0..3 {
            let w = band1_vector(&coeffs, c);
            let expect = SH_C0 * coeffs[c] + SH_C1 * w.dot(&d);
            assert!((rgb[c] - expect).abs() < 1e-12);
            let mut copy = coeffs.clone();
            set_band1_vector(&mut copy, c, &w);
            assert_eq!(copy, coeffs);
        }
    }
}
