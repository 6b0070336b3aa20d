//! Small dense 3D helpers shared by the renderer, skinning and fitting code.
//!
//! Quaternions are `nalgebra::Quaternion<f64>` in (w, x, y, z) convention and are
//! *not* assumed normalized unless a function says so.

use nalgebra::{Matrix3, Matrix4, Quaternion, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = Quaternion<f64>;

/// Quaternions with a norm below this are treated as invalid.
pub const MIN_QUAT_NORM: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn quat_identity() -> Quat {
    Quaternion::new(1.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix of a unit quaternion. The caller normalizes.
pub fn unit_quat_to_matrix(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Normalizes and converts; `None` for a (near) zero quaternion.
pub fn quat_to_matrix(q: &Quat) -> Option<Mat3> {
    let n = q.norm();
    if !(n > MIN_QUAT_NORM) {
        return None;
    }
    Some(unit_quat_to_matrix(&(q / n)))
}

/// Gradient of a scalar w.r.t. the components (w, x, y, z) of a unit quaternion,
/// given the gradient `g` w.r.t. the rotation matrix it produces.
pub fn unit_quat_matrix_grad(q: &Quat, g: &Mat3) -> Vector4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(dw, dx, dy, dz)
}

/// Pulls a gradient w.r.t. `q / |q|` back to `q`.
pub fn normalize_grad(q: &Quat, g_unit: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    let u = Vector4::new(q.w, q.i, q.j, q.k) / n;
    (g_unit - u * u.dot(g_unit)) / n
}

/// Matrix `L(p)` such that `p ⊗ q = L(p) · q` with both in (w, x, y, z) order.
pub fn quat_left_matrix(p: &Quat) -> Matrix4<f64> {
    let (w, x, y, z) = (p.w, p.i, p.j, p.k);
    Matrix4::new(w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w)
}

/// Matrix `R(q)` such that `p ⊗ q = R(q) · p`.
pub fn quat_right_matrix(q: &Quat) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(w, -x, -y, -z, x, w, z, -y, y, -z, w, x, z, y, -x, w)
}

pub fn quat_to_vec4(q: &Quat) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

pub fn vec4_to_quat(v: &Vector4<f64>) -> Quat {
    Quaternion::new(v[0], v[1], v[2], v[3])
}

/// Unit quaternion of a rotation matrix (Shepperd's method), with w >= 0.
pub fn matrix_to_quat(m: &Mat3) -> Quat {
    let tr = m.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let q = q / q.norm();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// Quaternion exponential of a rotation vector: rotation by `|v|` about `v/|v|`.
pub fn exp_quat(v: &Vec3) -> Quat {
    let theta = v.norm();
    let (c, f) = half_angle_terms(theta);
    Quaternion::new(c, f * v.x, f * v.y, f * v.z)
}

// (cos(θ/2), sin(θ/2)/θ)
fn half_angle_terms(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
    } else {
        ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
    }
}

/// Jacobian (4×3, rows w,x,y,z) of [`exp_quat`].
pub fn exp_quat_jacobian(v: &Vec3) -> nalgebra::Matrix4x3<f64> {
    let theta = v.norm();
    let (_, f) = half_angle_terms(theta);
    // d/dv cos(θ/2) = -f/2 · v ; d/dv (f v) = f I + (f'/θ) v vᵀ
    let fp_over_theta = if theta < 1e-4 {
        -1.0 / 24.0 + theta * theta / 960.0
    } else {
        (0.5 * (0.5 * theta).cos() * theta - (0.5 * theta).sin()) / (theta * theta * theta)
    };
    let mut jac = nalgebra::Matrix4x3::zeros();
    for k in 0..3 {
        jac[(0, k)] = -0.5 * f * v[k];
        for r in 0..3 {
            jac[(r + 1, k)] = fp_over_theta * v[r] * v[k] + if r == k { f } else { 0.0 };
        }
    }
    jac
}

pub fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of an axis-angle vector (Rodrigues).
pub fn rodrigues(v: &Vec3) -> Mat3 {
    let theta = v.norm();
    let k = skew(v);
    let (a, b) = if theta < 1e-6 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Mat3::identity() + k * a + k * k * b
}

/// Partial derivatives `∂R/∂v_i` of [`rodrigues`].
pub fn rodrigues_derivatives(v: &Vec3) -> [Mat3; 3] {
    let theta2 = v.norm_squared();
    let e = [Vec3::x(), Vec3::y(), Vec3::z()];
    if theta2 < 1e-14 {
        return [skew(&e[0]), skew(&e[1]), skew(&e[2])];
    }
    let r = rodrigues(v);
    let id_minus_r = Mat3::identity() - r;
    let vx = skew(v);
    let mut out = [Mat3::zeros(); 3];
    for i in 0..3 {
        let cross = v.cross(&(id_minus_r * e[i]));
        out[i] = (vx * v[i] + skew(&cross)) / theta2 * r;
    }
    out
}

/// Wraps an axis-angle vector so that its magnitude is at most π while
/// describing the same rotation.
pub fn wrap_axis_angle(v: &Vec3) -> Vec3 {
    let theta = v.norm();
    if theta <= std::f64::consts::PI {
        return *v;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut wrapped = theta % two_pi;
    if wrapped > std::f64::consts::PI {
        wrapped -= two_pi;
    }
    v * (wrapped / theta)
}

/// Rotation factor of the polar decomposition `M = R·S` (closest rotation in
/// Frobenius norm), computed by SVD with a reflection fix.
pub fn polar_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Mat3::identity();
        d[(2, 2)] = -1.0;
        // singular values are sorted descending, so flip the smallest axis
        r = u * d * v_t;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_quat_grad(q: &Quat, g: &Mat3) -> Vector4<f64> {
        let h = 1e-6;
        let mut out = Vector4::zeros();
        let base = quat_to_vec4(q);
        for k in 0..4 {
            let mut p = base;
            p[k] += h;
            let mut m = base;
            m[k] -= h;
            let fp = unit_quat_to_matrix(&vec4_to_quat(&p)).component_mul(g).sum();
            let fm = unit_quat_to_matrix(&vec4_to_quat(&m)).component_mul(g).sum();
            out[k] = (fp - fm) / (2.0 * h);
        }
        out
    }

    #[test]
    fn quat_matrix_gradient_matches_fd() {
        let q = Quaternion::new(0.3, -0.5, 0.7, 0.2);
        let g = Matrix3::new(0.1, -0.4, 0.3, 0.9, 0.2, -0.6, 0.5, 0.8, -0.7);
        let a = unit_quat_matrix_grad(&q, &g);
        let f = fd_quat_grad(&q, &g);
        assert!((a - f).norm() < 1e-8, "{a} vs {f}");
    }

    #[test]
    fn matrix_quat_round_trip() {
        for v in [
            Vec3::new(0.1, 0.2, 0.3),
            Vec3::new(3.0, 0.1, -0.2),
            Vec3::new(0.0, -2.9, 0.4),
            Vec3::new(0.1, 0.0, 3.1),
        ] {
            let r = rodrigues(&v);
            let q = matrix_to_quat(&r);
            assert!((unit_quat_to_matrix(&q) - r).norm() < 1e-12);
            let qe = exp_quat(&v);
            assert!((unit_quat_to_matrix(&qe) - r).norm() < 1e-12);
        }
    }

    #[test]
    fn left_and_right_matrices_agree_with_product() {
        let p = Quaternion::new(0.2, 0.4, -0.1, 0.9);
        let q = Quaternion::new(-0.3, 0.5, 0.6, 0.1);
        let pq = quat_to_vec4(&(p * q));
        assert!((quat_left_matrix(&p) * quat_to_vec4(&q) - pq).norm() < 1e-14);
        assert!((quat_right_matrix(&q) * quat_to_vec4(&p) - pq).norm() < 1e-14);
    }

    #[test]
    fn exp_quat_jacobian_matches_fd() {
        for v in [Vec3::new(0.3, -0.2, 0.5), Vec3::new(1e-6, 2e-6, -1e-6), Vec3::zeros()] {
            let jac = exp_quat_jacobian(&v);
            let h = 1e-7;
            for k in 0..3 {
                let mut vp = v;
                vp[k] += h;
                let mut vm = v;
                vm[k] -= h;
                let d = (quat_to_vec4(&exp_quat(&vp)) - quat_to_vec4(&exp_quat(&vm))) / (2.0 * h);
                for r in 0..4 {
                    assert!((d[r] - jac[(r, k)]).abs() < 1e-7, "v={v:?} r={r} k={k}");
                }
            }
        }
    }

    #[test]
    fn rodrigues_derivatives_match_fd() {
        for v in [Vec3::new(0.3, -1.2, 0.5), Vec3::new(1e-9, 0.0, 0.0), Vec3::new(2.5, 0.3, 0.1)] {
            let d = rodrigues_derivatives(&v);
            let h = 1e-6;
            for i in 0..3 {
                let mut vp = v;
                vp[i] += h;
                let mut vm = v;
                vm[i] -= h;
                let fd = (rodrigues(&vp) - rodrigues(&vm)) / (2.0 * h);
                assert!((fd - d[i]).norm() < 1e-7, "v={v:?} i={i}");
            }
        }
    }

    #[test]
    fn wrap_keeps_rotation() {
        let v = Vec3::new(4.0, -1.0, 0.5);
        let w = wrap_axis_angle(&v);
        assert!(w.norm() <= std::f64::consts::PI);
        assert!((rodrigues(&v) - rodrigues(&w)).norm() < 1e-12);
    }

    #[test]
    fn polar_of_rotation_is_itself() {
        let r = rodrigues(&Vec3::new(0.4, 0.1, -0.8));
        assert!((polar_rotation(&r) - r).norm() < 1e-12);
        let blended = r * 0.5 + rodrigues(&Vec3::new(-0.2, 0.3, 0.1)) * 0.5;
        let p = polar_rotation(&blended);
        assert!((p * p.transpose() - Mat3::identity()).norm() < 1e-12);
        assert!((p.determinant() - 1.0).abs() < 1e-12);
    }
}
