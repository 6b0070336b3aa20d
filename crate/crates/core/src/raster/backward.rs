//! Reverse-mode gradients of the tiled compositor.
//!
//! Each pixel's contributor list is recomputed front to back into a small
//! scratch buffer and then walked back to front. Per-tile partial sums are
//! reduced in tile order, so the result does not depend on the thread count.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::project::{projection_terms, ProjectedGaussian, ProjectionTerms};
use super::{bin, falloff, TRANSMITTANCE_EPS};
use crate::camera::{CameraModel, ProjectionMode};
use crate::gaussian::{GaussianPrimitive, GaussianSet, PrimitiveGrad};
use crate::image::Image;
use crate::math;
use crate::sh;

/// Gradient w.r.t. the screen-space quantities of one projected Gaussian.
#[derive(Clone, Copy, Default, Debug)]
struct Grad2d {
    mean: [f64; 2],
    /// d/da, d/db, d/dc for conic `[[a, b], [b, c]]` (b counted once).
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl Grad2d {
    fn add(&mut self, o: &Grad2d) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

struct Entry {
    slot: usize,
    alpha: f64,
    weight: f64,
    dx: f64,
    dy: f64,
    transmittance: f64,
}

/// Gradients of `⟨grad_color, color⟩ + ⟨grad_alpha, alpha⟩` w.r.t. every
/// pre-activation attribute of every primitive. Culled primitives get zeros.
pub fn rasterize_backward(
    set: &GaussianSet,
    camera: &CameraModel,
    background: [f64; 3],
    grad_color: &Image,
    grad_alpha: &Image,
) -> Vec<PrimitiveGrad> {
    let (width, height) = (camera.width, camera.height);
    assert!(grad_color.width == width && grad_color.height == height && grad_color.channels == 3);
    assert!(grad_alpha.width == width && grad_alpha.height == height && grad_alpha.channels == 1);

    let binned = bin(set, camera);
    let projected = &binned.projected;

    let partials: Vec<Vec<Grad2d>> = (0..binned.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = binned.tile_rect(tile, width, height);
            let list = &binned.tile_lists[tile];
            let mut local = vec![Grad2d::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let mut scratch: Vec<Entry> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let gc = grad_color.pixel(x, y);
                    let g_col = [gc[0], gc[1], gc[2]];
                    let g_alpha = grad_alpha.data[y * width + x];
                    if g_col == [0.0; 3] && g_alpha == 0.0 {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    scratch.clear();
                    let mut t = 1.0;
                    for (slot, &k) in list.iter().enumerate() {
                        let p = &projected[k as usize];
                        let Some((alpha, weight, dx, dy)) = falloff(p, px, py) else {
                            continue;
                        };
                        scratch.push(Entry {
                            slot,
                            alpha,
                            weight,
                            dx,
                            dy,
                            transmittance: t,
                        });
                        t *= 1.0 - alpha;
                        if t < TRANSMITTANCE_EPS {
                            break;
                        }
                    }
                    // color seen behind the current contributor, normalized by
                    // its transmittance, and the product of (1 - α) behind it
                    let mut behind = dot3(&g_col, &background);
                    let mut clear_behind = 1.0;
                    for e in scratch.iter().rev() {
                        let p = &projected[list[e.slot] as usize];
                        let g_dot_c = dot3(&g_col, &p.color);
                        let acc = &mut local[e.slot];
                        let wt = e.alpha * e.transmittance;
                        for c in 0..3 {
                            acc.color[c] += wt * g_col[c];
                        }
                        let d_alpha = e.transmittance * (g_dot_c - behind + g_alpha * clear_behind);
                        behind = e.alpha * g_dot_c + (1.0 - e.alpha) * behind;
                        clear_behind *= 1.0 - e.alpha;

                        acc.opacity += d_alpha * e.weight;
                        let g_d2 = -0.5 * d_alpha * p.opacity * e.weight;
                        let [a, b, c] = p.conic;
                        acc.conic[0] += g_d2 * e.dx * e.dx;
                        acc.conic[1] += g_d2 * 2.0 * e.dx * e.dy;
                        acc.conic[2] += g_d2 * e.dy * e.dy;
                        acc.mean[0] -= g_d2 * 2.0 * (a * e.dx + b * e.dy);
                        acc.mean[1] -= g_d2 * 2.0 * (b * e.dx + c * e.dy);
                    }
                }
            }
            local
        })
        .collect();

    let mut per_projected = vec![Grad2d::default(); projected.len()];
    for (tile, local) in partials.iter().enumerate() {
        for (slot, &k) in binned.tile_lists[tile].iter().enumerate() {
            per_projected[k as usize].add(&local[slot]);
        }
    }

    let degree = set.sh_degree;
    let chained: Vec<(usize, PrimitiveGrad)> = projected
        .par_iter()
        .zip(per_projected.par_iter())
        .map(|(p, g2)| {
            let prim = &set.primitives[p.index];
            let terms = projection_terms(prim, camera).expect("projected primitive has terms");
            (p.index, chain_to_primitive(prim, camera, degree, &terms, p, g2))
        })
        .collect();

    let mut grads = vec![PrimitiveGrad::default(); set.len()];
    for (i, g) in chained {
        grads[i] = g;
    }
    grads
}

#[inline]
fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn chain_to_primitive(
    prim: &GaussianPrimitive,
    camera: &CameraModel,
    degree: usize,
    terms: &ProjectionTerms,
    proj: &ProjectedGaussian,
    g: &Grad2d,
) -> PrimitiveGrad {
    let mut out = PrimitiveGrad::default();

    // conic -> 2D covariance -> (J·W, 3D covariance)
    let [a, b, c] = proj.conic;
    let q = Matrix2::new(a, b, b, c);
    let g_q = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2 = -(q * g_q * q);
    let jw = terms.jw;
    let g_cov3 = jw.transpose() * g_cov2 * jw;
    let g_jw = 2.0 * g_cov2 * jw * terms.cov3d;
    let g_j = g_jw * camera.rotation.transpose();

    // camera-space mean: through the 2D mean and through J
    let mut g_pc = terms.jacobian.transpose() * Vector2::new(g.mean[0], g.mean[1]);
    if camera.mode == ProjectionMode::Perspective {
        let k = &camera.intrinsics;
        let pc = &terms.point_cam;
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        g_pc.x += g_j[(0, 2)] * (-k.fx * iz2);
        g_pc.y += g_j[(1, 2)] * (-k.fy * iz2);
        g_pc.z += g_j[(0, 0)] * (-k.fx * iz2)
            + g_j[(0, 2)] * (2.0 * k.fx * pc.x * iz3)
            + g_j[(1, 1)] * (-k.fy * iz2)
            + g_j[(1, 2)] * (2.0 * k.fy * pc.y * iz3);
    }
    out.mean = camera.rotation.transpose() * g_pc;

    // view-dependent color
    let basis = sh::basis(&terms.view_dir);
    let bands = (degree + 1) * (degree + 1);
    for (k, bk) in basis.iter().enumerate().take(bands) {
        for ch in 0..3 {
            out.color[k * 3 + ch] = bk * g.color[ch];
        }
    }
    if degree > 0 && camera.mode == ProjectionMode::Perspective {
        let g_dir = sh::dir_grad(&prim.color, &g.color, degree);
        let d = &terms.view_dir;
        out.mean += (g_dir - d * d.dot(&g_dir)) / terms.view_dist;
    }

    let o = proj.opacity;
    out.opacity_logit = g.opacity * o * (1.0 - o);

    // Σ = M Mᵀ with M = R·diag(s)
    let s = terms.scale;
    let m = terms.rotation * math::Mat3::from_diagonal(&s);
    let g_m = 2.0 * g_cov3 * m;
    let mut g_r = g_m;
    for j in 0..3 {
        let col_dot = (0..3).map(|k| terms.rotation[(k, j)] * g_m[(k, j)]).sum::<f64>();
        out.log_scale[j] = col_dot * s[j];
        for k in 0..3 {
            g_r[(k, j)] = g_m[(k, j)] * s[j];
        }
    }
    let g_unit = math::unit_quat_matrix_grad(&terms.unit_quat, &g_r);
    out.rotation = math::normalize_grad(&prim.rotation, &g_unit);
    out
}
