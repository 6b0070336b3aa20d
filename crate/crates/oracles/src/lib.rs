//! Straightforward reference computations for checking the optimized code
//! paths. Everything here is written against plain arrays and shares no code
//! with `avsplat-core`.

pub mod mat;

pub use mat::{M3, V3};

/// Central finite difference of `f` at `x` with step `h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| <= abs || |a - b| <= rel · max(|a|, |b|)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let d = (a - b).abs();
    d <= abs || d <= rel * a.abs().max(b.abs())
}

// ---------------------------------------------------------------------------
// Brute-force Gaussian compositing
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RefGaussian {
    pub mean: V3,
    pub log_scale: V3,
    /// (w, x, y, z), not necessarily normalized.
    pub quat: [f64; 4],
    pub opacity_logit: f64,
    /// Basis-major RGB coefficients, 3 (degree 0) or 12 (degree 1).
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RefCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World → camera.
    pub rot: M3,
    pub trans: V3,
    pub width: usize,
    pub height: usize,
    pub perspective: bool,
}

pub struct RefImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
}

struct Splat {
    depth: f64,
    index: usize,
    mx: f64,
    my: f64,
    inv: [[f64; 2]; 2],
    opacity: f64,
    rgb: [f64; 3],
}

fn quat_rot(q: [f64; 4]) -> M3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

fn sh_rgb(coeffs: &[f64], d: V3) -> [f64; 3] {
    const C0: f64 = 0.282_094_791_773_878_14;
    const C1: f64 = 0.488_602_511_902_919_9;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = C0 * coeffs[c];
        if coeffs.len() == 12 {
            *o += -C1 * d[1] * coeffs[3 + c] + C1 * d[2] * coeffs[6 + c] - C1 * d[0] * coeffs[9 + c];
        }
    }
    out
}

/// Evaluates the compositing sum at every pixel center by scanning every
/// Gaussian in global (depth, index) order. No tiling and no bounding boxes.
pub fn render_brute_force(gs: &[RefGaussian], cam: &RefCamera, bg: [f64; 3]) -> RefImage {
    let mut splats = Vec::new();
    let cam_center = mat::neg(mat::mul_vec(&mat::transpose(&cam.rot), cam.trans));
    for (index, g) in gs.iter().enumerate() {
        let pc = mat::add(mat::mul_vec(&cam.rot, g.mean), cam.trans);
        if pc[2] <= 0.01 {
            continue;
        }
        let r = quat_rot(g.quat);
        let s = [g.log_scale[0].exp(), g.log_scale[1].exp(), g.log_scale[2].exp()];
        let mut sigma = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                sigma[i][j] = (0..3).map(|k| r[i][k] * s[k] * s[k] * r[j][k]).sum();
            }
        }
        let jac: [[f64; 3]; 2] = if cam.perspective {
            [
                [cam.fx / pc[2], 0.0, -cam.fx * pc[0] / (pc[2] * pc[2])],
                [0.0, cam.fy / pc[2], -cam.fy * pc[1] / (pc[2] * pc[2])],
            ]
        } else {
            [[cam.fx, 0.0, 0.0], [0.0, cam.fy, 0.0]]
        };
        // T = J·W (2×3), Σ' = T Σ Tᵀ
        let mut t = [[0.0; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                t[i][j] = (0..3).map(|k| jac[i][k] * cam.rot[k][j]).sum();
            }
        }
        let mut c2 = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += t[i][a] * sigma[a][b] * t[j][b];
                    }
                }
                c2[i][j] = acc;
            }
        }
        let off = 0.5 * (c2[0][1] + c2[1][0]);
        let (a, b, c) = (c2[0][0] + 0.3, off, c2[1][1] + 0.3);
        let det = a * c - b * b;
        let (mx, my) = if cam.perspective {
            (cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy)
        } else {
            (cam.fx * pc[0] + cam.cx, cam.fy * pc[1] + cam.cy)
        };
        let dir = if cam.perspective {
            mat::normalize(mat::sub(g.mean, cam_center))
        } else {
            cam.rot[2]
        };
        splats.push(Splat {
            depth: pc[2],
            index,
            mx,
            my,
            inv: [[c / det, -b / det], [-b / det, a / det]],
            opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
            rgb: sh_rgb(&g.coeffs, dir),
        });
    }
    splats.sort_by(|p, q| p.depth.partial_cmp(&q.depth).unwrap().then(p.index.cmp(&q.index)));

    let mut rgb = Vec::with_capacity(cam.width * cam.height);
    let mut alpha = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut color = [0.0; 3];
            let mut trans = 1.0;
            for s in &splats {
                let dx = px - s.mx;
                let dy = py - s.my;
                let d2 = dx * (s.inv[0][0] * dx + s.inv[0][1] * dy) + dy * (s.inv[1][0] * dx + s.inv[1][1] * dy);
                if d2 > 9.0 {
                    continue;
                }
                let a = s.opacity * (-0.5 * d2).exp();
                for c in 0..3 {
                    color[c] += a * trans * s.rgb[c];
                }
                trans *= 1.0 - a;
                if trans < 1e-4 {
                    break;
                }
            }
            rgb.push([color[0] + trans * bg[0], color[1] + trans * bg[1], color[2] + trans * bg[2]]);
            alpha.push(1.0 - trans);
        }
    }
    RefImage {
        width: cam.width,
        height: cam.height,
        rgb,
        alpha,
    }
}

// ---------------------------------------------------------------------------
// Kinematics and skinning
// ---------------------------------------------------------------------------

/// Rigid transform as a 4×4 row-major matrix.
pub type M4 = [[f64; 4]; 4];

pub fn m4_identity() -> M4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

pub fn m4_from_rt(r: &M3, t: V3) -> M4 {
    let mut m = m4_identity();
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j];
        }
        m[i][3] = t[i];
    }
    m
}

pub fn m4_apply(m: &M4, p: V3) -> V3 {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
    ]
}

/// Axis-angle to rotation matrix via the matrix exponential series.
pub fn axis_angle_matrix(v: V3) -> M3 {
    let k = [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]];
    let mut out = mat::identity();
    let mut term = mat::identity();
    for n in 1..40 {
        term = mat::scale(&mat::mul(&term, &k), 1.0 / n as f64);
        out = mat::add_m(&out, &term);
    }
    out
}

/// World transform of each joint as the explicit product of every ancestor's
/// local matrix, root first.
pub fn chain_world_transforms(parents: &[Option<usize>], locals: &[M4]) -> Vec<M4> {
    (0..parents.len())
        .map(|j| {
            let mut chain = vec![j];
            let mut cur = j;
            while let Some(p) = parents[cur] {
                chain.push(p);
                cur = p;
            }
            chain.iter().rev().fold(m4_identity(), |acc, &k| m4_mul(&acc, &locals[k]))
        })
        .collect()
}

/// Classic vertex linear blend skinning: `Σ_j w_j · A_j · [v; 1]`.
pub fn lbs_vertex(v: V3, weights: &[f64], transforms: &[M4]) -> V3 {
    let mut out = [0.0; 3];
    for (w, a) in weights.iter().zip(transforms) {
        let p = m4_apply(a, v);
        for k in 0..3 {
            out[k] += w * p[k];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Nearest-triangle binding
// ---------------------------------------------------------------------------

/// Closest point on triangle `abc` to `p` as barycentric coordinates,
/// found by projecting onto the plane and, when outside, taking the best of
/// the three clamped edge projections.
pub fn closest_point_barycentric(p: V3, a: V3, b: V3, c: V3) -> [f64; 3] {
    let ab = mat::sub(b, a);
    let ac = mat::sub(c, a);
    let ap = mat::sub(p, a);
    let d00 = mat::dot(ab, ab);
    let d01 = mat::dot(ab, ac);
    let d11 = mat::dot(ac, ac);
    let d20 = mat::dot(ap, ab);
    let d21 = mat::dot(ap, ac);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    let u = 1.0 - v - w;
    if u >= 0.0 && v >= 0.0 && w >= 0.0 {
        return [u, v, w];
    }
    let edges = [(a, b, 0usize, 1usize), (b, c, 1, 2), (a, c, 0, 2)];
    let mut best = (f64::INFINITY, [1.0, 0.0, 0.0]);
    for (s, e, i, j) in edges {
        let se = mat::sub(e, s);
        let t = (mat::dot(mat::sub(p, s), se) / mat::dot(se, se)).clamp(0.0, 1.0);
        let q = mat::add(s, mat::scale_v(se, t));
        let d = mat::dot(mat::sub(p, q), mat::sub(p, q));
        if d < best.0 {
            let mut bary = [0.0; 3];
            bary[i] = 1.0 - t;
            bary[j] = t;
            best = (d, bary);
        }
    }
    best.1
}

/// Exhaustive scan over all triangles; returns (triangle index, barycentric, squared distance).
pub fn nearest_triangle(p: V3, verts: &[V3], tris: &[[usize; 3]]) -> (usize, [f64; 3], f64) {
    let mut best = (0, [1.0, 0.0, 0.0], f64::INFINITY);
    for (t, tri) in tris.iter().enumerate() {
        let (a, b, c) = (verts[tri[0]], verts[tri[1]], verts[tri[2]]);
        let bary = closest_point_barycentric(p, a, b, c);
        let q = [
            bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
            bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
            bary[0] * a[2] + bary[1] * b[2] + bary[2] * c[2],
        ];
        let d = mat::dot(mat::sub(p, q), mat::sub(p, q));
        if d < best.2 {
            best = (t, bary, d);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Image metrics
// ---------------------------------------------------------------------------

/// SSIM straight from its definition: for every valid 11×11 window position
/// the Gaussian-weighted moments are summed directly (no separable filtering),
/// then the map is averaged over positions and channels.
pub fn ssim_direct(a: &[f64], b: &[f64], width: usize, height: usize, channels: usize) -> f64 {
    const K: usize = 11;
    const SIGMA: f64 = 1.5;
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut win = [[0.0; K]; K];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            *w = (-(di * di + dj * dj) / (2.0 * SIGMA * SIGMA)).exp();
            total += *w;
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..channels {
        for y0 in 0..=height - K {
            for x0 in 0..=width - K {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let idx = ((y0 + i) * width + x0 + j) * channels + ch;
                        let w = win[i][j] / total;
                        ma += w * a[idx];
                        mb += w * b[idx];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let idx = ((y0 + i) * width + x0 + j) * channels + ch;
                        let w = win[i][j] / total;
                        va += w * (a[idx] - ma) * (a[idx] - ma);
                        vb += w * (b[idx] - mb) * (b[idx] - mb);
                        cov += w * (a[idx] - ma) * (b[idx] - mb);
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}
