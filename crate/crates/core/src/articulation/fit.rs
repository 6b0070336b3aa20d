//! Shape and pose fitting of the parametric template to target vertices and joints.
//!
//! Minimizes `E(β, θ, τ) = Σ‖V_i − V*_i‖² + λ Σ‖J_j − J*_j‖²` over shape β,
//! per-joint axis-angle θ and root translation τ. Each iteration takes the
//! Levenberg–Marquardt scaled gradient direction `−(JᵀJ + μ·diag(JᵀJ))⁻¹ Jᵀr`
//! and backtracks along it until the Armijo condition holds, so accepted
//! iterations never increase the objective.

use nalgebra::{DMatrix, DVector};

use super::puppet::SkinnedTemplate;
use super::skeleton::Pose;
use crate::error::{Result, SplatError};
use crate::math::{self, Mat3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub relative_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            relative_tolerance: 1e-9,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub pose: Pose,
    pub objective: f64,
    /// Root-mean-square vertex distance (m).
    pub vertex_rms: f64,
    /// Root-mean-square joint distance (m).
    pub joint_rms: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out first.
    pub converged: bool,
    /// Objective after every accepted iteration, starting with the initial value.
    pub history: Vec<f64>,
}

struct Layout {
    shape: usize,
    joints: usize,
}

impl Layout {
    fn params(&self) -> usize {
        self.shape + 3 * self.joints + 3
    }
    fn theta(&self, j: usize) -> usize {
        self.shape + 3 * j
    }
    fn tau(&self) -> usize {
        self.shape + 3 * self.joints
    }
    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Pose) {
        let beta = x[..self.shape].to_vec();
        let rotations = (0..self.joints)
            .map(|j| Vec3::from_column_slice(&x[self.theta(j)..self.theta(j) + 3]))
            .collect();
        let t = self.tau();
        (
            beta,
            Pose {
                rotations,
                translation: Vec3::new(x[t], x[t + 1], x[t + 2]),
            },
        )
    }
    fn wrap(&self, x: &mut [f64]) {
        for j in 0..self.joints {
            let i = self.theta(j);
            let w = math::wrap_axis_angle(&Vec3::from_column_slice(&x[i..i + 3]));
            x[i..i + 3].copy_from_slice(w.as_slice());
        }
    }
}

struct Evaluation {
    vertices: Vec<Vec3>,
    joints: Vec<Vec3>,
    /// `[param][vertex]` derivatives, present when requested.
    d_vertices: Vec<Vec<Vec3>>,
    d_joints: Vec<Vec<Vec3>>,
}

/// Posed vertices and joints, with forward-mode derivatives when `jacobian`.
fn evaluate(t: &SkinnedTemplate, lay: &Layout, x: &[f64], jacobian: bool) -> Evaluation {
    let (beta, pose) = lay.unpack(x);
    let nj = lay.joints;
    let np = if jacobian { lay.params() } else { 0 };
    let rest_v = t.shaped_vertices(&beta);
    let rest_j = t.shaped_joints(&beta);
    let parents = t.skeleton.parents();

    let rots: Vec<Mat3> = pose.rotations.iter().map(math::rodrigues).collect();
    let drots: Vec<[Mat3; 3]> = if jacobian {
        pose.rotations.iter().map(math::rodrigues_derivatives).collect()
    } else {
        Vec::new()
    };

    let mut rw = vec![Mat3::identity(); nj];
    let mut tw = vec![Vec3::zeros(); nj];
    let mut d_rw = vec![vec![Mat3::zeros(); nj]; np];
    let mut d_tw = vec![vec![Vec3::zeros(); nj]; np];
    for j in 0..nj {
        let offset = match parents[j] {
            Some(p) => rest_j[j] - rest_j[p],
            None => rest_j[j] + pose.translation,
        };
        match parents[j] {
            Some(p) => {
                rw[j] = rw[p] * rots[j];
                tw[j] = rw[p] * offset + tw[p];
            }
            None => {
                rw[j] = rots[j];
                tw[j] = offset;
            }
        }
        for k in 0..np {
            let mut d_off = Vec3::zeros();
            if k < lay.shape {
                d_off = t.joint_shape_dirs[k][j];
                if let Some(p) = parents[j] {
                    d_off -= t.joint_shape_dirs[k][p];
                }
            } else if k >= lay.tau() && parents[j].is_none() {
                d_off[k - lay.tau()] = 1.0;
            }
            let d_rot = if k >= lay.theta(j) && k < lay.theta(j) + 3 {
                drots[j][k - lay.theta(j)]
            } else {
                Mat3::zeros()
            };
            match parents[j] {
                Some(p) => {
                    d_rw[k][j] = d_rw[k][p] * rots[j] + rw[p] * d_rot;
                    d_tw[k][j] = d_rw[k][p] * offset + rw[p] * d_off + d_tw[k][p];
                }
                None => {
                    d_rw[k][j] = d_rot;
                    d_tw[k][j] = d_off;
                }
            }
        }
    }

    // skinning transforms A_j = (R_j, t_j) with t_j = tw_j − R_j·rest_j
    let ta: Vec<Vec3> = (0..nj).map(|j| tw[j] - rw[j] * rest_j[j]).collect();
    let mut d_ta = vec![vec![Vec3::zeros(); nj]; np];
    for k in 0..np {
        for j in 0..nj {
            let d_rest = if k < lay.shape { t.joint_shape_dirs[k][j] } else { Vec3::zeros() };
            d_ta[k][j] = d_tw[k][j] - d_rw[k][j] * rest_j[j] - rw[j] * d_rest;
        }
    }

    let nv = rest_v.len();
    let mut vertices = vec![Vec3::zeros(); nv];
    let mut d_vertices = vec![vec![Vec3::zeros(); nv]; np];
    for i in 0..nv {
        let row = t.weights.row(i);
        let v = rest_v[i];
        for (j, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            vertices[i] += (rw[j] * v + ta[j]) * w;
            for k in 0..np {
                let mut d = d_rw[k][j] * v + d_ta[k][j];
                if k < lay.shape {
                    d += rw[j] * t.shape_dirs[k][i];
                }
                d_vertices[k][i] += d * w;
            }
        }
    }
    Evaluation {
        vertices,
        joints: tw,
        d_vertices,
        d_joints: d_tw,
    }
}

fn objective(ev: &Evaluation, tv: &[Vec3], tj: &[Vec3], lambda: f64) -> (f64, f64, f64) {
    let ev_v: f64 = ev.vertices.iter().zip(tv).map(|(a, b)| (a - b).norm_squared()).sum();
    let ev_j: f64 = ev.joints.iter().zip(tj).map(|(a, b)| (a - b).norm_squared()).sum();
    (ev_v + lambda * ev_j, ev_v, ev_j)
}

/// Fits (β, θ, τ) starting from the rest pose.
pub fn fit_template(
    template: &SkinnedTemplate,
    target_vertices: &[Vec3],
    target_joints: &[Vec3],
    lambda: f64,
    options: &FitOptions,
) -> Result<FitResult> {
    if target_vertices.len() != template.vertices.len() {
        return Err(SplatError::Dimension(format!(
            "{} target vertices for a template with {}",
            target_vertices.len(),
            template.vertices.len()
        )));
    }
    if target_joints.len() != template.joint_count() {
        return Err(SplatError::Dimension(format!(
            "{} target joints for a skeleton with {}",
            target_joints.len(),
            template.joint_count()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SplatError::Invalid(format!("joint weight λ must be a finite value ≥ 0, got {lambda}")));
    }
    let lay = Layout {
        shape: template.shape_dim(),
        joints: template.joint_count(),
    };
    let np = lay.params();
    let sqrt_l = lambda.sqrt();
    let mut x = vec![0.0; np];
    let mut ev = evaluate(template, &lay, &x, true);
    let (mut e, _, _) = objective(&ev, target_vertices, target_joints, lambda);
    let mut history = vec![e];
    let mut mu = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        if e == 0.0 {
            converged = true;
            break;
        }
        // normal equations of the stacked residual [V − V*; √λ (J − J*)]
        let mut h = DMatrix::<f64>::zeros(np, np);
        let mut g = DVector::<f64>::zeros(np);
        let mut accumulate = |res: &Vec3, cols: &dyn Fn(usize) -> Vec3, scale: f64| {
            let jc: Vec<Vec3> = (0..np).map(|k| cols(k) * scale).collect();
            for a in 0..np {
                g[a] += jc[a].dot(res) * scale;
                for b in a..np {
                    h[(a, b)] += jc[a].dot(&jc[b]);
                }
            }
        };
        for i in 0..ev.vertices.len() {
            let res = ev.vertices[i] - target_vertices[i];
            accumulate(&res, &|k| ev.d_vertices[k][i], 1.0);
        }
        if lambda > 0.0 {
            for j in 0..ev.joints.len() {
                let res = ev.joints[j] - target_joints[j];
                accumulate(&res, &|k| ev.d_joints[k][j], sqrt_l);
            }
        }
        for a in 0..np {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let max_diag = (0..np).map(|a| h[(a, a)]).fold(0.0, f64::max);
        let mut damped = h.clone();
        for a in 0..np {
            damped[(a, a)] += mu * h[(a, a)] + 1e-15 * max_diag;
        }
        let step = match damped.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -&g,
        };
        let slope = 2.0 * g.dot(&step);
        if !(slope < 0.0) {
            converged = true;
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            lay.wrap(&mut trial);
            let tev = evaluate(template, &lay, &trial, false);
            let (te, _, _) = objective(&tev, target_vertices, target_joints, lambda);
            if te <= e + 1e-4 * alpha * slope {
                accepted = Some((trial, te));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, te)) = accepted else {
            // no representable decrease along a descent direction: stationary
            converged = true;
            break;
        };
        iterations += 1;
        let rel = (e - te) / e;
        x = trial;
        e = te;
        history.push(e);
        mu = if alpha == 1.0 { (mu / 3.0).max(1e-12) } else { (mu * 4.0).min(1e8) };
        if rel < options.relative_tolerance {
            converged = true;
            break;
        }
        ev = evaluate(template, &lay, &x, true);
    }

    let fin = evaluate(template, &lay, &x, false);
    let (objective_value, ev_v, ev_j) = objective(&fin, target_vertices, target_joints, lambda);
    let (beta, pose) = lay.unpack(&x);
    Ok(FitResult {
        beta,
        pose,
        objective: objective_value,
        vertex_rms: (ev_v / target_vertices.len() as f64).sqrt(),
        joint_rms: (ev_j / target_joints.len() as f64).sqrt(),
        iterations,
        converged,
        history,
    })
}
