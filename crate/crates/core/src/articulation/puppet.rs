//! Built-in parametric humanoid puppet.
//!
//! The body is a union of closed capsules and an ellipsoidal head, standing
//! with feet at z = 0, facing +y, arms in an A-pose. Every vertex and joint
//! position is an affine function of the shape vector β, so the linear
//! blendshapes extracted from the generator reproduce it exactly.

use super::skeleton::{Pose, RigidTransform, Skeleton};
use super::skinning::{skin_points, SkinWeights};
use crate::error::{Result, SplatError};
use crate::math::Vec3;

pub const JOINT_NAMES: [&str; 12] = [
    "root",
    "spine",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "r_shoulder",
    "r_elbow",
    "l_hip",
    "l_knee",
    "r_hip",
    "r_knee",
];
pub const JOINT_PARENTS: [Option<usize>; 12] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(1),
    Some(4),
    Some(1),
    Some(6),
    Some(0),
    Some(8),
    Some(0),
    Some(10),
];
pub const ROOT_JOINT: usize = 0;
pub const NECK_JOINT: usize = 2;
pub const HEAD_JOINT: usize = 3;

/// Shape components: limb length, torso length, girth, head size.
pub const SHAPE_DIM: usize = 4;

pub const PART_NAMES: [&str; 12] = [
    "pelvis",
    "chest",
    "neck",
    "head",
    "l_upper_arm",
    "l_forearm",
    "r_upper_arm",
    "r_forearm",
    "l_thigh",
    "l_shin",
    "r_thigh",
    "r_shin",
];

/// Parametric skinned mesh: shape blendshapes, skeleton and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedTemplate {
    /// Skeleton at β = 0.
    pub skeleton: Skeleton,
    /// Canonical vertices at β = 0.
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub weights: SkinWeights,
    /// Vertex offsets per unit of each shape component, `[S][N]`.
    pub shape_dirs: Vec<Vec<Vec3>>,
    /// Joint offsets per unit of each shape component, `[S][J]`.
    pub joint_shape_dirs: Vec<Vec<Vec3>>,
    /// Body part index of every vertex (into [`PART_NAMES`]).
    pub vertex_part: Vec<usize>,
}

impl SkinnedTemplate {
    pub fn joint_count(&self) -> usize {
        self.skeleton.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dirs.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        let n = self.vertices.len();
        if self.weights.rows() != n || self.weights.joints() != self.skeleton.len() {
            return Err(SplatError::Dimension("skinning weights do not match vertices × joints".into()));
        }
        if self.vertex_part.len() != n {
            return Err(SplatError::Dimension("vertex part labels do not match vertices".into()));
        }
        if self.shape_dirs.len() != self.joint_shape_dirs.len()
            || self.shape_dirs.iter().any(|d| d.len() != n)
            || self.joint_shape_dirs.iter().any(|d| d.len() != self.skeleton.len())
        {
            return Err(SplatError::Dimension("shape directions are inconsistent".into()));
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&v| v >= n)) {
            return Err(SplatError::Invalid(format!("face {f:?} indexes past {n} vertices")));
        }
        self.weights.validate()
    }

    fn check_beta(&self, beta: &[f64]) {
        assert_eq!(beta.len(), self.shape_dim(), "shape vector length");
    }

    pub fn shaped_vertices(&self, beta: &[f64]) -> Vec<Vec3> {
        self.check_beta(beta);
        let mut v = self.vertices.clone();
        for (b, dirs) in beta.iter().zip(&self.shape_dirs) {
            if *b != 0.0 {
                for (p, d) in v.iter_mut().zip(dirs) {
                    *p += d * *b;
                }
            }
        }
        v
    }

    pub fn shaped_joints(&self, beta: &[f64]) -> Vec<Vec3> {
        self.check_beta(beta);
        let mut j = self.skeleton.rest_positions();
        for (b, dirs) in beta.iter().zip(&self.joint_shape_dirs) {
            if *b != 0.0 {
                for (p, d) in j.iter_mut().zip(dirs) {
                    *p += d * *b;
                }
            }
        }
        j
    }

    pub fn shaped_skeleton(&self, beta: &[f64]) -> Skeleton {
        let names: Vec<&str> = self.skeleton.joints.iter().map(|j| j.name.as_str()).collect();
        Skeleton::from_rest_positions(&names, &self.skeleton.parents(), &self.shaped_joints(beta))
            .expect("shaped skeleton keeps the topology")
    }

    pub fn skinning_transforms(&self, beta: &[f64], pose: &Pose) -> Vec<RigidTransform> {
        super::skeleton::skinning_transforms(&self.shaped_skeleton(beta), pose)
    }

    /// Posed mesh vertices `V(β, θ)`.
    pub fn posed_vertices(&self, beta: &[f64], pose: &Pose) -> Vec<Vec3> {
        let a = self.skinning_transforms(beta, pose);
        skin_points(&self.shaped_vertices(beta), &self.weights, &a)
    }

    /// Posed joint positions `J(β, θ)`.
    pub fn posed_joints(&self, beta: &[f64], pose: &Pose) -> Vec<Vec3> {
        super::skeleton::forward_kinematics(&self.shaped_skeleton(beta), pose)
            .iter()
            .map(|g| g.translation)
            .collect()
    }

    /// Vertices whose weight on `joint` exceeds `threshold`.
    pub fn vertices_bound_to(&self, joint: usize, threshold: f64) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&i| self.weights.row(i)[joint] > threshold).collect()
    }

    /// Builds the default puppet.
    pub fn puppet() -> Self {
        let base = generate(&[0.0; SHAPE_DIM]);
        let mut shape_dirs = Vec::with_capacity(SHAPE_DIM);
        let mut joint_shape_dirs = Vec::with_capacity(SHAPE_DIM);
        for s in 0..SHAPE_DIM {
            let mut beta = [0.0; SHAPE_DIM];
            beta[s] = 1.0;
            let g = generate(&beta);
            shape_dirs.push(g.vertices.iter().zip(&base.vertices).map(|(a, b)| a - b).collect());
            joint_shape_dirs.push(g.joints.iter().zip(&base.joints).map(|(a, b)| a - b).collect());
        }
        let skeleton = Skeleton::from_rest_positions(&JOINT_NAMES, &JOINT_PARENTS, &base.joints)
            .expect("built-in skeleton is valid");
        SkinnedTemplate {
            skeleton,
            vertices: base.vertices,
            faces: base.faces,
            weights: SkinWeights::from_rows(JOINT_NAMES.len(), base.weights).expect("weight rows"),
            shape_dirs,
            joint_shape_dirs,
            vertex_part: base.parts,
        }
    }
}

pub(crate) struct Generated {
    pub joints: Vec<Vec3>,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub weights: Vec<f64>,
    pub parts: Vec<usize>,
}

/// One closed capsule: a segment from `a` along unit `dir` of length `len`,
/// elliptical cross-section radii `(ru, rv)` and cap half-length `cap`.
struct Capsule {
    part: usize,
    joint: usize,
    /// Joint blended in near the proximal end.
    blend_parent: Option<usize>,
    a: Vec3,
    dir: Vec3,
    len: f64,
    ru: f64,
    rv: f64,
    cap: f64,
    segments: usize,
    cap_rings: usize,
    /// Interior cylinder rings, fixed from the β = 0 length.
    cyl_rings: usize,
}

fn cylinder_rings(nominal_len: f64) -> usize {
    if nominal_len > 0.0 {
        ((nominal_len / RING_SPACING).ceil() as usize).max(1)
    } else {
        0
    }
}

/// Distance over which weight moves from a 50/50 split to the part's own joint.
const BLEND_ZONE: f64 = 0.08;
/// Longitudinal spacing of cylinder rings.
const RING_SPACING: f64 = 0.05;

/// Generates joints and mesh for shape vector `beta`. Every output coordinate
/// is affine in `beta`; topology and weights do not depend on it.
pub(crate) fn generate(beta: &[f64; SHAPE_DIM]) -> Generated {
    let limb = 1.0 + 0.08 * beta[0];
    let torso = 1.0 + 0.08 * beta[1];
    let girth = 1.0 + 0.1 * beta[2];
    let head = 1.0 + 0.1 * beta[3];

    let down = -Vec3::z();
    let up = Vec3::z();
    let shin_r = 0.055 * girth;
    let ankle_z = shin_r;
    let shin_len = 0.42 * limb;
    let thigh_len = 0.42 * limb;
    let knee_z = ankle_z + shin_len;
    let hip_z = knee_z + thigh_len;
    let root_z = hip_z + 0.03;
    let hip_x = 0.09 * girth;

    let root = Vec3::new(0.0, 0.0, root_z);
    let spine = root + up * (0.15 * torso);
    let neck = spine + up * (0.33 * torso);
    let head_j = neck + up * (0.14 * head);
    let shoulder_z = spine.z + 0.26 * torso;
    let l_sh = Vec3::new(-0.19 * girth, 0.0, shoulder_z);
    let r_sh = Vec3::new(0.19 * girth, 0.0, shoulder_z);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let l_arm = Vec3::new(-s, 0.0, -s);
    let r_arm = Vec3::new(s, 0.0, -s);
    let upper_len = 0.28 * limb;
    let fore_len = 0.26 * limb;
    let l_el = l_sh + l_arm * upper_len;
    let r_el = r_sh + r_arm * upper_len;
    let l_hip = Vec3::new(-hip_x, 0.0, hip_z);
    let r_hip = Vec3::new(hip_x, 0.0, hip_z);
    let l_knee = Vec3::new(-hip_x, 0.0, knee_z);
    let r_knee = Vec3::new(hip_x, 0.0, knee_z);
    let joints = vec![root, spine, neck, head_j, l_sh, l_el, r_sh, r_el, l_hip, l_knee, r_hip, r_knee];

    let limb_capsule = |part, joint, parent, a: Vec3, dir: Vec3, len, nominal, r| Capsule {
        part,
        joint,
        blend_parent: Some(parent),
        a,
        dir,
        len,
        ru: r,
        rv: r,
        cap: r,
        segments: 12,
        cap_rings: 4,
        cyl_rings: cylinder_rings(nominal),
    };
    let capsules = [
        Capsule {
            part: 0,
            joint: 0,
            blend_parent: None,
            a: root + down * 0.02,
            dir: up,
            len: 0.14 * torso,
            ru: 0.15 * girth,
            rv: 0.10 * girth,
            cap: 0.08 * girth,
            segments: 16,
            cap_rings: 4,
            cyl_rings: cylinder_rings(0.14),
        },
        Capsule {
            part: 1,
            joint: 1,
            blend_parent: Some(0),
            a: spine + down * 0.01,
            dir: up,
            len: 0.27 * torso,
            ru: 0.16 * girth,
            rv: 0.10 * girth,
            cap: 0.08 * girth,
            segments: 16,
            cap_rings: 4,
            cyl_rings: cylinder_rings(0.27),
        },
        Capsule {
            part: 2,
            joint: 2,
            blend_parent: Some(1),
            a: neck + down * 0.04,
            dir: up,
            len: 0.08 * head,
            ru: 0.05 * girth,
            rv: 0.05 * girth,
            cap: 0.03 * girth,
            segments: 12,
            cap_rings: 3,
            cyl_rings: cylinder_rings(0.08),
        },
        Capsule {
            part: 3,
            joint: 3,
            blend_parent: None,
            a: head_j,
            dir: up,
            len: 0.0,
            ru: 0.085 * head,
            rv: 0.095 * head,
            cap: 0.11 * head,
            segments: 20,
            cap_rings: 8,
            cyl_rings: 0,
        },
        limb_capsule(4, 4, 1, l_sh, l_arm, upper_len, 0.28, 0.045 * girth),
        limb_capsule(5, 5, 4, l_el, l_arm, fore_len, 0.26, 0.038 * girth),
        limb_capsule(6, 6, 1, r_sh, r_arm, upper_len, 0.28, 0.045 * girth),
        limb_capsule(7, 7, 6, r_el, r_arm, fore_len, 0.26, 0.038 * girth),
        limb_capsule(8, 8, 0, l_hip, down, thigh_len, 0.42, 0.07 * girth),
        limb_capsule(9, 9, 8, l_knee, down, shin_len, 0.42, shin_r),
        limb_capsule(10, 10, 0, r_hip, down, thigh_len, 0.42, 0.07 * girth),
        limb_capsule(11, 11, 10, r_knee, down, shin_len, 0.42, shin_r),
    ];

    let mut out = Generated {
        joints,
        vertices: Vec::new(),
        faces: Vec::new(),
        weights: Vec::new(),
        parts: Vec::new(),
    };
    for c in &capsules {
        emit_capsule(c, &mut out);
    }
    out
}

/// Axial fractions of the length and of the cap for each ring, plus the
/// cross-section scale. Shape-independent, which keeps output affine in β.
fn ring_profile(c: &Capsule) -> Vec<(f64, f64, f64)> {
    // (fraction of len, multiple of cap, radial scale)
    let mut rings = Vec::new();
    let h = std::f64::consts::FRAC_PI_2 / c.cap_rings as f64;
    for k in 1..=c.cap_rings {
        let phi = -std::f64::consts::FRAC_PI_2 + k as f64 * h;
        rings.push((0.0, phi.sin(), phi.cos()));
    }
    let cyl = c.cyl_rings;
    for m in 1..=cyl {
        rings.push((m as f64 / cyl as f64, 0.0, 1.0));
    }
    for k in 1..c.cap_rings {
        let phi = k as f64 * h;
        rings.push((1.0, phi.sin(), phi.cos()));
    }
    rings
}

fn emit_capsule(c: &Capsule, out: &mut Generated) {
    let helper = if c.dir.dot(&Vec3::y()).abs() < 0.9 { Vec3::y() } else { Vec3::x() };
    let u = helper.cross(&c.dir).normalize();
    let v = c.dir.cross(&u);
    // keep u along ±x and v along ±y for vertical parts so (ru, rv) mean (x, y)
    let (u, v) = if c.dir.z.abs() > 0.99 { (Vec3::x(), Vec3::y() * c.dir.z.signum()) } else { (u, v) };
    let joints = out.joints.len();
    let base = out.vertices.len();

    let push_vertex = |p: Vec3, axial: f64, out: &mut Generated| {
        out.vertices.push(p);
        out.parts.push(c.part);
        let mut row = vec![0.0; joints];
        match c.blend_parent {
            Some(parent) => {
                let w_parent = 0.5 * (1.0 - axial / BLEND_ZONE).clamp(0.0, 1.0);
                row[parent] = w_parent;
                row[c.joint] = 1.0 - w_parent;
            }
            None => row[c.joint] = 1.0,
        }
        out.weights.extend_from_slice(&row);
    };

    let profile = ring_profile(c);
    push_vertex(c.a - c.dir * c.cap, -c.cap, out);
    for &(frac, capm, rho) in &profile {
        let center = c.a + c.dir * (frac * c.len + capm * c.cap);
        for i in 0..c.segments {
            let psi = 2.0 * std::f64::consts::PI * i as f64 / c.segments as f64;
            let p = center + (u * (c.ru * psi.cos()) + v * (c.rv * psi.sin())) * rho;
            push_vertex(p, frac * c.len + capm * c.cap, out);
        }
    }
    push_vertex(c.a + c.dir * (c.len + c.cap), c.len + c.cap, out);

    let n = c.segments;
    let rings = profile.len();
    let bottom = base;
    let top = base + 1 + rings * n;
    let ring = |r: usize, i: usize| base + 1 + r * n + (i % n);
    let mut tris = Vec::new();
    for i in 0..n {
        tris.push([bottom, ring(0, i + 1), ring(0, i)]);
        for r in 0..rings - 1 {
            tris.push([ring(r, i), ring(r, i + 1), ring(r + 1, i + 1)]);
            tris.push([ring(r, i), ring(r + 1, i + 1), ring(r + 1, i)]);
        }
        tris.push([top, ring(rings - 1, i), ring(rings - 1, i + 1)]);
    }
    // orient every triangle away from the capsule axis
    for t in tris.iter_mut() {
        let (p0, p1, p2) = (out.vertices[t[0]], out.vertices[t[1]], out.vertices[t[2]]);
        let normal = (p1 - p0).cross(&(p2 - p0));
        let centroid = (p0 + p1 + p2) / 3.0;
        let along = (centroid - c.a).dot(&c.dir).clamp(0.0, c.len);
        let axis_point = c.a + c.dir * along;
        if normal.dot(&(centroid - axis_point)) < 0.0 {
            t.swap(1, 2);
        }
    }
    out.faces.extend(tris);
}
