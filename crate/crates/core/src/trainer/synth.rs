//! Synthetic teacher scenes: a textured Gaussian avatar bound to the
//! template, animated and rendered from a ring of cameras.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Sample};
use super::model::{surface_samples, SurfaceSamples};
use crate::articulation::{skin_gaussians, Pose, SkinWeights, SkinnedTemplate, HEAD_JOINT};
use crate::camera::{CameraModel, Intrinsics, ProjectionMode};
use crate::error::{Result, SplatError};
use crate::gaussian::{GaussianPrimitive, GaussianSet, SourceTag};
use crate::image::Image;
use crate::math::{self, Mat3, Vec3};
use crate::posmap::{compute_face_crop, crop_camera, CropSpec};
use crate::raster::rasterize;
use crate::sh::{coeff_count, SH_C0};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub train_views: usize,
    pub heldout_views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    /// Camera distance from the vertical axis (m).
    pub distance: f64,
    pub eye_height: f64,
    /// Height of the point every camera looks at (m).
    pub target_height: f64,
    pub crop_size: usize,
    pub body_resolution: usize,
    pub sh_degree: usize,
    pub beta: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 30,
            train_views: 8,
            heldout_views: 4,
            width: 128,
            height: 128,
            focal: 200.0,
            distance: 3.5,
            eye_height: 1.0,
            target_height: 0.85,
            crop_size: 64,
            body_resolution: 112,
            sh_degree: 1,
            beta: vec![0.04, -0.03, 0.05, 0.02],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.train_views == 0 {
            return Err(SplatError::Invalid("need at least one frame and one training view".into()));
        }
        if self.width == 0 || self.height == 0 || self.crop_size == 0 {
            return Err(SplatError::Invalid("image and crop sizes must be positive".into()));
        }
        if !(self.focal > 0.0 && self.distance > 0.0) {
            return Err(SplatError::Invalid("focal length and distance must be positive".into()));
        }
        if self.sh_degree > 1 {
            return Err(SplatError::UnsupportedDegree(self.sh_degree));
        }
        Ok(())
    }
}

/// Ground-truth Gaussians in canonical space with their skinning weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub canonical: GaussianSet,
    pub weights: SkinWeights,
}

impl Teacher {
    pub fn posed(&self, template: &SkinnedTemplate, beta: &[f64], pose: &Pose) -> Result<GaussianSet> {
        skin_gaussians(&self.canonical, &self.weights, &template.skinning_transforms(beta, pose))
    }
}

const PALETTE: [[f64; 3]; 12] = [
    [0.16, 0.17, 0.28],
    [0.20, 0.36, 0.72],
    [0.86, 0.66, 0.52],
    [0.88, 0.68, 0.54],
    [0.78, 0.30, 0.24],
    [0.84, 0.62, 0.50],
    [0.78, 0.30, 0.24],
    [0.84, 0.62, 0.50],
    [0.26, 0.50, 0.30],
    [0.52, 0.44, 0.30],
    [0.26, 0.50, 0.30],
    [0.52, 0.44, 0.30],
];
const FACE_DARK: [f64; 3] = [0.30, 0.14, 0.10];
const CHECKER_CELL: f64 = 0.03;
const TEXTURE_PERIOD: f64 = 0.25;

/// Rotation whose third column is `n`.
fn frame_from_normal(n: &Vec3) -> Mat3 {
    let a = if n.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let t1 = a.cross(n).normalize();
    let t2 = n.cross(&t1);
    Mat3::from_columns(&[t1, t2, *n])
}

/// Surface-aligned anisotropic Gaussians on the body maps with per-part
/// colors, a low-frequency texture and a checkered face.
pub fn build_teacher(template: &SkinnedTemplate, beta: &[f64], resolution: usize, degree: usize, seed: u64) -> Result<Teacher> {
    let samples: SurfaceSamples = surface_samples(template, beta, resolution)?;
    let shaped = template.shaped_vertices(beta);
    let h = samples.spacing;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = coeff_count(degree);
    let mut prims = Vec::with_capacity(samples.means.len());
    for (i, &(side, p)) in samples.pixels.iter().enumerate() {
        let map = samples.maps.iter().find(|m| m.side == side).expect("map for every side");
        let f = template.faces[map.triangles[p] as usize];
        let b = map.barycentric[p];
        let n = (shaped[f[1]] - shaped[f[0]]).cross(&(shaped[f[2]] - shaped[f[0]])).normalize();
        let dominant = (0..3).max_by(|&x, &y| b[x].total_cmp(&b[y])).unwrap();
        let part = template.vertex_part[f[dominant]];
        let m = samples.means[i];
        let mut rgb = PALETTE[part];
        let head = samples.weights.row(i)[HEAD_JOINT] > 0.5;
        if head && n.y > 0.2 {
            let cx = (m.x / CHECKER_CELL).floor() as i64;
            let cz = (m.z / CHECKER_CELL).floor() as i64;
            if (cx + cz).rem_euclid(2) == 1 {
                rgb = FACE_DARK;
            }
        } else {
            let t = 0.85
                + 0.15 * (2.0 * PI * (m.x + m.z) / TEXTURE_PERIOD).sin() * (2.0 * PI * m.y / TEXTURE_PERIOD).cos();
            rgb = rgb.map(|c| c * t);
        }
        let mut g = GaussianPrimitive::isotropic(m, h, 0.95, [0.0; 3]);
        for c in 0..3 {
            g.color[c] = rgb[c] / SH_C0;
        }
        for k in 3..nc {
            g.color[k] = rng.random_range(-0.08..0.08);
        }
        g.log_scale = Vec3::new((0.8 * h).ln(), (0.8 * h).ln(), (0.3 * h).ln());
        g.rotation = math::matrix_to_quat(&frame_from_normal(&n));
        prims.push(g);
    }
    Ok(Teacher {
        canonical: GaussianSet::from_primitives(degree, prims, SourceTag::Body),
        weights: samples.weights,
    })
}

/// Smooth looping motion over `frames` frames: walking swing of arms and
/// legs, head turn and nod, torso yaw and a small root sway.
pub fn animation(joints: usize, frames: usize) -> Vec<Pose> {
    (0..frames)
        .map(|t| {
            let phi = 2.0 * PI * t as f64 / frames.max(1) as f64;
            let s = phi.sin();
            let mut p = Pose::identity(joints);
            p.rotations[0] = Vec3::new(0.0, 0.0, 0.35 * s);
            p.translation = Vec3::new(0.04 * s, 0.04 * phi.cos(), 0.0);
            p.rotations[1] = Vec3::new(0.08 * (2.0 * phi).sin(), 0.0, 0.1 * s);
            p.rotations[2] = Vec3::new(0.0, 0.0, 0.08 * s);
            p.rotations[3] = Vec3::new(0.18 * (2.0 * phi).sin(), 0.05 * phi.cos(), 0.35 * (phi + 1.0).sin());
            p.rotations[4] = Vec3::new(0.5 * s, -0.25, 0.0);
            p.rotations[5] = Vec3::new(0.3 + 0.3 * s, 0.0, 0.0);
            p.rotations[6] = Vec3::new(-0.5 * s, 0.25, 0.0);
            p.rotations[7] = Vec3::new(0.3 - 0.3 * s, 0.0, 0.0);
            p.rotations[8] = Vec3::new(-0.35 * s, 0.0, 0.0);
            p.rotations[9] = Vec3::new(-0.25 - 0.25 * s, 0.0, 0.0);
            p.rotations[10] = Vec3::new(0.35 * s, 0.0, 0.0);
            p.rotations[11] = Vec3::new(-0.25 + 0.25 * s, 0.0, 0.0);
            p
        })
        .collect()
}

fn ring_camera(config: &SynthConfig, angle: f64, eye_height: f64) -> CameraModel {
    let target = Vec3::new(0.0, 0.0, config.target_height);
    let eye = Vec3::new(config.distance * angle.sin(), config.distance * angle.cos(), eye_height);
    CameraModel::look_at(
        eye,
        target,
        Vec3::z(),
        Intrinsics {
            fx: config.focal,
            fy: config.focal,
            cx: config.width as f64 / 2.0,
            cy: config.height as f64 / 2.0,
        },
        config.width,
        config.height,
        ProjectionMode::Perspective,
    )
}

/// Training cameras evenly spaced on a circle starting in front of the
/// subject, then held-out cameras halfway between training cameras and
/// slightly higher.
pub fn ring_cameras(config: &SynthConfig) -> (Vec<CameraModel>, Vec<usize>, Vec<usize>) {
    let m = config.train_views;
    let step = 2.0 * PI / m as f64;
    let mut cams: Vec<CameraModel> = (0..m).map(|k| ring_camera(config, k as f64 * step, config.eye_height)).collect();
    let train = (0..m).collect();
    let mut held = Vec::new();
    for j in 0..config.heldout_views {
        let slot = (j * m) as f64 / config.heldout_views as f64;
        let angle = (slot.floor() + 0.5) * step;
        cams.push(ring_camera(config, angle, config.eye_height + 0.15));
        held.push(m + j);
    }
    (cams, train, held)
}

fn mask_of(alpha: &Image) -> Image {
    let mut m = Image::new(alpha.width, alpha.height, 1);
    for (o, a) in m.data.iter_mut().zip(&alpha.data) {
        *o = if *a > 0.5 { 1.0 } else { 0.0 };
    }
    m
}

/// Quantized image, thresholded mask and head crop of the posed teacher.
pub fn render_sample(
    posed: &GaussianSet,
    template: &SkinnedTemplate,
    beta: &[f64],
    pose: &Pose,
    camera: &CameraModel,
    crop_size: usize,
    background: [f64; 3],
) -> Result<Sample> {
    let full = rasterize(posed, camera, background);
    let crop: CropSpec = compute_face_crop(template, beta, pose, camera, crop_size)?;
    let head = rasterize(posed, &crop_camera(camera, &crop), background);
    Ok(Sample {
        image: full.color.quantized(),
        mask: mask_of(&full.alpha),
        crop,
        crop_image: head.color.quantized(),
        crop_mask: mask_of(&head.alpha),
    })
}

/// Teacher plus its rendered multi-view sequence over a black background.
pub fn synthesize(template: &SkinnedTemplate, config: &SynthConfig) -> Result<(Teacher, Dataset)> {
    config.validate()?;
    let teacher = build_teacher(template, &config.beta, config.body_resolution, config.sh_degree, config.seed)?;
    let poses = animation(template.joint_count(), config.frames);
    let (cameras, train_views, heldout_views) = ring_cameras(config);
    let background = [0.0; 3];
    let mut samples = Vec::with_capacity(poses.len() * cameras.len());
    for pose in &poses {
        let posed = teacher.posed(template, &config.beta, pose)?;
        for cam in &cameras {
            samples.push(render_sample(&posed, template, &config.beta, pose, cam, config.crop_size, background)?);
        }
    }
    let data = Dataset {
        beta: config.beta.clone(),
        poses,
        cameras,
        train_views,
        heldout_views,
        samples,
        background,
    };
    data.validate(template.joint_count(), template.shape_dim())?;
    Ok((teacher, data))
}
