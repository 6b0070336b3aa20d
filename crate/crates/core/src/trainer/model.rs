//! The animatable avatar: canonical body and face Gaussians bound to the
//! template, their residual decoders, and the differentiable pipeline from
//! a pose and camera to a posed Gaussian set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::articulation::{
    bind_points_to_surface, blend_transforms, skin_backward, skin_points, skin_with_blends, BlendedTransform, Pose,
    SkinWeights, SkinnedTemplate, HEAD_JOINT,
};
use crate::camera::CameraModel;
use crate::checkpoint::Checkpoint;
use crate::deformer::{
    apply_residuals, apply_residuals_backward, fuse, fuse_backward, view_through_center, view_toward, Activation,
    Decoder, DecoderConfig, DecoderKind, DecoderPass, FaceDecoders, FacePass, FuseOptions, ResidualMap,
};
use crate::error::{Result, SplatError};
use crate::gaussian::{GaussianPrimitive, GaussianSet, PrimitiveGrad, SourceTag};
use crate::math::{self, Mat3, Vec3};
use crate::posmap::{
    compute_face_crop, crop_camera, primitive_to_channels, render_positional_map, AttributeGrid, CanonicalFaceModel,
    PositionalMap, Side, GAUSSIAN_CHANNELS,
};
use crate::raster::{rasterize, RenderOutput};
use crate::sh::{coeff_count, SH_C0};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Side length of the square body positional maps (pixels).
    pub body_resolution: usize,
    /// Upsampling factor of the head grid for the face branch.
    pub densify_factor: usize,
    pub decoder: DecoderConfig,
    pub sh_degree: usize,
    /// Extra pixels around the head region when cutting the head grid.
    pub head_margin: usize,
    pub fuse: FuseOptions,
    /// Initial isotropic standard deviation in map pixels.
    pub init_scale: f64,
    pub init_opacity: f64,
    pub init_gray: f64,
    /// Side length of the head crop (pixels).
    pub crop_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            body_resolution: 112,
            densify_factor: 2,
            decoder: DecoderConfig::default(),
            sh_degree: 1,
            head_margin: 1,
            fuse: FuseOptions::default(),
            init_scale: 0.7,
            init_opacity: 0.8,
            init_gray: 0.5,
            crop_size: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.body_resolution < 4 {
            return Err(SplatError::Invalid(format!("body resolution {} is too small", self.body_resolution)));
        }
        if self.densify_factor == 0 {
            return Err(SplatError::Invalid("densify factor must be ≥ 1".into()));
        }
        if self.decoder.n_mlp == 0 || self.decoder.cm == 0 {
            return Err(SplatError::Invalid("decoder depth and width multiplier must be ≥ 1".into()));
        }
        if self.sh_degree > 1 {
            return Err(SplatError::UnsupportedDegree(self.sh_degree));
        }
        if !(self.init_scale > 0.0) || !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(SplatError::Invalid("initial scale must be > 0 and opacity in (0, 1)".into()));
        }
        if self.crop_size < 11 {
            return Err(SplatError::Invalid("crop size must be at least 11 pixels".into()));
        }
        Ok(())
    }
}

/// Pixel window of the head region in one body map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadWindow {
    pub side: Side,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// The 11 non-root joint rotations as a flat vector.
pub fn pose_vector(pose: &Pose) -> Vec<f64> {
    pose.rotations[1..].iter().flat_map(|r| r.iter().cloned()).collect()
}

/// The pose with its root rotation and translation removed.
pub fn root_normalized(pose: &Pose) -> Pose {
    let mut p = pose.clone();
    p.rotations[0] = Vec3::zeros();
    p.translation = Vec3::zeros();
    p
}

/// Per-frame quantities shared by every view of that frame.
#[derive(Clone, Debug)]
pub struct FrameInputs {
    pub pose_vector: Vec<f64>,
    /// Body means posed with the root-normalized pose (decoder input).
    pub body_positions: Vec<Vec3>,
    pub face_positions: Vec<Vec3>,
    /// Skinning of body then face primitives.
    pub blends: Vec<BlendedTransform>,
    pub root_rotation: Mat3,
    /// Posed head joint.
    pub head_point: Vec3,
}

/// Forward intermediates of [`AvatarModel::forward`].
#[derive(Clone, Debug)]
pub struct ForwardState {
    body_pass: DecoderPass,
    face_pass: FacePass,
    pub body_residuals: ResidualMap,
    pub face_residuals: ResidualMap,
    pub body_deformed: GaussianSet,
    pub face_deformed: GaussianSet,
    /// Fused set after skinning; the renderer input.
    pub posed: GaussianSet,
}

/// Gradients of every trainable quantity.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub body: Vec<PrimitiveGrad>,
    pub face: Vec<PrimitiveGrad>,
    pub body_decoder: Vec<f64>,
    pub face_decoders: [Vec<f64>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvatarModel {
    pub template: SkinnedTemplate,
    pub beta: Vec<f64>,
    pub config: ModelConfig,
    /// Canonical body Gaussians, front-map pixels then back-map pixels.
    pub body: GaussianSet,
    pub body_weights: SkinWeights,
    /// Head-joint weight of every body Gaussian.
    pub head_weights: Vec<f64>,
    /// Source (side, pixel) of every body Gaussian.
    pub body_pixels: Vec<(Side, usize)>,
    pub head_windows: Vec<HeadWindow>,
    /// Canonical face Gaussians; empty until [`AvatarModel::build_face`].
    pub face: GaussianSet,
    pub face_weights: SkinWeights,
    /// Canonical face means at construction; the face decoders' inputs.
    pub face_anchors: Vec<Vec3>,
    pub body_decoder: Decoder,
    pub face_decoders: FaceDecoders,
}

fn template_maps(template: &SkinnedTemplate, beta: &[f64], resolution: usize) -> Vec<PositionalMap> {
    Side::BOTH
        .iter()
        .map(|&s| render_positional_map(template, beta, None, s, resolution))
        .collect()
}

fn pixel_weights(map: &PositionalMap, pixel: usize, template: &SkinnedTemplate) -> Vec<f64> {
    let f = template.faces[map.triangles[pixel] as usize];
    let b = map.barycentric[pixel];
    let mut row = vec![0.0; template.joint_count()];
    for k in 0..3 {
        for (r, w) in row.iter_mut().zip(template.weights.row(f[k])) {
            *r += b[k] * w;
        }
    }
    row
}

/// Gaussians sampled at every covered pixel of the front and back body maps,
/// with skinning weights interpolated from the triangle behind each pixel.
pub struct SurfaceSamples {
    pub maps: Vec<PositionalMap>,
    pub means: Vec<Vec3>,
    pub weights: SkinWeights,
    pub pixels: Vec<(Side, usize)>,
    /// Map pixel size (m).
    pub spacing: f64,
}

pub fn surface_samples(template: &SkinnedTemplate, beta: &[f64], resolution: usize) -> Result<SurfaceSamples> {
    if beta.len() != template.shape_dim() {
        return Err(SplatError::Dimension(format!(
            "{} shape parameters for a template with {}",
            beta.len(),
            template.shape_dim()
        )));
    }
    let maps = template_maps(template, beta, resolution);
    let mut means = Vec::new();
    let mut rows = Vec::new();
    let mut pixels = Vec::new();
    for m in &maps {
        for p in m.covered_pixels() {
            means.push(m.positions[p]);
            rows.extend(pixel_weights(m, p, template));
            pixels.push((m.side, p));
        }
    }
    if means.is_empty() {
        return Err(SplatError::Empty("body maps have no covered pixels".into()));
    }
    let spacing = 1.0 / maps[0].camera.intrinsics.fx;
    Ok(SurfaceSamples {
        maps,
        means,
        weights: SkinWeights::from_rows(template.joint_count(), rows)?,
        pixels,
        spacing,
    })
}

fn head_windows(
    samples: &SurfaceSamples,
    head_weights: &[f64],
    threshold: f64,
    margin: usize,
) -> Result<Vec<HeadWindow>> {
    let mut out = Vec::new();
    for m in &samples.maps {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, &(side, p)) in samples.pixels.iter().enumerate() {
            if side == m.side && head_weights[i] > threshold {
                let (x, y) = (p % m.width, p / m.width);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
        if x0 == usize::MAX {
            return Err(SplatError::Empty(format!("{} map has no head pixels", m.side.name())));
        }
        let x0 = x0.saturating_sub(margin);
        let y0 = y0.saturating_sub(margin);
        let x1 = (x1 + margin).min(m.width - 1);
        let y1 = (y1 + margin).min(m.height - 1);
        out.push(HeadWindow {
            side: m.side,
            x0,
            y0,
            width: x1 + 1 - x0,
            height: y1 + 1 - y0,
        });
    }
    Ok(out)
}

fn face_grid(windows: &[HeadWindow], factor: usize) -> (usize, usize) {
    (windows[0].width * factor, windows[0].height * factor)
}

const POSE_DIM_PER_JOINT: usize = 3;

fn make_face_decoders(config: &DecoderConfig, pose_dim: usize, grid: (usize, usize), rng: &mut ChaCha8Rng) -> Result<FaceDecoders> {
    Ok(FaceDecoders {
        position: Decoder::new(DecoderKind::FacePosition, *config, pose_dim, grid, Activation::Tanh, rng)?,
        color: Decoder::new(DecoderKind::FaceColor, *config, pose_dim, grid, Activation::Tanh, rng)?,
        aux: Decoder::new(DecoderKind::FaceAux, *config, pose_dim, grid, Activation::Tanh, rng)?,
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hash identifying a template's topology, rest geometry and weights.
pub fn template_fingerprint(t: &SkinnedTemplate) -> u64 {
    let mut bytes = Vec::new();
    for v in &t.vertices {
        for c in v.iter() {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    for f in &t.faces {
        for i in f {
            bytes.extend_from_slice(&(*i as u64).to_le_bytes());
        }
    }
    for w in t.weights.as_slice() {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    fnv1a(&bytes)
}

impl AvatarModel {
    /// Student initialization: one isotropic gray Gaussian per covered body
    /// map pixel, fresh decoders and no face Gaussians yet.
    pub fn new(template: &SkinnedTemplate, beta: &[f64], config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let samples = surface_samples(template, beta, config.body_resolution)?;
        let sigma = config.init_scale * samples.spacing;
        let dc = config.init_gray / SH_C0;
        let prims = samples
            .means
            .iter()
            .map(|m| GaussianPrimitive::isotropic(*m, sigma, config.init_opacity, [dc; 3]))
            .collect();
        let body = GaussianSet::from_primitives(config.sh_degree, prims, SourceTag::Body);
        Self::assemble(template, beta, config, samples, body, seed)
    }

    /// Model around a given canonical body set sampled on the same maps.
    pub fn assemble(
        template: &SkinnedTemplate,
        beta: &[f64],
        config: ModelConfig,
        samples: SurfaceSamples,
        body: GaussianSet,
        seed: u64,
    ) -> Result<Self> {
        if body.len() != samples.means.len() {
            return Err(SplatError::Correspondence(format!(
                "{} body Gaussians for {} map samples",
                body.len(),
                samples.means.len()
            )));
        }
        let head_weights: Vec<f64> = (0..body.len()).map(|i| samples.weights.row(i)[HEAD_JOINT]).collect();
        let windows = head_windows(&samples, &head_weights, config.fuse.head_threshold, config.head_margin)?;
        let pose_dim = POSE_DIM_PER_JOINT * (template.joint_count() - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let body_decoder = Decoder::new(
            DecoderKind::Body,
            config.decoder,
            pose_dim,
            (config.body_resolution, config.body_resolution),
            Activation::Tanh,
            &mut rng,
        )?;
        let face_decoders = make_face_decoders(&config.decoder, pose_dim, face_grid(&windows, config.densify_factor), &mut rng)?;
        Ok(Self {
            template: template.clone(),
            beta: beta.to_vec(),
            body_weights: samples.weights,
            head_weights,
            body_pixels: samples.pixels,
            head_windows: windows,
            face: GaussianSet::new(config.sh_degree),
            face_weights: SkinWeights::zeros(0, template.joint_count()),
            face_anchors: Vec::new(),
            body,
            body_decoder,
            face_decoders,
            config,
        })
    }

    pub fn pose_dim(&self) -> usize {
        self.body_decoder.pose_dim
    }

    pub fn has_face(&self) -> bool {
        !self.face.is_empty()
    }

    /// Head-region attribute grids of `set` (a deformed copy of the body).
    pub fn head_grids(&self, set: &GaussianSet) -> Vec<(Side, AttributeGrid)> {
        let res = self.config.body_resolution;
        self.head_windows
            .iter()
            .map(|w| {
                let mut grid = AttributeGrid::new(w.width, w.height, GAUSSIAN_CHANNELS);
                for (i, &(side, p)) in self.body_pixels.iter().enumerate() {
                    if side != w.side || self.head_weights[i] <= self.config.fuse.head_threshold {
                        continue;
                    }
                    let (x, y) = (p % res, p / res);
                    if x < w.x0 || y < w.y0 || x >= w.x0 + w.width || y >= w.y0 + w.height {
                        continue;
                    }
                    let (gx, gy) = (x - w.x0, y - w.y0);
                    primitive_to_channels(&set.primitives[i], grid.cell_mut(gx, gy));
                    grid.coverage[gy * w.width + gx] = true;
                }
                (w.side, grid)
            })
            .collect()
    }

    /// Builds the canonical face Gaussians from per-frame deformed head
    /// grids: the grids are averaged over frames, densified, and the result
    /// is bound to the template surface. Densified Gaussians start at
    /// `1/factor` of the averaged scale to match their spacing.
    pub fn build_face(&mut self, frame_bodies: &[GaussianSet]) -> Result<()> {
        if frame_bodies.is_empty() {
            return Err(SplatError::Empty("no frames to build the face from".into()));
        }
        let mut per_side: Vec<(Side, Vec<AttributeGrid>)> = self.head_windows.iter().map(|w| (w.side, Vec::new())).collect();
        for set in frame_bodies {
            for (k, (_, grid)) in self.head_grids(set).into_iter().enumerate() {
                per_side[k].1.push(grid);
            }
        }
        let model = CanonicalFaceModel::build(&per_side, self.config.densify_factor)?;
        let shrink = (self.config.densify_factor as f64).ln();
        let prims: Vec<GaussianPrimitive> = model
            .primitives()
            .into_iter()
            .map(|mut g| {
                g.log_scale -= Vec3::repeat(shrink);
                g
            })
            .collect();
        if prims.is_empty() {
            return Err(SplatError::Empty("densified head grid has no covered cells".into()));
        }
        let means: Vec<Vec3> = prims.iter().map(|g| g.mean).collect();
        let shaped = self.template.shaped_vertices(&self.beta);
        self.face_weights = bind_points_to_surface(&means, &shaped, &self.template.faces, &self.template.weights);
        self.face = GaussianSet::from_primitives(self.config.sh_degree, prims, SourceTag::Face);
        self.face_anchors = means;
        Ok(())
    }

    /// Body and face skinning weights stacked.
    pub fn all_weights(&self) -> Result<SkinWeights> {
        self.body_weights.concat(&self.face_weights)
    }

    pub fn frame_inputs(&self, pose: &Pose) -> Result<FrameInputs> {
        if pose.rotations.len() != self.template.joint_count() {
            return Err(SplatError::Dimension(format!(
                "pose has {} joints, template has {}",
                pose.rotations.len(),
                self.template.joint_count()
            )));
        }
        let local = self.template.skinning_transforms(&self.beta, &root_normalized(pose));
        let body_means: Vec<Vec3> = self.body.primitives.iter().map(|g| g.mean).collect();
        let transforms = self.template.skinning_transforms(&self.beta, pose);
        let joints = self.template.posed_joints(&self.beta, pose);
        Ok(FrameInputs {
            pose_vector: pose_vector(pose),
            body_positions: skin_points(&body_means, &self.body_weights, &local),
            face_positions: skin_points(&self.face_anchors, &self.face_weights, &local),
            blends: blend_transforms(&self.all_weights()?, &transforms)?,
            root_rotation: math::rodrigues(&pose.rotations[0]),
            head_point: joints[HEAD_JOINT],
        })
    }

    /// Body residuals for a frame (view toward the head from `camera`).
    pub fn body_residuals(&self, inputs: &FrameInputs, camera: &CameraModel) -> (DecoderPass, ResidualMap) {
        let view = view_toward(camera, &inputs.head_point, &inputs.root_rotation);
        let pass = self.body_decoder.forward(&inputs.body_positions, &inputs.pose_vector, &view);
        let res = ResidualMap {
            data: pass.outputs.clone(),
        };
        (pass, res)
    }

    /// Decodes, deforms, fuses and skins. `face_camera` is the head-crop
    /// camera whose center ray drives the face color decoder.
    pub fn forward(&self, inputs: &FrameInputs, camera: &CameraModel, face_camera: &CameraModel) -> Result<ForwardState> {
        let (body_pass, body_residuals) = self.body_residuals(inputs, camera);
        let face_view = view_through_center(face_camera, &inputs.root_rotation);
        let face_pass = self.face_decoders.forward(&inputs.face_positions, &inputs.pose_vector, &face_view);
        let face_residuals = face_pass.residuals.clone();
        let body_deformed = apply_residuals(&self.body, &body_residuals)?;
        let face_deformed = apply_residuals(&self.face, &face_residuals)?;
        let fused = fuse(&body_deformed, &self.head_weights, &face_deformed, &self.config.fuse)?;
        let posed = skin_with_blends(&fused, &inputs.blends);
        Ok(ForwardState {
            body_pass,
            face_pass,
            body_residuals,
            face_residuals,
            body_deformed,
            face_deformed,
            posed,
        })
    }

    /// Pulls gradients w.r.t. the posed set back to canonical attributes and
    /// decoder parameters. `residual_grads` are extra gradients w.r.t. the
    /// body and face residual maps (the offset regularizer). With
    /// `body = false` the body decoder is not differentiated.
    pub fn backward(
        &self,
        inputs: &FrameInputs,
        state: &ForwardState,
        posed_grads: &[PrimitiveGrad],
        residual_grads: [&[f64]; 2],
        body: bool,
    ) -> ModelGrads {
        let canonical = skin_backward(posed_grads, &inputs.blends, self.config.sh_degree);
        let (gb, gf) = fuse_backward(&state.body_deformed, &self.head_weights, &self.config.fuse, &canonical);
        let (g_body, mut g_body_res) = apply_residuals_backward(&self.body, &state.body_residuals, &gb);
        let (g_face, mut g_face_res) = apply_residuals_backward(&self.face, &state.face_residuals, &gf);
        for (a, b) in g_body_res.iter_mut().zip(residual_grads[0]) {
            *a += b;
        }
        for (a, b) in g_face_res.iter_mut().zip(residual_grads[1]) {
            *a += b;
        }
        let mut body_decoder = vec![0.0; self.body_decoder.param_count()];
        if body {
            self.body_decoder.backward(
                &inputs.body_positions,
                &inputs.pose_vector,
                &state.body_pass,
                &g_body_res,
                &mut body_decoder,
            );
        }
        let mut gp = vec![0.0; self.face_decoders.position.param_count()];
        let mut gc = vec![0.0; self.face_decoders.color.param_count()];
        let mut ga = vec![0.0; self.face_decoders.aux.param_count()];
        if self.has_face() {
            self.face_decoders.backward(
                &inputs.face_positions,
                &inputs.pose_vector,
                &state.face_pass,
                &g_face_res,
                [&mut gp, &mut gc, &mut ga],
            );
        }
        ModelGrads {
            body: g_body,
            face: g_face,
            body_decoder,
            face_decoders: [gp, gc, ga],
        }
    }

    /// Head-crop camera for `pose` seen through `camera`, or `camera` itself
    /// when the head is not in front of it.
    pub fn face_camera(&self, pose: &Pose, camera: &CameraModel) -> CameraModel {
        match compute_face_crop(&self.template, &self.beta, pose, camera, self.config.crop_size) {
            Ok(crop) => crop_camera(camera, &crop),
            Err(_) => camera.clone(),
        }
    }

    /// Posed Gaussians for an arbitrary pose and camera.
    pub fn posed(&self, pose: &Pose, camera: &CameraModel) -> Result<GaussianSet> {
        let inputs = self.frame_inputs(pose)?;
        let face_camera = self.face_camera(pose, camera);
        Ok(self.forward(&inputs, camera, &face_camera)?.posed)
    }

    pub fn render(&self, pose: &Pose, camera: &CameraModel, background: [f64; 3]) -> Result<RenderOutput> {
        Ok(rasterize(&self.posed(pose, camera)?, camera, background))
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let c = &self.config;
        let mut ck = Checkpoint::new(step);
        ck.put_u64("model.template", vec![template_fingerprint(&self.template)]);
        ck.put_f64("model.beta", self.beta.clone());
        ck.put_u64(
            "model.config",
            vec![
                c.body_resolution as u64,
                c.densify_factor as u64,
                c.decoder.n_mlp as u64,
                c.decoder.cm as u64,
                c.sh_degree as u64,
                c.head_margin as u64,
                c.crop_size as u64,
            ],
        );
        ck.put_f64(
            "model.init",
            vec![c.fuse.head_threshold, c.fuse.attenuation, c.init_scale, c.init_opacity, c.init_gray],
        );
        ck.put_gaussian_set("body", &self.body);
        ck.put_gaussian_set("face", &self.face);
        ck.put_f64("face.weights", self.face_weights.as_slice().to_vec());
        ck.put_f64("face.anchors", self.face_anchors.iter().flat_map(|p| [p.x, p.y, p.z]).collect());
        for (name, d) in self.decoders() {
            ck.put_f64(&format!("decoder.{name}.params"), d.params.clone());
            ck.put_u64(&format!("decoder.{name}.hash"), vec![d.architecture_hash()]);
        }
        ck
    }

    fn decoders(&self) -> [(&'static str, &Decoder); 4] {
        [
            ("body", &self.body_decoder),
            ("face_position", &self.face_decoders.position),
            ("face_color", &self.face_decoders.color),
            ("face_aux", &self.face_decoders.aux),
        ]
    }

    /// Rebuilds a model saved by [`AvatarModel::to_checkpoint`].
    pub fn from_checkpoint(template: &SkinnedTemplate, ck: &Checkpoint) -> Result<Self> {
        let stored = ck.u64_scalar("model.template")?;
        let expected = template_fingerprint(template);
        if stored != expected {
            return Err(SplatError::Format(format!(
                "checkpoint was trained on template {stored:016x}, this template is {expected:016x}"
            )));
        }
        let cfg = ck.u64("model.config")?;
        let init = ck.f64("model.init")?;
        if cfg.len() != 7 || init.len() != 5 {
            return Err(SplatError::Format("malformed model configuration section".into()));
        }
        let config = ModelConfig {
            body_resolution: cfg[0] as usize,
            densify_factor: cfg[1] as usize,
            decoder: DecoderConfig {
                n_mlp: cfg[2] as usize,
                cm: cfg[3] as usize,
            },
            sh_degree: cfg[4] as usize,
            head_margin: cfg[5] as usize,
            crop_size: cfg[6] as usize,
            fuse: FuseOptions {
                head_threshold: init[0],
                attenuation: init[1],
            },
            init_scale: init[2],
            init_opacity: init[3],
            init_gray: init[4],
        };
        let beta = ck.f64("model.beta")?.to_vec();
        let samples = surface_samples(template, &beta, config.body_resolution)?;
        let body = ck.gaussian_set("body")?;
        let mut model = Self::assemble(template, &beta, config, samples, body, 0)?;
        model.face = ck.gaussian_set("face")?;
        model.face_weights = SkinWeights::from_rows(template.joint_count(), ck.f64("face.weights")?.to_vec())?;
        let anchors = ck.f64("face.anchors")?;
        model.face_anchors = anchors.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        if model.face_weights.rows() != model.face.len() || anchors.len() != 3 * model.face.len() {
            return Err(SplatError::Format("face weights do not match the face Gaussians".into()));
        }
        for name in ["body", "face_position", "face_color", "face_aux"] {
            let d = match name {
                "body" => &mut model.body_decoder,
                "face_position" => &mut model.face_decoders.position,
                "face_color" => &mut model.face_decoders.color,
                _ => &mut model.face_decoders.aux,
            };
            let stored = ck.u64_scalar(&format!("decoder.{name}.hash"))?;
            let expected = d.architecture_hash();
            if stored != expected {
                return Err(SplatError::ArchitectureMismatch { stored, expected });
            }
            let params = ck.f64(&format!("decoder.{name}.params"))?;
            if params.len() != d.param_count() {
                return Err(SplatError::Format(format!(
                    "decoder `{name}` has {} parameters, expected {}",
                    params.len(),
                    d.param_count()
                )));
            }
            d.params.copy_from_slice(params);
        }
        Ok(model)
    }
}

/// Trainable attributes of a set (everything but the means), per primitive
/// `log_scale 3, rotation 4, opacity 1, color`.
pub fn attribute_len(set: &GaussianSet) -> usize {
    set.len() * (8 + coeff_count(set.sh_degree))
}

pub fn pack_attributes(set: &GaussianSet) -> Vec<f64> {
    let nc = coeff_count(set.sh_degree);
    let mut out = Vec::with_capacity(attribute_len(set));
    for g in &set.primitives {
        out.extend_from_slice(g.log_scale.as_slice());
        out.extend_from_slice(&[g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
        out.push(g.opacity_logit);
        out.extend_from_slice(&g.color[..nc]);
    }
    out
}

pub fn unpack_attributes(set: &mut GaussianSet, values: &[f64]) {
    let nc = coeff_count(set.sh_degree);
    for (g, v) in set.primitives.iter_mut().zip(values.chunks(8 + nc)) {
        g.log_scale = Vec3::new(v[0], v[1], v[2]);
        g.rotation = math::Quat::new(v[3], v[4], v[5], v[6]);
        g.opacity_logit = v[7];
        g.color[..nc].copy_from_slice(&v[8..8 + nc]);
    }
}

pub fn pack_grads(grads: &[PrimitiveGrad], degree: usize) -> Vec<f64> {
    let nc = coeff_count(degree);
    let mut out = Vec::with_capacity(grads.len() * (8 + nc));
    for g in grads {
        out.extend_from_slice(g.log_scale.as_slice());
        out.extend_from_slice(g.rotation.as_slice());
        out.push(g.opacity_logit);
        out.extend_from_slice(&g.color[..nc]);
    }
    out
}
