//! Pose-conditioned residual decoders for the body and face branches, and
//! fusion of the two Gaussian populations.
//!
//! Every decoder is a per-pixel MLP whose input concatenates a sinusoidal
//! encoding of a positional-map sample with, depending on the decoder, a
//! learned pose embedding and a view direction. Outputs are residual Gaussian
//! attributes in the channel layout of [`ResidualMap`].

mod mlp;

pub use mlp::{mlp_backward, mlp_forward, Activation, MlpShape, MlpTape};

use rand::Rng;
use rayon::prelude::*;

use crate::camera::{CameraModel, ProjectionMode};
use crate::error::{Result, SplatError};
use crate::gaussian::{GaussianSet, PrimitiveGrad};
use crate::math::{self, Mat3, Vec3};
use crate::posmap::{PositionalMap, Side};

/// Frequency bands of the positional encoding.
pub const PE_BANDS: usize = 4;
/// `p ⊕ sin(2ᵏπp) ⊕ cos(2ᵏπp)` for k < [`PE_BANDS`].
pub const PE_DIM: usize = 3 + 6 * PE_BANDS;
pub const POSE_EMBED_DIM: usize = 16;
pub const VIEW_DIM: usize = 3;
/// Hidden width at width multiplier 1.
pub const BASE_WIDTH: usize = 32;

/// Residual channels: color 0..12, opacity 12, log-scale 13..16,
/// rotation tangent 16..19, position 19..22.
pub const RESIDUAL_CHANNELS: usize = 22;
pub const RES_COLOR: usize = 0;
pub const RES_OPACITY: usize = 12;
pub const RES_SCALE: usize = 13;
pub const RES_ROTATION: usize = 16;
pub const RES_POSITION: usize = 19;

/// Fixed output gain per residual channel.
fn residual_gain(channel: usize) -> f64 {
    if channel >= RES_POSITION {
        0.01
    } else {
        0.1
    }
}

pub fn positional_encoding(p: &Vec3, out: &mut [f64]) {
    out[..3].copy_from_slice(p.as_slice());
    for k in 0..PE_BANDS {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for c in 0..3 {
            let (s, co) = (f * p[c]).sin_cos();
            out[3 + 6 * k + c] = s;
            out[3 + 6 * k + 3 + c] = co;
        }
    }
}

/// Pulls a gradient on the encoding back to the position.
pub fn positional_encoding_backward(p: &Vec3, grad: &[f64]) -> Vec3 {
    let mut g = Vec3::new(grad[0], grad[1], grad[2]);
    for k in 0..PE_BANDS {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for c in 0..3 {
            let (s, co) = (f * p[c]).sin_cos();
            g[c] += f * (co * grad[3 + 6 * k + c] - s * grad[3 + 6 * k + 3 + c]);
        }
    }
    g
}

/// View direction toward `point`, expressed in the frame of `root_rotation`.
pub fn view_toward(camera: &CameraModel, point: &Vec3, root_rotation: &Mat3) -> Vec3 {
    let d = match camera.mode {
        ProjectionMode::Perspective => (point - camera.center()).normalize(),
        ProjectionMode::Orthographic => camera.forward(),
    };
    root_rotation.transpose() * d
}

/// Direction of the ray through the image center, in the frame of `root_rotation`.
pub fn view_through_center(camera: &CameraModel, root_rotation: &Mat3) -> Vec3 {
    root_rotation.transpose() * camera.ray_direction(camera.width as f64 / 2.0, camera.height as f64 / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    /// Body branch: position ⊕ pose ⊕ view → all residual channels.
    Body,
    /// Face positional decoder: position ⊕ pose → position residual.
    FacePosition,
    /// Face color decoder: deformed position ⊕ view → color residual.
    FaceColor,
    /// Face auxiliary decoder: deformed position → opacity, scale, rotation residuals.
    FaceAux,
}

impl DecoderKind {
    pub fn uses_pose(self) -> bool {
        matches!(self, DecoderKind::Body | DecoderKind::FacePosition)
    }

    pub fn uses_view(self) -> bool {
        matches!(self, DecoderKind::Body | DecoderKind::FaceColor)
    }

    /// First residual channel written and channel count.
    pub fn output_channels(self) -> (usize, usize) {
        match self {
            DecoderKind::Body => (0, RESIDUAL_CHANNELS),
            DecoderKind::FacePosition => (RES_POSITION, 3),
            DecoderKind::FaceColor => (RES_COLOR, 12),
            DecoderKind::FaceAux => (RES_OPACITY, 7),
        }
    }

    pub fn input_dim(self) -> usize {
        PE_DIM
            + if self.uses_pose() { POSE_EMBED_DIM } else { 0 }
            + if self.uses_view() { VIEW_DIM } else { 0 }
    }
}

/// Depth and width multiplier of a decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    /// Number of linear layers (1 is a single affine map).
    pub n_mlp: usize,
    /// Hidden width multiplier.
    pub cm: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { n_mlp: 3, cm: 1 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Decoder parameters: an optional pose projection (`POSE_EMBED_DIM × pose_dim`,
/// row-major) followed by the MLP layers, all in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub kind: DecoderKind,
    pub config: DecoderConfig,
    pub pose_dim: usize,
    /// Map resolution `(width, height)` the decoder is attached to.
    pub grid: (usize, usize),
    pub mlp: MlpShape,
    pub params: Vec<f64>,
}

/// Forward intermediates of one decoder call.
#[derive(Clone, Debug)]
pub struct DecoderPass {
    tape: MlpTape,
    /// Gain-scaled outputs, row-major `rows × output width`.
    pub outputs: Vec<f64>,
    embedding: Vec<f64>,
}

impl Decoder {
    pub fn new(
        kind: DecoderKind,
        config: DecoderConfig,
        pose_dim: usize,
        grid: (usize, usize),
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.n_mlp == 0 || config.cm == 0 {
            return Err(SplatError::Invalid(format!("decoder depth and width must be positive, got {config:?}")));
        }
        let proj = if kind.uses_pose() { POSE_EMBED_DIM * pose_dim } else { 0 };
        let mut widths = vec![kind.input_dim()];
        widths.extend(std::iter::repeat_n(BASE_WIDTH * config.cm, config.n_mlp - 1));
        widths.push(kind.output_channels().1);
        let mlp = MlpShape::new(widths, activation, proj);
        let mut params = vec![0.0; proj + mlp.param_count()];
        let bound = 1.0 / (pose_dim.max(1) as f64).sqrt();
        for v in &mut params[..proj] {
            *v = rng.random_range(-bound..bound);
        }
        mlp.initialize(&mut params, rng);
        Ok(Self {
            kind,
            config,
            pose_dim,
            grid,
            mlp,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn output_dim(&self) -> usize {
        self.kind.output_channels().1
    }

    /// Stable hash of everything that fixes the parameter layout.
    pub fn architecture_hash(&self) -> u64 {
        let desc = format!(
            "{:?}|n_mlp={}|cm={}|pose={}|grid={}x{}|mlp={}|pe={}|embed={}",
            self.kind,
            self.config.n_mlp,
            self.config.cm,
            self.pose_dim,
            self.grid.0,
            self.grid.1,
            self.mlp.describe(),
            PE_BANDS,
            POSE_EMBED_DIM
        );
        fnv1a(desc.as_bytes())
    }

    fn projection(&self) -> &[f64] {
        &self.params[..self.mlp.base]
    }

    pub fn pose_embedding(&self, pose: &[f64]) -> Vec<f64> {
        if !self.kind.uses_pose() {
            return Vec::new();
        }
        assert_eq!(pose.len(), self.pose_dim, "pose vector length");
        let p = self.projection();
        (0..POSE_EMBED_DIM)
            .map(|e| p[e * self.pose_dim..(e + 1) * self.pose_dim].iter().zip(pose).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn inputs(&self, positions: &[Vec3], embedding: &[f64], view: &Vec3) -> Vec<f64> {
        let d = self.kind.input_dim();
        let mut x = vec![0.0; positions.len() * d];
        x.par_chunks_mut(d).zip(positions.par_iter()).for_each(|(row, p)| {
            positional_encoding(p, &mut row[..PE_DIM]);
            let mut o = PE_DIM;
            if self.kind.uses_pose() {
                row[o..o + POSE_EMBED_DIM].copy_from_slice(embedding);
                o += POSE_EMBED_DIM;
            }
            if self.kind.uses_view() {
                row[o..o + 3].copy_from_slice(view.as_slice());
            }
        });
        x
    }

    pub fn forward(&self, positions: &[Vec3], pose: &[f64], view: &Vec3) -> DecoderPass {
        let embedding = self.pose_embedding(pose);
        let x = self.inputs(positions, &embedding, view);
        let tape = mlp_forward(&self.mlp, &self.params, &x);
        let (first, n) = self.kind.output_channels();
        let mut outputs = tape.outputs();
        for row in outputs.chunks_mut(n) {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= residual_gain(first + k);
            }
        }
        DecoderPass {
            tape,
            outputs,
            embedding,
        }
    }

    /// Adds parameter gradients into `grad_params` and returns gradients
    /// w.r.t. the input positions. `grad_outputs` is w.r.t. the gain-scaled outputs.
    pub fn backward(
        &self,
        positions: &[Vec3],
        pose: &[f64],
        pass: &DecoderPass,
        grad_outputs: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<Vec3> {
        let (first, n) = self.kind.output_channels();
        let mut g = grad_outputs.to_vec();
        for row in g.chunks_mut(n) {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= residual_gain(first + k);
            }
        }
        let gx = mlp_backward(&self.mlp, &self.params, &pass.tape, &g, grad_params);
        let d = self.kind.input_dim();
        if self.kind.uses_pose() {
            let mut g_emb = [0.0; POSE_EMBED_DIM];
            for row in gx.chunks(d) {
                for (a, b) in g_emb.iter_mut().zip(&row[PE_DIM..PE_DIM + POSE_EMBED_DIM]) {
                    *a += b;
                }
            }
            for (e, ge) in g_emb.iter().enumerate() {
                for (k, th) in pose.iter().enumerate() {
                    grad_params[e * self.pose_dim + k] += ge * th;
                }
            }
        }
        debug_assert_eq!(pass.embedding.len(), if self.kind.uses_pose() { POSE_EMBED_DIM } else { 0 });
        gx.par_chunks(d)
            .zip(positions.par_iter())
            .map(|(row, p)| positional_encoding_backward(p, &row[..PE_DIM]))
            .collect()
    }
}

/// Per-primitive residual attributes, row-major `rows × RESIDUAL_CHANNELS`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMap {
    pub data: Vec<f64>,
}

impl ResidualMap {
    pub fn zeros(rows: usize) -> Self {
        Self {
            data: vec![0.0; rows * RESIDUAL_CHANNELS],
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / RESIDUAL_CHANNELS
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * RESIDUAL_CHANNELS..(i + 1) * RESIDUAL_CHANNELS]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * RESIDUAL_CHANNELS..(i + 1) * RESIDUAL_CHANNELS]
    }

    pub fn position(&self, i: usize) -> Vec3 {
        Vec3::from_column_slice(&self.row(i)[RES_POSITION..RES_POSITION + 3])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_maps(front: &PositionalMap, back: &PositionalMap, grid: (usize, usize)) -> Result<Vec<Vec3>> {
    if front.side != Side::Front || back.side != Side::Back {
        return Err(SplatError::Invalid("expected a front map and a back map".into()));
    }
    for m in [front, back] {
        if (m.width, m.height) != grid {
            return Err(SplatError::Resolution(format!(
                "{} map is {}×{}, decoder expects {}×{}",
                m.side.name(),
                m.width,
                m.height,
                grid.0,
                grid.1
            )));
        }
    }
    let mut p = front.covered_positions();
    p.extend(back.covered_positions());
    Ok(p)
}

/// Body residuals for the covered pixels of the front map then the back map.
pub fn decode_body(
    front: &PositionalMap,
    back: &PositionalMap,
    pose: &[f64],
    view: &Vec3,
    decoder: &Decoder,
) -> Result<ResidualMap> {
    if decoder.kind != DecoderKind::Body {
        return Err(SplatError::Invalid("decode_body needs a body decoder".into()));
    }
    let positions = check_maps(front, back, decoder.grid)?;
    Ok(ResidualMap {
        data: decoder.forward(&positions, pose, view).outputs,
    })
}

/// The three face decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceDecoders {
    pub position: Decoder,
    pub color: Decoder,
    pub aux: Decoder,
}

/// Forward intermediates of [`FaceDecoders::forward`].
#[derive(Clone, Debug)]
pub struct FacePass {
    pub residuals: ResidualMap,
    /// Deformed positional samples `P̂ = P + Δ`.
    pub deformed: Vec<Vec3>,
    position: DecoderPass,
    color: DecoderPass,
    aux: DecoderPass,
}

impl FaceDecoders {
    /// `P̂ = P + 𝒫(P, pose)`, then residual rows `𝒞(P̂, view) ∥ 𝒜(P̂) ∥ (P̂ − P)`.
    pub fn forward(&self, positions: &[Vec3], pose: &[f64], view: &Vec3) -> FacePass {
        let position = self.position.forward(positions, pose, view);
        let deformed: Vec<Vec3> = positions
            .iter()
            .zip(position.outputs.chunks(3))
            .map(|(p, d)| p + Vec3::new(d[0], d[1], d[2]))
            .collect();
        let color = self.color.forward(&deformed, pose, view);
        let aux = self.aux.forward(&deformed, pose, view);
        let mut residuals = ResidualMap::zeros(positions.len());
        for i in 0..positions.len() {
            let row = residuals.row_mut(i);
            row[RES_COLOR..RES_COLOR + 12].copy_from_slice(&color.outputs[i * 12..(i + 1) * 12]);
            row[RES_OPACITY..RES_OPACITY + 7].copy_from_slice(&aux.outputs[i * 7..(i + 1) * 7]);
            row[RES_POSITION..RES_POSITION + 3].copy_from_slice(&position.outputs[i * 3..(i + 1) * 3]);
        }
        FacePass {
            residuals,
            deformed,
            position,
            color,
            aux,
        }
    }

    /// Adds parameter gradients of the three decoders into the given buffers.
    pub fn backward(
        &self,
        positions: &[Vec3],
        pose: &[f64],
        pass: &FacePass,
        grad_residuals: &[f64],
        grads: [&mut [f64]; 3],
    ) {
        let [gp, gc, ga] = grads;
        let n = positions.len();
        let mut g_color = Vec::with_capacity(n * 12);
        let mut g_aux = Vec::with_capacity(n * 7);
        for row in grad_residuals.chunks(RESIDUAL_CHANNELS) {
            g_color.extend_from_slice(&row[RES_COLOR..RES_COLOR + 12]);
            g_aux.extend_from_slice(&row[RES_OPACITY..RES_OPACITY + 7]);
        }
        let gd_c = self.color.backward(&pass.deformed, pose, &pass.color, &g_color, gc);
        let gd_a = self.aux.backward(&pass.deformed, pose, &pass.aux, &g_aux, ga);
        let mut g_pos = Vec::with_capacity(n * 3);
        for i in 0..n {
            let row = &grad_residuals[i * RESIDUAL_CHANNELS..(i + 1) * RESIDUAL_CHANNELS];
            let g = gd_c[i] + gd_a[i] + Vec3::from_column_slice(&row[RES_POSITION..RES_POSITION + 3]);
            g_pos.extend_from_slice(g.as_slice());
        }
        self.position.backward(positions, pose, &pass.position, &g_pos, gp);
    }
}

/// Face residuals for the covered samples of the front then back head maps,
/// with the view taken through the center of the (cropped) camera.
pub fn decode_face(
    front: &PositionalMap,
    back: &PositionalMap,
    camera: &CameraModel,
    root_rotation: &Mat3,
    pose: &[f64],
    decoders: &FaceDecoders,
) -> Result<ResidualMap> {
    let positions = check_maps(front, back, decoders.position.grid)?;
    let view = view_through_center(camera, root_rotation);
    Ok(decoders.forward(&positions, pose, &view).residuals)
}

/// Adds residuals to canonical attributes in pre-activation space; the
/// rotation residual is applied as `exp(Δr) ⊗ q`.
pub fn apply_residuals(canonical: &GaussianSet, residuals: &ResidualMap) -> Result<GaussianSet> {
    if residuals.rows() != canonical.len() {
        return Err(SplatError::Correspondence(format!(
            "{} residual rows for {} primitives",
            residuals.rows(),
            canonical.len()
        )));
    }
    let nc = canonical.coeff_count();
    let primitives = canonical
        .primitives
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let r = residuals.row(i);
            let mut out = *g;
            for k in 0..nc {
                out.color[k] += r[RES_COLOR + k];
            }
            out.opacity_logit += r[RES_OPACITY];
            for k in 0..3 {
                out.log_scale[k] += r[RES_SCALE + k];
                out.mean[k] += r[RES_POSITION + k];
            }
            let dr = Vec3::from_column_slice(&r[RES_ROTATION..RES_ROTATION + 3]);
            out.rotation = math::exp_quat(&dr) * g.rotation;
            out
        })
        .collect();
    Ok(GaussianSet {
        sh_degree: canonical.sh_degree,
        primitives,
        tags: canonical.tags.clone(),
    })
}

/// Gradients of [`apply_residuals`] w.r.t. the canonical attributes and the
/// residual rows, given gradients w.r.t. the deformed attributes.
pub fn apply_residuals_backward(
    canonical: &GaussianSet,
    residuals: &ResidualMap,
    grads: &[PrimitiveGrad],
) -> (Vec<PrimitiveGrad>, Vec<f64>) {
    let nc = canonical.coeff_count();
    let per: Vec<(PrimitiveGrad, [f64; RESIDUAL_CHANNELS])> = canonical
        .primitives
        .par_iter()
        .zip(grads.par_iter())
        .enumerate()
        .map(|(i, (g, d))| {
            let r = residuals.row(i);
            let mut gr = [0.0; RESIDUAL_CHANNELS];
            gr[RES_COLOR..RES_COLOR + nc].copy_from_slice(&d.color[..nc]);
            gr[RES_OPACITY] = d.opacity_logit;
            for k in 0..3 {
                gr[RES_SCALE + k] = d.log_scale[k];
                gr[RES_POSITION + k] = d.mean[k];
            }
            let dr = Vec3::from_column_slice(&r[RES_ROTATION..RES_ROTATION + 3]);
            let e = math::exp_quat(&dr);
            let mut gc = *d;
            gc.rotation = math::quat_left_matrix(&e).transpose() * d.rotation;
            let g_e = math::quat_right_matrix(&g.rotation).transpose() * d.rotation;
            let g_dr = math::exp_quat_jacobian(&dr).transpose() * g_e;
            gr[RES_ROTATION..RES_ROTATION + 3].copy_from_slice(g_dr.as_slice());
            (gc, gr)
        })
        .collect();
    let mut canon = Vec::with_capacity(per.len());
    let mut res = Vec::with_capacity(per.len() * RESIDUAL_CHANNELS);
    for (gc, gr) in per {
        canon.push(gc);
        res.extend_from_slice(&gr);
    }
    (canon, res)
}

/// Resolution of double coverage between body and face primitives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuseOptions {
    /// Body primitives with head-joint weight above this are attenuated.
    pub head_threshold: f64,
    /// Opacity multiplier for attenuated body primitives.
    pub attenuation: f64,
}

impl Default for FuseOptions {
    fn default() -> Self {
        Self {
            head_threshold: 0.5,
            attenuation: 0.1,
        }
    }
}

fn attenuated(options: &FuseOptions, head_weight: f64) -> bool {
    options.attenuation != 1.0 && head_weight > options.head_threshold
}

/// Body primitives followed by face primitives. When the face set is not
/// empty, body opacity is multiplied by the attenuation factor where the head
/// weight exceeds the threshold.
pub fn fuse(body: &GaussianSet, head_weights: &[f64], face: &GaussianSet, options: &FuseOptions) -> Result<GaussianSet> {
    if head_weights.len() != body.len() {
        return Err(SplatError::Correspondence(format!(
            "{} head weights for {} body primitives",
            head_weights.len(),
            body.len()
        )));
    }
    if body.sh_degree != face.sh_degree && !face.is_empty() {
        return Err(SplatError::Invalid("body and face sets differ in color degree".into()));
    }
    let mut out = body.clone();
    for (g, w) in out.primitives.iter_mut().zip(head_weights) {
        if !face.is_empty() && attenuated(options, *w) {
            g.opacity_logit = math::logit(options.attenuation * math::sigmoid(g.opacity_logit));
        }
    }
    out.extend_from(face);
    Ok(out)
}

/// Splits fused-set gradients into body and face gradients, undoing the
/// opacity attenuation.
pub fn fuse_backward(
    body: &GaussianSet,
    head_weights: &[f64],
    options: &FuseOptions,
    grads: &[PrimitiveGrad],
) -> (Vec<PrimitiveGrad>, Vec<PrimitiveGrad>) {
    let nb = body.len();
    let has_face = grads.len() > nb;
    let mut gb = grads[..nb].to_vec();
    for ((g, p), w) in gb.iter_mut().zip(&body.primitives).zip(head_weights) {
        if has_face && attenuated(options, *w) {
            // d/do logit(f·σ(o)) = (1 − σ) / (1 − f·σ)
            let s = math::sigmoid(p.opacity_logit);
            g.opacity_logit *= (1.0 - s) / (1.0 - options.attenuation * s);
        }
    }
    (gb, grads[nb..].to_vec())
}
