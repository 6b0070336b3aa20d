//! Staged optimization and evaluation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Sample};
use super::loss::{image_loss, offset_loss, LossHooks, LossTerms, LossWeights};
use super::metrics::{cap_psnr, psnr, psnr_where, ssim, MetricsReport, ViewMetrics};
use super::model::{
    attribute_len, pack_attributes, pack_grads, unpack_attributes, AvatarModel, FrameInputs, ModelGrads,
};
use super::optim::{cosine_lr, Adam};
use crate::camera::CameraModel;
use crate::deformer::{apply_residuals, RESIDUAL_CHANNELS};
use crate::error::{Result, SplatError};
use crate::gaussian::{GaussianSet, PrimitiveGrad};
use crate::image::Image;
use crate::math::Vec3;
use crate::posmap::crop_camera;
use crate::raster::{rasterize, rasterize_backward, RenderOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Decoders reproduce the canonical attributes (zero residuals).
    Pretrain,
    /// Everything, supervised on full images and head crops.
    Joint,
    /// Face decoders and face Gaussians on head crops only.
    Face,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pretrain, Stage::Joint, Stage::Face];

    /// 1-based stage number.
    pub fn number(self) -> usize {
        match self {
            Stage::Pretrain => 1,
            Stage::Joint => 2,
            Stage::Face => 3,
        }
    }

    pub fn from_number(n: usize) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.number() == n)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Joint => "joint",
            Stage::Face => "face",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub pretrain_steps: usize,
    pub joint_steps: usize,
    pub face_steps: usize,
    pub decoder_lr: f64,
    pub attribute_lr: f64,
    /// Learning rate of the canonical face means (m); 0 keeps them fixed.
    pub face_position_lr: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            pretrain_steps: 500,
            joint_steps: 5000,
            face_steps: 500,
            decoder_lr: 5e-4,
            attribute_lr: 5e-3,
            face_position_lr: 0.0,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn steps(&self, stage: Stage) -> usize {
        match stage {
            Stage::Pretrain => self.pretrain_steps,
            Stage::Joint => self.joint_steps,
            Stage::Face => self.face_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("decoder", self.decoder_lr),
            ("attribute", self.attribute_lr),
            ("face position", self.face_position_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SplatError::Invalid(format!("{name} learning rate must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    /// Step counter over all stages.
    pub step: usize,
    pub stage: Stage,
    pub frame: usize,
    pub view: usize,
    pub total: f64,
    pub terms: LossTerms,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,stage,frame,view,total,l1,mask,offset,perceptual,adversarial\n");
        for r in &self.curve {
            let t = &r.terms;
            writeln!(
                s,
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.step,
                r.stage.name(),
                r.frame,
                r.view,
                r.total,
                t.l1,
                t.mask,
                t.offset,
                t.perceptual,
                t.adversarial
            )
            .unwrap();
        }
        s
    }

    pub fn stage_curve(&self, stage: Stage) -> Vec<f64> {
        self.curve.iter().filter(|r| r.stage == stage).map(|r| r.total).collect()
    }
}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stage.number() as u64)))
}

/// Face Gaussians from the head regions of the body deformed for every frame.
pub fn build_face_from_data(model: &mut AvatarModel, data: &Dataset) -> Result<()> {
    let camera = &data.cameras[data.train_views[0]];
    let mut bodies = Vec::with_capacity(data.frames());
    for pose in &data.poses {
        let inputs = model.frame_inputs(pose)?;
        let (_, res) = model.body_residuals(&inputs, camera);
        bodies.push(apply_residuals(&model.body, &res)?);
    }
    model.build_face(&bodies)
}

fn check_compatible(model: &AvatarModel, data: &Dataset) -> Result<()> {
    data.validate(model.template.joint_count(), model.template.shape_dim())?;
    if data.beta != model.beta {
        return Err(SplatError::Dataset("dataset shape parameters differ from the model's".into()));
    }
    for s in &data.samples {
        if (s.crop.width, s.crop.height) != (model.config.crop_size, model.config.crop_size) {
            return Err(SplatError::Dataset(format!(
                "head crops are {}×{}, model expects {}×{}",
                s.crop.width, s.crop.height, model.config.crop_size, model.config.crop_size
            )));
        }
    }
    Ok(())
}

/// Runs every stage in order.
pub fn train(
    model: &mut AvatarModel,
    data: &Dataset,
    schedule: &TrainSchedule,
    weights: &LossWeights,
    hooks: &LossHooks,
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    for stage in Stage::ALL {
        run_stage(model, data, stage, schedule, weights, hooks, &mut report)?;
    }
    Ok(report)
}

struct Optimizers {
    body_decoder: Option<Adam>,
    face_decoders: Option<[Adam; 3]>,
    body: Option<Adam>,
    face: Option<Adam>,
    face_means: Option<Adam>,
}

impl Optimizers {
    fn new(model: &AvatarModel, stage: Stage, train_face_means: bool) -> Self {
        let fd = &model.face_decoders;
        let face_decoders = || {
            [
                Adam::new(fd.position.param_count()),
                Adam::new(fd.color.param_count()),
                Adam::new(fd.aux.param_count()),
            ]
        };
        match stage {
            Stage::Pretrain => Self {
                body_decoder: Some(Adam::new(model.body_decoder.param_count())),
                face_decoders: None,
                body: None,
                face: None,
                face_means: None,
            },
            Stage::Joint => Self {
                body_decoder: Some(Adam::new(model.body_decoder.param_count())),
                face_decoders: Some(face_decoders()),
                body: Some(Adam::new(attribute_len(&model.body))),
                face: Some(Adam::new(attribute_len(&model.face))),
                face_means: train_face_means.then(|| Adam::new(3 * model.face.len())),
            },
            Stage::Face => Self {
                body_decoder: None,
                face_decoders: Some(face_decoders()),
                body: None,
                face: Some(Adam::new(attribute_len(&model.face))),
                face_means: train_face_means.then(|| Adam::new(3 * model.face.len())),
            },
        }
    }

    fn apply(&mut self, model: &mut AvatarModel, grads: &ModelGrads, lr: [f64; 3]) {
        let [decoder_lr, attribute_lr, position_lr] = lr;
        if let Some(adam) = &mut self.body_decoder {
            adam.step(&mut model.body_decoder.params, &grads.body_decoder, decoder_lr);
        }
        if let Some(adams) = &mut self.face_decoders {
            let fd = &mut model.face_decoders;
            for (adam, (params, g)) in adams
                .iter_mut()
                .zip([&mut fd.position.params, &mut fd.color.params, &mut fd.aux.params].into_iter().zip(&grads.face_decoders))
            {
                adam.step(params, g, decoder_lr);
            }
        }
        let degree = model.config.sh_degree;
        for (adam, set, g) in [(&mut self.body, &mut model.body, &grads.body), (&mut self.face, &mut model.face, &grads.face)] {
            if let Some(adam) = adam {
                let mut values = pack_attributes(set);
                adam.step(&mut values, &pack_grads(g, degree), attribute_lr);
                unpack_attributes(set, &values);
            }
        }
        if let Some(adam) = &mut self.face_means {
            let mut means: Vec<f64> = model.face.primitives.iter().flat_map(|g| g.mean.iter().copied().collect::<Vec<_>>()).collect();
            let g: Vec<f64> = grads.face.iter().flat_map(|g| g.mean.iter().copied().collect::<Vec<_>>()).collect();
            adam.step(&mut means, &g, position_lr);
            for (p, m) in model.face.primitives.iter_mut().zip(means.chunks(3)) {
                p.mean = Vec3::new(m[0], m[1], m[2]);
            }
        }
    }
}

fn add_grads(into: &mut [PrimitiveGrad], from: &[PrimitiveGrad]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.add_assign(b);
    }
}

/// One supervised step's loss and gradients for (frame, view).
pub struct StepResult {
    pub terms: LossTerms,
    pub total: f64,
    pub grads: ModelGrads,
}

/// Loss and gradients of one (frame, view) pair. The joint stage supervises
/// the full image and the head crop; the face stage only the head crop.
pub fn supervised_step(
    model: &AvatarModel,
    inputs: &FrameInputs,
    sample: &Sample,
    camera: &CameraModel,
    background: [f64; 3],
    stage: Stage,
    weights: &LossWeights,
    hooks: &LossHooks,
) -> Result<StepResult> {
    let crop_cam = crop_camera(camera, &sample.crop);
    let state = model.forward(inputs, camera, &crop_cam)?;
    let mut terms = LossTerms::default();
    let mut posed_grads = vec![PrimitiveGrad::default(); state.posed.len()];
    if stage == Stage::Joint {
        let full = rasterize(&state.posed, camera, background);
        let body_hooks = LossHooks {
            perceptual: hooks.perceptual,
            adversarial: None,
        };
        let l = image_loss(&full, &sample.image, &sample.mask, weights, &body_hooks)?;
        terms.add(&l.terms);
        add_grads(&mut posed_grads, &rasterize_backward(&state.posed, camera, background, &l.grad_color, &l.grad_alpha));
    }
    let crop = rasterize(&state.posed, &crop_cam, background);
    let l = image_loss(&crop, &sample.crop_image, &sample.crop_mask, weights, hooks)?;
    terms.add(&l.terms);
    add_grads(&mut posed_grads, &rasterize_backward(&state.posed, &crop_cam, background, &l.grad_color, &l.grad_alpha));

    let train_body = stage == Stage::Joint;
    let empty = crate::deformer::ResidualMap::zeros(0);
    let maps = if train_body {
        vec![&state.body_residuals, &state.face_residuals]
    } else {
        vec![&empty, &state.face_residuals]
    };
    let (offset, g_off) = offset_loss(&maps, weights.offset);
    terms.offset = offset;
    let g_body = if train_body { g_off[0].clone() } else { vec![0.0; state.body_residuals.rows() * RESIDUAL_CHANNELS] };
    let grads = model.backward(inputs, &state, &posed_grads, [&g_body, &g_off[1]], train_body);
    Ok(StepResult {
        total: terms.total(weights),
        terms,
        grads,
    })
}

/// Runs one stage, appending to the loss curve.
pub fn run_stage(
    model: &mut AvatarModel,
    data: &Dataset,
    stage: Stage,
    schedule: &TrainSchedule,
    weights: &LossWeights,
    hooks: &LossHooks,
    report: &mut TrainReport,
) -> Result<()> {
    schedule.validate()?;
    weights.validate()?;
    check_compatible(model, data)?;
    let steps = schedule.steps(stage);
    if stage != Stage::Pretrain && steps > 0 && !model.has_face() {
        build_face_from_data(model, data)?;
    }
    let mut rng = stage_rng(schedule.seed, stage);
    let mut cache: Vec<Option<FrameInputs>> = vec![None; data.frames()];
    let train_face_means = stage != Stage::Pretrain && schedule.face_position_lr > 0.0;
    let mut opt = Optimizers::new(model, stage, train_face_means);
    let start = report.curve.len();
    for k in 0..steps {
        let frame = rng.random_range(0..data.frames());
        let view = data.train_views[rng.random_range(0..data.train_views.len())];
        if cache[frame].is_none() {
            cache[frame] = Some(model.frame_inputs(&data.poses[frame])?);
        }
        let inputs = cache[frame].as_ref().unwrap();
        let camera = &data.cameras[view];
        let dlr = cosine_lr(schedule.decoder_lr, k, steps);
        let alr = cosine_lr(schedule.attribute_lr, k, steps);
        let plr = cosine_lr(schedule.face_position_lr, k, steps);
        let (total, terms, grads) = match stage {
            Stage::Pretrain => {
                let (pass, res) = model.body_residuals(inputs, camera);
                let n = res.rows().max(1) as f64;
                let total = res.data.iter().map(|v| v * v).sum::<f64>() / n;
                let g: Vec<f64> = res.data.iter().map(|v| 2.0 * v / n).collect();
                let mut gp = vec![0.0; model.body_decoder.param_count()];
                model.body_decoder.backward(&inputs.body_positions, &inputs.pose_vector, &pass, &g, &mut gp);
                let grads = ModelGrads {
                    body: Vec::new(),
                    face: Vec::new(),
                    body_decoder: gp,
                    face_decoders: [Vec::new(), Vec::new(), Vec::new()],
                };
                (total, LossTerms::default(), grads)
            }
            _ => {
                let r = supervised_step(model, inputs, data.sample(frame, view), camera, data.background, stage, weights, hooks)?;
                (r.total, r.terms, r.grads)
            }
        };
        if !total.is_finite() {
            return Err(SplatError::Invalid(format!("{} stage diverged at step {k}", stage.name())));
        }
        opt.apply(model, &grads, [dlr, alr, plr]);
        report.curve.push(LossRecord {
            step: start + k,
            stage,
            frame,
            view,
            total,
            terms,
        });
    }
    Ok(())
}

fn outside_rect(width: usize, height: usize, x0: f64, y0: f64, w: f64, h: f64) -> Vec<bool> {
    let mut sel = vec![true; width * height];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if px >= x0 && px < x0 + w && py >= y0 && py < y0 + h {
                sel[y * width + x] = false;
            }
        }
    }
    sel
}

/// Metrics of a full render and a head-crop render against one sample.
pub fn view_metrics(frame: usize, view: usize, full: &Image, head: &Image, sample: &Sample) -> Result<ViewMetrics> {
    let (ew, eh) = sample.crop.source_extent();
    let body = outside_rect(full.width, full.height, sample.crop.x, sample.crop.y, ew, eh);
    Ok(ViewMetrics {
        frame,
        view,
        psnr: cap_psnr(psnr(full, &sample.image)?),
        ssim: ssim(full, &sample.image)?,
        body_psnr: cap_psnr(psnr_where(full, &sample.image, &body)?),
        head_psnr: cap_psnr(psnr(head, &sample.crop_image)?),
        head_ssim: ssim(head, &sample.crop_image)?,
    })
}

/// Full-image and head-crop renders of (frame, view).
pub fn render_pair(model: &AvatarModel, inputs: &FrameInputs, data: &Dataset, frame: usize, view: usize) -> Result<(RenderOutput, RenderOutput)> {
    let camera = &data.cameras[view];
    let crop_cam = crop_camera(camera, &data.sample(frame, view).crop);
    let posed: GaussianSet = model.forward(inputs, camera, &crop_cam)?.posed;
    Ok((rasterize(&posed, camera, data.background), rasterize(&posed, &crop_cam, data.background)))
}

/// Per-(frame, view) metrics over `views` and every frame (or `frames`).
pub fn evaluate(model: &AvatarModel, data: &Dataset, views: &[usize], frames: Option<&[usize]>) -> Result<MetricsReport> {
    if views.is_empty() {
        return Err(SplatError::Empty("no views to evaluate".into()));
    }
    check_compatible(model, data)?;
    let all: Vec<usize> = (0..data.frames()).collect();
    let frames = frames.unwrap_or(&all);
    let mut rows = Vec::with_capacity(frames.len() * views.len());
    for &f in frames {
        if f >= data.frames() {
            return Err(SplatError::Invalid(format!("frame {f} does not exist")));
        }
        let inputs = model.frame_inputs(&data.poses[f])?;
        for &v in views {
            if v >= data.cameras.len() {
                return Err(SplatError::Invalid(format!("view {v} does not exist")));
            }
            let (full, head) = render_pair(model, &inputs, data, f, v)?;
            rows.push(view_metrics(f, v, &full.color, &head.color, data.sample(f, v))?);
        }
    }
    Ok(MetricsReport { rows })
}
