mod common;

use avsplat::articulation::SkinnedTemplate;
use avsplat::deformer::{ResidualMap, RESIDUAL_CHANNELS};
use avsplat::image::Image;
use avsplat::posmap::crop_camera;
use avsplat::raster::{rasterize, RenderOutput};
use avsplat::trainer::synth::synthesize;
use avsplat::trainer::*;
use avsplat::{Checkpoint, SplatError};
use common::{fd_check, random_image, rng};
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn small_synth() -> SynthConfig {
    SynthConfig {
        frames: 3,
        train_views: 2,
        heldout_views: 1,
        width: 48,
        height: 48,
        focal: 75.0,
        crop_size: 32,
        body_resolution: 40,
        ..SynthConfig::default()
    }
}

fn small_model_config() -> ModelConfig {
    ModelConfig {
        body_resolution: 40,
        crop_size: 32,
        ..ModelConfig::default()
    }
}

fn scene() -> &'static (SkinnedTemplate, Teacher, Dataset) {
    static SCENE: OnceLock<(SkinnedTemplate, Teacher, Dataset)> = OnceLock::new();
    SCENE.get_or_init(|| {
        let t = SkinnedTemplate::puppet();
        let (teacher, data) = synthesize(&t, &small_synth()).unwrap();
        (t, teacher, data)
    })
}

fn student(seed: u64) -> AvatarModel {
    let (t, _, data) = scene();
    AvatarModel::new(t, &data.beta, small_model_config(), seed).unwrap()
}

fn schedule(pretrain: usize, joint: usize, face: usize, seed: u64) -> TrainSchedule {
    TrainSchedule {
        pretrain_steps: pretrain,
        joint_steps: joint,
        face_steps: face,
        seed,
        ..TrainSchedule::default()
    }
}

fn render_of(color: Image, alpha: Image) -> RenderOutput {
    let n = color.width * color.height;
    RenderOutput {
        color,
        alpha,
        contributors: vec![0; n],
    }
}

fn constant(w: usize, h: usize, v: f64, channels: usize) -> Image {
    Image::filled(w, h, &vec![v; channels])
}

#[test]
fn psnr_closed_form() {
    let a = constant(8, 6, 0.3, 3);
    let b = constant(8, 6, 0.4, 3);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert_eq!(cap_psnr(psnr(&a, &a).unwrap()), PSNR_CAP);
    assert!(psnr(&a, &constant(8, 5, 0.3, 3)).is_err());
}

#[test]
fn ssim_of_identical_images_is_one() {
    let mut r = rng(1);
    let a = random_image(&mut r, 23, 17, 3);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(ssim(&constant(10, 20, 0.5, 3), &constant(10, 20, 0.5, 3)).is_err());
}

/// Windowed SSIM straight from the definition: per window position, explicit
/// 2D Gaussian weights and centered second moments.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let r = 5i64;
    let mut wts = vec![0.0; 121];
    for dy in -r..=r {
        for dx in -r..=r {
            wts[((dy + r) * 11 + dx + r) as usize] = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|w| *w /= s);
    let (c1, c2) = (1e-4, 9e-4);
    let (mut total, mut count) = (0.0, 0);
    for ch in 0..a.channels {
        for y0 in 0..=a.height - 11 {
            for x0 in 0..=a.width - 11 {
                let at = |img: &Image, k: usize| img.pixel(x0 + k % 11, y0 + k / 11)[ch];
                let (mut ux, mut uy) = (0.0, 0.0);
                for k in 0..121 {
                    ux += wts[k] * at(a, k);
                    uy += wts[k] * at(b, k);
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for k in 0..121 {
                    let (dx, dy) = (at(a, k) - ux, at(b, k) - uy);
                    vx += wts[k] * dx * dx;
                    vy += wts[k] * dy * dy;
                    cxy += wts[k] * dx * dy;
                }
                total += (2.0 * ux * uy + c1) * (2.0 * cxy + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_definition() {
    let mut r = rng(2);
    for _ in 0..5 {
        let (w, h) = (r.random_range(11..30), r.random_range(11..30));
        let a = random_image(&mut r, w, h, 3);
        let mut b = a.clone();
        for v in &mut b.data {
            *v = (*v + r.random_range(-0.3..0.3)).clamp(0.0, 1.0);
        }
        let fast = ssim(&a, &b).unwrap();
        let direct = ssim_direct(&a, &b);
        assert!((fast - direct).abs() < 1e-6, "{fast} vs {direct}");
        assert!((-1.0..=1.0).contains(&fast));
    }
}

#[test]
fn loss_is_zero_for_a_perfect_render() {
    let mut r = rng(3);
    let target = random_image(&mut r, 9, 7, 3);
    let mut mask = Image::new(9, 7, 1);
    for v in &mut mask.data {
        *v = if r.random_bool(0.5) { 1.0 } else { 0.0 };
    }
    let rendered = render_of(target.clone(), mask.clone());
    let zero = ResidualMap::zeros(5);
    let out = compute_loss(&rendered, &target, &mask, &[&zero], &LossWeights::default(), &LossHooks::default()).unwrap();
    assert_eq!(out.total, 0.0);
    assert!(out.grad_color.data.iter().all(|g| *g == 0.0));
    assert!(out.grad_alpha.data.iter().all(|g| *g == 0.0));
}

#[test]
fn loss_matches_hand_computation() {
    let (w, h) = (4, 4);
    let target = constant(w, h, 0.3, 3);
    let rendered = render_of(constant(w, h, 0.5, 3), constant(w, h, 0.25, 1));
    let mut mask = Image::new(w, h, 1);
    for i in 0..6 {
        mask.data[i] = 1.0;
    }
    let mut res = ResidualMap::zeros(2);
    res.row_mut(0)[19..22].copy_from_slice(&[0.1, 0.2, 0.2]);
    res.row_mut(1)[19..22].copy_from_slice(&[0.0, 0.0, 0.3]);
    res.row_mut(1)[0] = 5.0;
    let weights = LossWeights {
        l1: 2.0,
        offset: 0.5,
        ..LossWeights::default()
    };
    let out = compute_loss(&rendered, &target, &mask, &[&res], &weights, &LossHooks::default()).unwrap();
    // l1: 6 of 16 pixels masked, |0.5 − 0.3| = 0.2 each.
    let l1 = 0.2 * 6.0 / 16.0;
    // mask: |0.25 − 1| on 6 pixels, |0.25 − 0| on 10.
    let mask_term = (0.75 * 6.0 + 0.25 * 10.0) / 16.0;
    // offset: (0.01 + 0.04 + 0.04 + 0.09) / 2 rows.
    let offset = 0.18 / 2.0;
    assert!((out.terms.l1 - l1).abs() < 1e-15);
    assert!((out.terms.mask - mask_term).abs() < 1e-15);
    assert!((out.terms.offset - offset).abs() < 1e-15);
    assert!((out.total - (2.0 * l1 + 2.0 * mask_term + 0.5 * offset)).abs() < 1e-14);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut r = rng(4);
    let (w, h) = (6, 5);
    let target = random_image(&mut r, w, h, 3);
    let mut mask = Image::new(w, h, 1);
    for v in &mut mask.data {
        *v = if r.random_bool(0.6) { 1.0 } else { 0.0 };
    }
    let color = random_image(&mut r, w, h, 3);
    let alpha = random_image(&mut r, w, h, 1);
    let mut res = ResidualMap::zeros(4);
    for v in &mut res.data {
        *v = r.random_range(-0.1..0.1);
    }
    let weights = LossWeights::default();
    let out = compute_loss(&render_of(color.clone(), alpha.clone()), &target, &mask, &[&res], &weights, &LossHooks::default())
        .unwrap();
    let nc = color.data.len();
    let na = alpha.data.len();
    let mut params = color.data.clone();
    params.extend(&alpha.data);
    params.extend(&res.data);
    let mut analytic = out.grad_color.data.clone();
    analytic.extend(&out.grad_alpha.data);
    analytic.extend(&out.grad_residuals[0]);
    let report = fd_check("loss", &params, &analytic, 1e-7, 1e-4, 1e-8, |p| {
        let mut c = color.clone();
        c.data.copy_from_slice(&p[..nc]);
        let mut a = alpha.clone();
        a.data.copy_from_slice(&p[nc..nc + na]);
        let mut rm = res.clone();
        rm.data.copy_from_slice(&p[nc + na..]);
        let l = compute_loss(&render_of(c, a), &target, &mask, &[&rm], &weights, &LossHooks::default()).unwrap();
        (l.total, Vec::new())
    });
    assert_eq!(report.checked, params.len());
    assert!(report.failures.is_empty(), "{:?}", report.failures);
}

struct ConstantHook(f64);

impl ImageHook for ConstantHook {
    fn evaluate(&self, rendered: &Image, _target: &Image) -> (f64, Image) {
        (self.0, Image::filled(rendered.width, rendered.height, &[1.0, 2.0, 3.0]))
    }
}

#[test]
fn hooks_add_weighted_terms_and_gradients() {
    let mut r = rng(5);
    let target = random_image(&mut r, 5, 5, 3);
    let rendered = render_of(random_image(&mut r, 5, 5, 3), random_image(&mut r, 5, 5, 1));
    let mask = constant(5, 5, 1.0, 1);
    let w = LossWeights::default();
    let base = image_loss(&rendered, &target, &mask, &w, &LossHooks::default()).unwrap();
    let hook = ConstantHook(0.7);
    let hooks = LossHooks {
        perceptual: Some(&hook),
        adversarial: Some(&hook),
    };
    let with = image_loss(&rendered, &target, &mask, &w, &hooks).unwrap();
    assert_eq!(with.terms.perceptual, 0.7);
    assert_eq!(with.terms.adversarial, 0.7);
    let expected_total = base.terms.total(&w) + 0.7 * (w.perceptual + w.adversarial);
    assert!((with.terms.total(&w) - expected_total).abs() < 1e-15);
    for (i, (a, b)) in with.grad_color.data.iter().zip(&base.grad_color.data).enumerate() {
        let g = [1.0, 2.0, 3.0][i % 3];
        assert!((a - b - (w.perceptual + w.adversarial) * g).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_l1_ignores_targets_outside_the_mask(seed in any::<u64>(), fill in 0.0f64..1.0) {
        let mut r = rng(seed);
        let target = random_image(&mut r, 6, 6, 3);
        let mut mask = Image::new(6, 6, 1);
        for v in &mut mask.data {
            *v = if r.random_bool(0.5) { 1.0 } else { 0.0 };
        }
        let rendered = render_of(random_image(&mut r, 6, 6, 3), random_image(&mut r, 6, 6, 1));
        let mut other = target.clone();
        for i in 0..36 {
            if mask.data[i] == 0.0 {
                other.data[3 * i..3 * i + 3].fill(fill);
            }
        }
        let w = LossWeights::default();
        let a = image_loss(&rendered, &target, &mask, &w, &LossHooks::default()).unwrap();
        let b = image_loss(&rendered, &other, &mask, &w, &LossHooks::default()).unwrap();
        prop_assert_eq!(a.terms, b.terms);
        prop_assert_eq!(a.grad_color, b.grad_color);
        prop_assert!(a.terms.total(&w) >= 0.0);
    }

    #[test]
    fn offset_gradient_is_exact(seed in any::<u64>(), rows in 1usize..20, lambda in 0.0f64..1.0) {
        let mut r = rng(seed);
        let mut a = ResidualMap::zeros(rows);
        let mut b = ResidualMap::zeros(rows / 2 + 1);
        for v in a.data.iter_mut().chain(b.data.iter_mut()) {
            *v = r.random_range(-1.0..1.0);
        }
        let (_, g) = offset_loss(&[&a, &b], lambda);
        let n = (a.rows() + b.rows()) as f64;
        for (map, grad) in [(&a, &g[0]), (&b, &g[1])] {
            for i in 0..map.rows() {
                for k in 0..RESIDUAL_CHANNELS {
                    let expected = if (19..22).contains(&k) { 2.0 * lambda * map.row(i)[k] / n } else { 0.0 };
                    prop_assert_eq!(grad[i * RESIDUAL_CHANNELS + k], expected);
                }
            }
        }
    }
}

#[test]
fn adam_and_cosine_schedule() {
    assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
    assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
    let mut adam = Adam::new(2);
    let mut p = vec![1.0, -1.0];
    adam.step(&mut p, &[3.0, -0.5], 0.01);
    // Bias-corrected first step moves each entry by lr·sign(g).
    assert!((p[0] - 0.99).abs() < 1e-12 && (p[1] + 0.99).abs() < 1e-12);
    assert_eq!(adam.steps(), 1);
}

#[test]
fn empty_schedule_leaves_the_model_unchanged() {
    let (_, _, data) = scene();
    let mut model = student(3);
    let before = model.clone();
    let report = train(&mut model, data, &schedule(0, 0, 0, 1), &LossWeights::default(), &LossHooks::default()).unwrap();
    assert!(report.curve.is_empty());
    assert_eq!(model, before);
}

#[test]
fn same_seed_gives_identical_curves() {
    let (_, _, data) = scene();
    let run = |seed| {
        let mut model = student(11);
        let rep = train(&mut model, data, &schedule(3, 6, 3, seed), &LossWeights::default(), &LossHooks::default()).unwrap();
        (model, rep)
    };
    let (m1, r1) = run(5);
    let (m2, r2) = run(5);
    assert_eq!(r1, r2);
    assert_eq!(m1.to_checkpoint(0).to_bytes(), m2.to_checkpoint(0).to_bytes());
    let (_, r3) = run(6);
    assert_ne!(r1, r3);
    assert_eq!(r1.curve.len(), 12);
    assert!(r1.to_csv().lines().count() == 13);
}

#[test]
fn face_means_move_only_with_a_position_rate() {
    let (_, _, data) = scene();
    let run = |plr| {
        let mut model = student(12);
        let s = TrainSchedule { face_position_lr: plr, ..schedule(0, 4, 4, 1) };
        train(&mut model, data, &s, &LossWeights::default(), &LossHooks::default()).unwrap();
        model
    };
    let fixed = run(0.0);
    assert!(fixed.face.primitives.iter().zip(&fixed.face_anchors).all(|(g, a)| g.mean == *a));
    let moved = run(1e-3);
    assert_eq!(moved.face_anchors, fixed.face_anchors);
    assert!(moved.face.primitives.iter().zip(&moved.face_anchors).any(|(g, a)| g.mean != *a));
}

#[test]
fn loss_decreases_over_first_hundred_steps() {
    let (_, _, data) = scene();
    let mut decreased = 0;
    for seed in 0..20u64 {
        let mut model = student(100 + seed);
        let mut report = TrainReport::default();
        run_stage(&mut model, data, Stage::Joint, &schedule(0, 100, 0, seed), &LossWeights::default(), &LossHooks::default(), &mut report)
            .unwrap();
        let c = report.stage_curve(Stage::Joint);
        let first = c[..10].iter().sum::<f64>() / 10.0;
        let last = c[90..].iter().sum::<f64>() / 10.0;
        if last < first {
            decreased += 1;
        }
    }
    assert!(decreased >= 19, "{decreased}/20 runs decreased");
}

#[test]
fn zero_decoders_are_transparent() {
    let (t, teacher, data) = scene();
    let mut model = student(4);
    model.body = teacher.canonical.clone();
    model.body_weights = teacher.weights.clone();
    let w = LossWeights::default();
    for (frame, view) in [(0, 0), (1, 1), (2, 0)] {
        let inputs = model.frame_inputs(&data.poses[frame]).unwrap();
        let cam = &data.cameras[view];
        let sample = data.sample(frame, view);
        let step = supervised_step(&model, &inputs, sample, cam, data.background, Stage::Joint, &w, &LossHooks::default()).unwrap();
        let posed = teacher.posed(t, &data.beta, &data.poses[frame]).unwrap();
        let full = rasterize(&posed, cam, data.background);
        let crop = rasterize(&posed, &crop_camera(cam, &sample.crop), data.background);
        let hooks = LossHooks::default();
        let direct = image_loss(&full, &sample.image, &sample.mask, &w, &hooks).unwrap().terms.total(&w)
            + image_loss(&crop, &sample.crop_image, &sample.crop_mask, &w, &hooks).unwrap().terms.total(&w);
        assert!((step.total - direct).abs() < 1e-9, "{} vs {direct}", step.total);
        assert!(step.terms.l1 < 2.0 / 510.0);
    }
}

#[test]
fn ground_truth_against_itself_hits_the_cap() {
    let (_, _, data) = scene();
    let s = data.sample(1, 2);
    let m = view_metrics(1, 2, &s.image, &s.crop_image, s).unwrap();
    assert_eq!((m.psnr, m.body_psnr, m.head_psnr), (PSNR_CAP, PSNR_CAP, PSNR_CAP));
    assert!((m.ssim - 1.0).abs() < 1e-12 && (m.head_ssim - 1.0).abs() < 1e-12);
}

#[test]
fn body_metrics_exclude_the_head_crop() {
    let (_, _, data) = scene();
    let s = data.sample(0, 0);
    let (ew, eh) = s.crop.source_extent();
    assert!(s.crop.x > 0.0 && s.crop.y > 0.0);
    assert!(s.crop.x + ew < 48.0 && s.crop.y + eh < 48.0);
    let mut inside = s.image.clone();
    let (cx, cy) = ((s.crop.x + ew / 2.0) as usize, (s.crop.y + eh / 2.0) as usize);
    inside.pixel_mut(cx, cy)[0] = 1.0 - inside.pixel(cx, cy)[0];
    let m = view_metrics(0, 0, &inside, &s.crop_image, s).unwrap();
    assert_eq!(m.body_psnr, PSNR_CAP);
    assert!(m.psnr < PSNR_CAP);
    let mut outside = s.image.clone();
    outside.pixel_mut(0, 0)[1] = 0.5;
    let m = view_metrics(0, 0, &outside, &s.crop_image, s).unwrap();
    assert!(m.body_psnr < PSNR_CAP);
}

#[test]
fn evaluate_aggregate_is_the_row_mean() {
    let (_, _, data) = scene();
    let model = student(8);
    let report = evaluate(&model, data, &data.heldout_views, None).unwrap();
    assert_eq!(report.rows.len(), data.frames() * data.heldout_views.len());
    let mean = report.mean();
    let n = report.rows.len() as f64;
    assert!((mean.psnr - report.rows.iter().map(|r| r.psnr).sum::<f64>() / n).abs() < 1e-12);
    assert!((mean.head_ssim - report.rows.iter().map(|r| r.head_ssim).sum::<f64>() / n).abs() < 1e-12);
    assert_eq!(report.per_view().len(), data.heldout_views.len());
    assert_eq!(report.to_csv().lines().count(), report.rows.len() + 1);
    assert!(matches!(evaluate(&model, data, &[], None), Err(SplatError::Empty(_))));
}

#[test]
fn checkpoint_round_trip_after_training() {
    let (t, _, data) = scene();
    let mut model = student(9);
    train(&mut model, data, &schedule(2, 3, 2, 0), &LossWeights::default(), &LossHooks::default()).unwrap();
    assert!(model.has_face());
    let bytes = model.to_checkpoint(7).to_bytes();
    let restored = AvatarModel::from_checkpoint(t, &Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(restored, model);
    let (_, v) = (0, 1);
    let pose = &data.poses[1];
    assert_eq!(
        restored.render(pose, &data.cameras[v], data.background).unwrap().color,
        model.render(pose, &data.cameras[v], data.background).unwrap().color
    );
}

#[test]
fn dataset_problems_are_all_reported_before_training() {
    let (_, _, data) = scene();
    let mut bad = data.clone();
    let idx = bad.cameras.len() + 1;
    bad.samples[idx].mask = Image::new(3, 3, 1);
    bad.train_views.push(17);
    let mut model = student(1);
    let before = model.clone();
    let err = train(&mut model, &bad, &schedule(1, 1, 1, 0), &LossWeights::default(), &LossHooks::default()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, SplatError::Dataset(_)));
    assert!(msg.contains("frame 1 camera 1: mask"), "{msg}");
    assert!(msg.contains("view 17 does not exist"), "{msg}");
    assert_eq!(model, before);
}
