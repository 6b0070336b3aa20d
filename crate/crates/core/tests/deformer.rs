mod common;

use avsplat::deformer::*;
use avsplat::math::{self, Vec3};
use avsplat::{rasterize, GaussianSet, Intrinsics, PrimitiveGrad, ProjectionMode, SourceTag};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn fresh(rng: &mut impl Rng, kind: DecoderKind, pose_dim: usize) -> Decoder {
    Decoder::new(kind, DecoderConfig::default(), pose_dim, (8, 8), Activation::Tanh, rng).unwrap()
}

fn face_decoders(rng: &mut impl Rng, pose_dim: usize, randomize: bool) -> FaceDecoders {
    let mut make = |kind| {
        if randomize {
            random_decoder(rng, kind, 3, Activation::Tanh, pose_dim)
        } else {
            fresh(rng, kind, pose_dim)
        }
    };
    FaceDecoders {
        position: make(DecoderKind::FacePosition),
        color: make(DecoderKind::FaceColor),
        aux: make(DecoderKind::FaceAux),
    }
}

fn assert_report(r: &GradReport, min_checked: usize) {
    assert!(r.failures.is_empty(), "{} gradient failures:\n{}", r.failures.len(), r.failures.join("\n"));
    assert!(r.checked >= min_checked, "only {} entries checked ({} skipped)", r.checked, r.skipped);
}

#[test]
fn fresh_decoders_output_exact_zeros() {
    let mut r = rng(1);
    let pos = points(&mut r, 300);
    let pose: Vec<f64> = (0..33).map(|_| r.random_range(-1.0..1.0)).collect();
    for kind in [DecoderKind::Body, DecoderKind::FacePosition, DecoderKind::FaceColor, DecoderKind::FaceAux] {
        let d = fresh(&mut r, kind, 33);
        let out = d.forward(&pos, &pose, &Vec3::z()).outputs;
        assert_eq!(out.len(), 300 * d.output_dim());
        assert!(out.iter().all(|v| *v == 0.0), "{kind:?}");
    }
}

#[test]
fn outputs_are_deterministic_and_row_independent() {
    let mut r = rng(2);
    let d = random_decoder(&mut r, DecoderKind::Body, 3, Activation::Tanh, 33);
    let pos = points(&mut r, 600);
    let pose: Vec<f64> = (0..33).map(|_| r.random_range(-1.0..1.0)).collect();
    let view = random_unit(&mut r);
    let a = d.forward(&pos, &pose, &view).outputs;
    let b = d.forward(&pos, &pose, &view).outputs;
    assert_eq!(a, b);
    // each row depends only on its own sample
    let single = d.forward(&pos[517..518], &pose, &view).outputs;
    let w = d.output_dim();
    for (x, y) in single.iter().zip(&a[517 * w..518 * w]) {
        assert!((x - y).abs() <= 1e-14 * (1.0 + y.abs()));
    }
}

#[test]
fn zero_pose_projection_makes_output_pose_invariant() {
    let mut r = rng(3);
    let mut d = random_decoder(&mut r, DecoderKind::Body, 3, Activation::Tanh, 33);
    let proj = POSE_EMBED_DIM * 33;
    for v in &mut d.params[..proj] {
        *v = 0.0;
    }
    let pos = points(&mut r, 50);
    let view = random_unit(&mut r);
    let reference = d.forward(&pos, &[0.0; 33], &view).outputs;
    for _ in 0..5 {
        let pose: Vec<f64> = (0..33).map(|_| r.random_range(-3.0..3.0)).collect();
        assert_eq!(d.forward(&pos, &pose, &view).outputs, reference);
    }
}

#[test]
fn pose_changes_body_output_when_projection_is_nonzero() {
    let mut r = rng(4);
    let d = random_decoder(&mut r, DecoderKind::Body, 3, Activation::Tanh, 33);
    let pos = points(&mut r, 20);
    let a = d.forward(&pos, &[0.0; 33], &Vec3::z()).outputs;
    let mut pose = vec![0.0; 33];
    pose[5] = 0.5;
    let b = d.forward(&pos, &pose, &Vec3::z()).outputs;
    assert!(a.iter().zip(&b).any(|(x, y)| x != y));
}

#[test]
fn decoder_dimensions() {
    let mut r = rng(5);
    for (kind, dim, out) in [
        (DecoderKind::Body, PE_DIM + POSE_EMBED_DIM + VIEW_DIM, 22),
        (DecoderKind::FacePosition, PE_DIM + POSE_EMBED_DIM, 3),
        (DecoderKind::FaceColor, PE_DIM + VIEW_DIM, 12),
        (DecoderKind::FaceAux, PE_DIM, 7),
    ] {
        assert_eq!(kind.input_dim(), dim);
        let d = fresh(&mut r, kind, 10);
        assert_eq!(d.output_dim(), out);
        let proj = if kind.uses_pose() { POSE_EMBED_DIM * 10 } else { 0 };
        let mlp = dim * 32 + 32 + 32 * 32 + 32 + 32 * out + out;
        assert_eq!(d.param_count(), proj + mlp, "{kind:?}");
    }
    let cfg = DecoderConfig { n_mlp: 0, cm: 1 };
    assert!(Decoder::new(DecoderKind::Body, cfg, 3, (4, 4), Activation::Tanh, &mut r).is_err());
}

#[test]
fn architecture_hash_tracks_layout_only() {
    let mut r = rng(6);
    let a = fresh(&mut r, DecoderKind::Body, 33);
    let mut b = random_decoder(&mut r, DecoderKind::Body, 3, Activation::Tanh, 33);
    b.grid = (8, 8);
    let c = fresh(&mut r, DecoderKind::Body, 33);
    assert_eq!(a.architecture_hash(), c.architecture_hash());
    assert_eq!(a.architecture_hash(), b.architecture_hash());
    let wide = Decoder::new(
        DecoderKind::Body,
        DecoderConfig { n_mlp: 3, cm: 2 },
        33,
        (8, 8),
        Activation::Tanh,
        &mut r,
    )
    .unwrap();
    let deep = Decoder::new(
        DecoderKind::Body,
        DecoderConfig { n_mlp: 4, cm: 1 },
        33,
        (8, 8),
        Activation::Tanh,
        &mut r,
    )
    .unwrap();
    let other_grid = Decoder::new(DecoderKind::Body, DecoderConfig::default(), 33, (16, 8), Activation::Tanh, &mut r).unwrap();
    let face = fresh(&mut r, DecoderKind::FaceColor, 33);
    let hashes = [a.architecture_hash(), wide.architecture_hash(), deep.architecture_hash(), other_grid.architecture_hash(), face.architecture_hash()];
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            assert_ne!(hashes[i], hashes[j], "{i} {j}");
        }
    }
}

#[test]
fn decode_body_rejects_wrong_grid() {
    use avsplat::posmap::{map_camera, PositionalMap, Side};
    let mut r = rng(7);
    let d = fresh(&mut r, DecoderKind::Body, 3);
    let map = |side, w: usize, h: usize| {
        let cam = map_camera(side, &Vec3::zeros(), 0.1, w, h);
        let mut cov = vec![false; w * h];
        cov[3] = true;
        PositionalMap::from_samples(side, cam, vec![Vec3::new(0.1, 0.2, 0.3); w * h], cov).unwrap()
    };
    let ok = decode_body(&map(Side::Front, 8, 8), &map(Side::Back, 8, 8), &[0.0; 3], &Vec3::z(), &d).unwrap();
    assert_eq!(ok.rows(), 2);
    let err = decode_body(&map(Side::Front, 8, 4), &map(Side::Back, 8, 8), &[0.0; 3], &Vec3::z(), &d);
    assert!(matches!(err, Err(avsplat::SplatError::Resolution(_))), "{err:?}");
    let swapped = decode_body(&map(Side::Back, 8, 8), &map(Side::Front, 8, 8), &[0.0; 3], &Vec3::z(), &d);
    assert!(swapped.is_err());
}

#[test]
fn positional_encoding_layout() {
    let p = Vec3::new(0.25, -0.5, 0.125);
    let mut out = [0.0; PE_DIM];
    positional_encoding(&p, &mut out);
    assert_eq!(&out[..3], p.as_slice());
    for k in 0..PE_BANDS {
        for c in 0..3 {
            let a = std::f64::consts::PI * 2f64.powi(k as i32) * p[c];
            assert!((out[3 + 6 * k + c] - a.sin()).abs() < 1e-15);
            assert!((out[3 + 6 * k + 3 + c] - a.cos()).abs() < 1e-15);
        }
    }
}

#[test]
fn face_pass_with_fresh_decoders_leaves_samples_in_place() {
    let mut r = rng(8);
    let f = face_decoders(&mut r, 33, false);
    let pos = points(&mut r, 40);
    let pass = f.forward(&pos, &[0.1; 33], &Vec3::z());
    assert_eq!(pass.deformed, pos);
    assert!(pass.residuals.data.iter().all(|v| *v == 0.0));
}

#[test]
fn face_residual_rows_follow_the_channel_layout() {
    let mut r = rng(9);
    let f = face_decoders(&mut r, 33, true);
    let pos = points(&mut r, 30);
    let pose: Vec<f64> = (0..33).map(|_| r.random_range(-1.0..1.0)).collect();
    let view = random_unit(&mut r);
    let pass = f.forward(&pos, &pose, &view);
    let dpos = f.position.forward(&pos, &pose, &view).outputs;
    let deformed: Vec<Vec3> = pos.iter().zip(dpos.chunks(3)).map(|(p, d)| p + Vec3::from_column_slice(d)).collect();
    let color = f.color.forward(&deformed, &pose, &view).outputs;
    let aux = f.aux.forward(&deformed, &pose, &view).outputs;
    for i in 0..pos.len() {
        let row = pass.residuals.row(i);
        assert_eq!(&row[RES_COLOR..RES_COLOR + 12], &color[i * 12..(i + 1) * 12]);
        assert_eq!(&row[RES_OPACITY..RES_OPACITY + 7], &aux[i * 7..(i + 1) * 7]);
        assert_eq!(&row[RES_POSITION..RES_POSITION + 3], &dpos[i * 3..(i + 1) * 3]);
        assert_eq!(pass.deformed[i], deformed[i]);
    }
}

#[test]
fn crop_intrinsics_only_reach_the_color_channels() {
    use avsplat::posmap::crop_intrinsics;
    use avsplat::posmap::CropSpec;
    let mut r = rng(10);
    let f = face_decoders(&mut r, 33, true);
    let pos = points(&mut r, 30);
    let pose: Vec<f64> = (0..33).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut cam = random_camera(&mut r, 128, 128, ProjectionMode::Perspective);
    let root = random_rotation(&mut r);
    let v0 = view_through_center(&cam, &root);
    let crop = CropSpec {
        x: 70.0,
        y: 10.0,
        scale: 1.5,
        width: 64,
        height: 64,
    };
    cam.intrinsics = crop_intrinsics(&cam.intrinsics, &crop);
    let v1 = view_through_center(&cam, &root);
    assert!((v0 - v1).norm() > 1e-3);
    let a = f.forward(&pos, &pose, &v0).residuals;
    let b = f.forward(&pos, &pose, &v1).residuals;
    for i in 0..pos.len() {
        let (ra, rb) = (a.row(i), b.row(i));
        assert!(ra[RES_COLOR..RES_COLOR + 12] != rb[RES_COLOR..RES_COLOR + 12]);
        assert_eq!(&ra[RES_OPACITY..], &rb[RES_OPACITY..]);
    }
}

#[test]
fn view_through_center_is_the_optical_axis_for_a_centered_camera() {
    let mut r = rng(11);
    let mut cam = random_camera(&mut r, 64, 64, ProjectionMode::Perspective);
    cam.intrinsics = Intrinsics {
        fx: 80.0,
        fy: 80.0,
        cx: 32.0,
        cy: 32.0,
    };
    let root = random_rotation(&mut r);
    let v = view_through_center(&cam, &root);
    let axis = cam.rotation.transpose() * Vec3::z();
    assert!((v - root.transpose() * axis).norm() < 1e-12, "{v} vs {axis}");
    assert!((v.norm() - 1.0).abs() < 1e-12);
}

fn random_residuals(rng: &mut impl Rng, rows: usize, scale: f64) -> ResidualMap {
    let mut m = ResidualMap::zeros(rows);
    for v in m.data.iter_mut() {
        *v = rng.random_range(-scale..scale);
    }
    m
}

#[test]
fn zero_residuals_are_the_identity() {
    let mut r = rng(12);
    let set = random_set(&mut r, 50, 1);
    let out = apply_residuals(&set, &ResidualMap::zeros(50)).unwrap();
    assert_eq!(out, set);
}

#[test]
fn uniform_position_residual_translates_the_render() {
    let mut r = rng(13);
    let mut set = random_set(&mut r, 12, 0);
    for g in &mut set.primitives {
        g.mean *= 0.3;
    }
    let mut res = ResidualMap::zeros(12);
    let shift = Vec3::new(0.01, 0.0, 0.0);
    for i in 0..12 {
        res.row_mut(i)[RES_POSITION..].copy_from_slice(shift.as_slice());
    }
    let moved = apply_residuals(&set, &res).unwrap();
    for (a, b) in set.primitives.iter().zip(&moved.primitives) {
        assert_eq!(b.mean, a.mean + shift);
        assert_eq!(b.log_scale, a.log_scale);
        assert_eq!(b.rotation, a.rotation);
    }
    // moving the camera by the same amount gives back the original image
    let cam = random_camera(&mut r, 32, 32, ProjectionMode::Perspective);
    let mut shifted = cam.clone();
    shifted.translation -= cam.rotation * shift;
    let a = rasterize(&set, &cam, [0.0; 3]);
    let b = rasterize(&moved, &shifted, [0.0; 3]);
    let worst = a.color.data.iter().zip(&b.color.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn residuals_round_trip() {
    let mut r = rng(14);
    for _ in 0..20 {
        let set = random_set(&mut r, 30, 1);
        let res = random_residuals(&mut r, 30, 0.5);
        let out = apply_residuals(&set, &res).unwrap();
        let mut neg = res.clone();
        for v in neg.data.iter_mut() {
            *v = -*v;
        }
        let back = apply_residuals(&out, &neg).unwrap();
        for (a, b) in set.primitives.iter().zip(&back.primitives) {
            assert!((a.mean - b.mean).norm() < 1e-10);
            assert!((a.log_scale - b.log_scale).norm() < 1e-10);
            assert!((a.opacity_logit - b.opacity_logit).abs() < 1e-10);
            for k in 0..12 {
                assert!((a.color[k] - b.color[k]).abs() < 1e-10);
            }
            // exp(−v)·exp(v) = 1 for the same axis
            assert!((a.rotation.coords - b.rotation.coords).norm() < 1e-8);
        }
    }
}

#[test]
fn residual_row_mismatch_is_rejected() {
    let mut r = rng(15);
    let set = random_set(&mut r, 5, 0);
    let err = apply_residuals(&set, &ResidualMap::zeros(4));
    assert!(matches!(err, Err(avsplat::SplatError::Correspondence(_))));
}

fn flat_grads(g: &[PrimitiveGrad]) -> Vec<f64> {
    g.iter().flat_map(|p| (0..PARAMS_PER_PRIMITIVE).map(move |k| param_grad(p, k))).collect()
}

fn dot_set(set: &GaussianSet, up: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, p) in set.primitives.iter().enumerate() {
        let mut q = *p;
        for k in 0..PARAMS_PER_PRIMITIVE {
            s += *param_mut(&mut q, k) * up[i * PARAMS_PER_PRIMITIVE + k];
        }
    }
    s
}

fn upstream(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<PrimitiveGrad>) {
    let up: Vec<f64> = (0..n * PARAMS_PER_PRIMITIVE).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads = up
        .chunks(PARAMS_PER_PRIMITIVE)
        .map(|c| {
            let mut g = PrimitiveGrad {
                mean: Vec3::from_column_slice(&c[0..3]),
                log_scale: Vec3::from_column_slice(&c[3..6]),
                rotation: nalgebra::Vector4::from_column_slice(&c[6..10]),
                opacity_logit: c[10],
                ..Default::default()
            };
            g.color.copy_from_slice(&c[11..23]);
            g
        })
        .collect();
    (up, grads)
}

#[test]
fn apply_residuals_backward_matches_finite_differences() {
    let mut r = rng(16);
    let set = random_set(&mut r, 6, 1);
    let res = random_residuals(&mut r, 6, 0.7);
    let (up, grads) = upstream(&mut r, 6);
    let (g_canon, g_res) = apply_residuals_backward(&set, &res, &grads);
    let mut report = fd_check("residual", &res.data, &g_res, 1e-6, 1e-6, 1e-9, |d| {
        let m = ResidualMap { data: d.to_vec() };
        (dot_set(&apply_residuals(&set, &m).unwrap(), &up), Vec::new())
    });
    let flat: Vec<f64> = set
        .primitives
        .iter()
        .flat_map(|p| {
            let mut q = *p;
            (0..PARAMS_PER_PRIMITIVE).map(move |k| *param_mut(&mut q, k)).collect::<Vec<_>>()
        })
        .collect();
    report.merge(fd_check("canonical", &flat, &flat_grads(&g_canon), 1e-6, 1e-6, 1e-9, |x| {
        let mut s = set.clone();
        for (i, p) in s.primitives.iter_mut().enumerate() {
            for k in 0..PARAMS_PER_PRIMITIVE {
                *param_mut(p, k) = x[i * PARAMS_PER_PRIMITIVE + k];
            }
        }
        (dot_set(&apply_residuals(&s, &res).unwrap(), &up), Vec::new())
    }));
    assert_report(&report, 6 * (22 + 23));
}

fn head_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i % 3 == 0 { rng.random_range(0.51..1.0) } else { rng.random_range(0.0..0.5) }).collect()
}

#[test]
fn empty_face_leaves_body_unchanged() {
    let mut r = rng(17);
    let body = random_set(&mut r, 20, 1);
    let w = head_weights(&mut r, 20);
    let fused = fuse(&body, &w, &GaussianSet::new(1), &FuseOptions::default()).unwrap();
    assert_eq!(fused, body);
}

#[test]
fn unit_attenuation_concatenates() {
    let mut r = rng(18);
    let body = random_set(&mut r, 20, 1);
    let mut face = random_set(&mut r, 7, 1);
    face.tags = vec![SourceTag::Face; 7];
    let w = head_weights(&mut r, 20);
    let opts = FuseOptions {
        attenuation: 1.0,
        ..Default::default()
    };
    let fused = fuse(&body, &w, &face, &opts).unwrap();
    assert_eq!(fused.primitives[..20], body.primitives[..]);
    assert_eq!(fused.primitives[20..], face.primitives[..]);
    assert_eq!(fused.tags[..20], body.tags[..]);
    assert_eq!(fused.tags[20..], face.tags[..]);
}

#[test]
fn attenuation_scales_head_opacity_only() {
    let mut r = rng(19);
    let body = random_set(&mut r, 30, 0);
    let face = random_set(&mut r, 4, 0);
    let w = head_weights(&mut r, 30);
    let opts = FuseOptions::default();
    let fused = fuse(&body, &w, &face, &opts).unwrap();
    for i in 0..30 {
        let (a, b) = (&body.primitives[i], &fused.primitives[i]);
        if w[i] > 0.5 {
            assert!((b.opacity() - 0.1 * a.opacity()).abs() < 1e-12);
        } else {
            assert_eq!(a, b);
        }
    }
    assert!(fuse(&body, &w[..29], &face, &opts).is_err());
}

#[test]
fn fused_render_composites_both_branches() {
    // body alone, face alone and fused with no attenuation: the fused image
    // must differ from each part exactly where the other part contributes
    let mut r = rng(20);
    let cam = random_camera(&mut r, 24, 24, ProjectionMode::Perspective);
    let mut body = random_set(&mut r, 6, 0);
    let mut face = random_set(&mut r, 6, 0);
    for g in body.primitives.iter_mut().chain(face.primitives.iter_mut()) {
        g.mean *= 0.4;
    }
    face.tags = vec![SourceTag::Face; 6];
    let w = vec![0.0; 6];
    let opts = FuseOptions {
        attenuation: 1.0,
        ..Default::default()
    };
    let fused = fuse(&body, &w, &face, &opts).unwrap();
    let ib = rasterize(&body, &cam, [0.0; 3]);
    let iface = rasterize(&face, &cam, [0.0; 3]);
    let ifu = rasterize(&fused, &cam, [0.0; 3]);
    let mut union = body.clone();
    union.extend_from(&face);
    let iu = rasterize(&union, &cam, [0.0; 3]);
    assert_eq!(ifu.color.data, iu.color.data);
    for i in 0..24 * 24 {
        let (ab, af, au) = (ib.alpha.data[i], iface.alpha.data[i], ifu.alpha.data[i]);
        // coverage of the union: 1 − T_b·T_f up to the transmittance cutoff
        let expect = 1.0 - (1.0 - ab) * (1.0 - af);
        assert!((au - expect).abs() < 1e-3, "pixel {i}: {au} vs {expect}");
        assert!(au + 1e-12 >= ab.max(af) - 1e-3);
    }
}

#[test]
fn fuse_backward_matches_finite_differences() {
    let mut r = rng(21);
    let body = random_set(&mut r, 9, 1);
    let face = random_set(&mut r, 3, 1);
    let w = head_weights(&mut r, 9);
    let opts = FuseOptions::default();
    let (up, grads) = upstream(&mut r, 12);
    let (gb, gf) = fuse_backward(&body, &w, &opts, &grads);
    let opac: Vec<f64> = body.primitives.iter().map(|g| g.opacity_logit).collect();
    let analytic: Vec<f64> = gb.iter().map(|g| g.opacity_logit).collect();
    let report = fd_check("body opacity", &opac, &analytic, 1e-6, 1e-6, 1e-9, |o| {
        let mut b = body.clone();
        for (g, v) in b.primitives.iter_mut().zip(o) {
            g.opacity_logit = *v;
        }
        (dot_set(&fuse(&b, &w, &face, &opts).unwrap(), &up), Vec::new())
    });
    assert_report(&report, 9);
    for (i, g) in gf.iter().enumerate() {
        assert_eq!(*g, grads[9 + i]);
    }
    for i in 0..9 {
        assert_eq!(gb[i].mean, grads[i].mean);
        assert_eq!(gb[i].color, grads[i].color);
    }
}

#[test]
fn decoder_backward_matches_finite_differences() {
    let mut r = rng(22);
    for kind in [DecoderKind::Body, DecoderKind::FacePosition, DecoderKind::FaceColor, DecoderKind::FaceAux] {
        let report = decoder_grad_check(&mut r, kind, 5);
        assert_report(&report, 100);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut r = rng(23);
    let d = random_decoder(&mut r, DecoderKind::Body, 3, Activation::Tanh, 8);
    let pos = points(&mut r, 10);
    let pose = vec![0.3; 8];
    let pass = d.forward(&pos, &pose, &Vec3::y());
    let mut gp = vec![0.0; d.param_count()];
    let gx = d.backward(&pos, &pose, &pass, &vec![0.0; pass.outputs.len()], &mut gp);
    assert!(gp.iter().all(|v| *v == 0.0));
    assert!(gx.iter().all(|v| v.iter().all(|c| *c == 0.0)));
}

#[test]
fn single_linear_layer_gradient_is_an_outer_product() {
    let mut r = rng(24);
    let d = random_decoder(&mut r, DecoderKind::FaceAux, 1, Activation::Identity, 4);
    let pos = points(&mut r, 7);
    let pass = d.forward(&pos, &[], &Vec3::z());
    let g: Vec<f64> = (0..7 * 7).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut gp = vec![0.0; d.param_count()];
    d.backward(&pos, &[], &pass, &g, &mut gp);
    let gains = [0.1; 7];
    let (n_in, n_out) = (PE_DIM, 7);
    for o in 0..n_out {
        let mut gb = 0.0;
        for i in 0..n_in {
            let mut expect = 0.0;
            for (row, p) in pos.iter().enumerate() {
                let mut x = [0.0; PE_DIM];
                positional_encoding(p, &mut x);
                expect += gains[o] * g[row * n_out + o] * x[i];
            }
            // column-major out × in weights
            let got = gp[i * n_out + o];
            assert!((got - expect).abs() < 1e-12 * (1.0 + expect.abs()), "W[{o},{i}] {got} vs {expect}");
        }
        for row in 0..pos.len() {
            gb += gains[o] * g[row * n_out + o];
        }
        let got = gp[n_in * n_out + o];
        assert!((got - gb).abs() < 1e-12);
    }
}

#[test]
fn face_backward_matches_finite_differences() {
    let mut r = rng(25);
    let mut f = face_decoders(&mut r, 6, true);
    let pos = points(&mut r, 4);
    let pose: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let view = random_unit(&mut r);
    let pass = f.forward(&pos, &pose, &view);
    let g: Vec<f64> = (0..pass.residuals.data.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut gp = vec![0.0; f.position.param_count()];
    let mut gc = vec![0.0; f.color.param_count()];
    let mut ga = vec![0.0; f.aux.param_count()];
    f.backward(&pos, &pose, &pass, &g, [&mut gp, &mut gc, &mut ga]);
    let dot = |f: &FaceDecoders| f.forward(&pos, &pose, &view).residuals.data.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
    let mut report = GradReport::default();
    for (which, grad) in [(0, &gp), (1, &gc), (2, &ga)] {
        let params = match which {
            0 => f.position.params.clone(),
            1 => f.color.params.clone(),
            _ => f.aux.params.clone(),
        };
        report.merge(fd_check(&format!("face decoder {which}"), &params, grad, 1e-5, 1e-4, 1e-8, |p| {
            match which {
                0 => f.position.params.copy_from_slice(p),
                1 => f.color.params.copy_from_slice(p),
                _ => f.aux.params.copy_from_slice(p),
            }
            let v = dot(&f);
            match which {
                0 => f.position.params.copy_from_slice(&params),
                1 => f.color.params.copy_from_slice(&params),
                _ => f.aux.params.copy_from_slice(&params),
            }
            (v, Vec::new())
        }));
    }
    assert_report(&report, 1000);
}

#[test]
fn loss_to_decoder_chain_matches_finite_differences() {
    let mut r = rng(26);
    let report = chain_grad_check(&mut r, 3, 8, 1e-3);
    assert_report(&report, 500);
}

#[test]
fn quaternion_residual_composes_on_the_left() {
    let mut r = rng(27);
    let set = random_set(&mut r, 1, 0);
    let mut res = ResidualMap::zeros(1);
    let v = Vec3::new(0.3, -0.2, 0.1);
    res.row_mut(0)[RES_ROTATION..RES_ROTATION + 3].copy_from_slice(v.as_slice());
    let out = apply_residuals(&set, &res).unwrap();
    let expect = math::exp_quat(&v) * set.primitives[0].rotation;
    assert!((out.primitives[0].rotation.coords - expect.coords).norm() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn final_layer_is_linear(seed in 0u64..1_000_000, n in 1usize..40) {
        let mut r = rng(seed);
        let d = random_decoder(&mut r, DecoderKind::Body, 2, Activation::Tanh, 4);
        let pos = points(&mut r, n);
        let out = d.forward(&pos, &[0.5, -0.5, 0.2, 0.0], &Vec3::z());
        prop_assert!(out.outputs.iter().all(|v| v.is_finite()));
        let mut doubled = d.clone();
        let (w_off, _) = doubled.mlp.offsets(doubled.mlp.layers() - 1);
        for v in &mut doubled.params[w_off..] {
            *v *= 2.0;
        }
        let out2 = doubled.forward(&pos, &[0.5, -0.5, 0.2, 0.0], &Vec3::z());
        for (a, b) in out.outputs.iter().zip(&out2.outputs) {
            prop_assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
