#![allow(dead_code)]

use avsplat::math::{Mat3, Quat, Vec3};
use avsplat::{CameraModel, GaussianPrimitive, GaussianSet, Image, Intrinsics, ProjectionMode, SourceTag};
use avsplat_oracles::{RefCamera, RefGaussian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_ref_gaussian(g: &GaussianPrimitive, degree: usize) -> RefGaussian {
    let n = 3 * (degree + 1) * (degree + 1);
    RefGaussian {
        mean: [g.mean.x, g.mean.y, g.mean.z],
        log_scale: [g.log_scale.x, g.log_scale.y, g.log_scale.z],
        quat: [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k],
        opacity_logit: g.opacity_logit,
        coeffs: g.color[..n].to_vec(),
    }
}

pub fn to_ref_camera(c: &CameraModel) -> RefCamera {
    let r = &c.rotation;
    RefCamera {
        fx: c.intrinsics.fx,
        fy: c.intrinsics.fy,
        cx: c.intrinsics.cx,
        cy: c.intrinsics.cy,
        rot: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        trans: [c.translation.x, c.translation.y, c.translation.z],
        width: c.width,
        height: c.height,
        perspective: c.mode == ProjectionMode::Perspective,
    }
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_quat(rng: &mut impl Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.norm() > 0.2 {
            return q;
        }
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let q = random_quat(rng);
    avsplat::math::unit_quat_to_matrix(&(q / q.norm()))
}

/// Camera on a sphere of radius ~3.5 around the origin looking at it, so a
/// region of roughly ±1.2 m is visible.
pub fn random_camera(rng: &mut impl Rng, width: usize, height: usize, mode: ProjectionMode) -> CameraModel {
    let eye = random_unit(rng) * rng.random_range(3.0..4.0);
    let up = random_unit(rng);
    let up = if up.cross(&eye).norm() < 0.2 { Vec3::z() } else { up };
    let (fx, fy) = match mode {
        ProjectionMode::Perspective => {
            let f = width as f64 * rng.random_range(1.1..1.6);
            (f, f * rng.random_range(0.9..1.1))
        }
        ProjectionMode::Orthographic => {
            let f = width as f64 / rng.random_range(2.0..2.8);
            (f, f * rng.random_range(0.9..1.1))
        }
    };
    let intrinsics = Intrinsics {
        fx,
        fy,
        cx: width as f64 * rng.random_range(0.4..0.6),
        cy: height as f64 * rng.random_range(0.4..0.6),
    };
    CameraModel::look_at(eye, Vec3::zeros(), up, intrinsics, width, height, mode)
}

pub fn random_primitive(rng: &mut impl Rng, degree: usize) -> GaussianPrimitive {
    let mean = Vec3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
    let mut g = GaussianPrimitive::isotropic(mean, 0.1, 0.5, [0.0; 3]);
    for k in 0..3 {
        g.log_scale[k] = rng.random_range(0.04f64.ln()..0.35f64.ln());
    }
    g.rotation = random_quat(rng);
    g.opacity_logit = rng.random_range(-2.0..3.0);
    for k in 0..3 * (degree + 1) * (degree + 1) {
        g.color[k] = if k < 3 { rng.random_range(0.0..3.0) } else { rng.random_range(-1.0..1.0) };
    }
    g
}

pub fn random_set(rng: &mut impl Rng, n: usize, degree: usize) -> GaussianSet {
    let prims = (0..n).map(|_| random_primitive(rng, degree)).collect();
    GaussianSet::from_primitives(degree, prims, SourceTag::Body)
}

pub fn random_image(rng: &mut impl Rng, width: usize, height: usize, channels: usize) -> Image {
    let mut img = Image::new(width, height, channels);
    for v in img.data.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    img
}

/// `|a - n| <= abs` or `|a - n| <= rel · max(|a|, |n|)`.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    avsplat_oracles::close(analytic, numeric, rel, abs)
}

pub const PARAMS_PER_PRIMITIVE: usize = 23;

pub fn param_name(k: usize) -> &'static str {
    match k {
        0..=2 => "mean",
        3..=5 => "log_scale",
        6..=9 => "rotation",
        10 => "opacity",
        _ => "color",
    }
}

pub fn param_mut(g: &mut GaussianPrimitive, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.mean[k],
        3..=5 => &mut g.log_scale[k - 3],
        6 => &mut g.rotation.w,
        7 => &mut g.rotation.i,
        8 => &mut g.rotation.j,
        9 => &mut g.rotation.k,
        10 => &mut g.opacity_logit,
        _ => &mut g.color[k - 11],
    }
}

pub fn param_grad(g: &avsplat::PrimitiveGrad, k: usize) -> f64 {
    match k {
        0..=2 => g.mean[k],
        3..=5 => g.log_scale[k - 3],
        6..=9 => g.rotation[k - 6],
        10 => g.opacity_logit,
        _ => g.color[k - 11],
    }
}

#[derive(Default, Debug)]
pub struct GradReport {
    pub checked: usize,
    /// Parameters whose finite-difference stencil crossed a cutoff or
    /// termination boundary at some pixel.
    pub skipped: usize,
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn merge(&mut self, o: GradReport) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        self.failures.extend(o.failures);
    }
}

fn raster_loss(set: &GaussianSet, cam: &CameraModel, bg: [f64; 3], gc: &Image, ga: &Image) -> (f64, Vec<u32>) {
    let out = avsplat::rasterize(set, cam, bg);
    let l: f64 = out.color.data.iter().zip(&gc.data).map(|(a, b)| a * b).sum::<f64>()
        + out.alpha.data.iter().zip(&ga.data).map(|(a, b)| a * b).sum::<f64>();
    (l, out.contributors)
}

/// Central-difference check of every rasterizer input gradient.
pub fn raster_grad_check(
    set: &GaussianSet,
    cam: &CameraModel,
    bg: [f64; 3],
    gc: &Image,
    ga: &Image,
    h: f64,
    rel: f64,
    abs: f64,
) -> GradReport {
    let grads = avsplat::rasterize_backward(set, cam, bg, gc, ga);
    let (_, base_counts) = raster_loss(set, cam, bg, gc, ga);
    let ncolor = set.coeff_count();
    let mut report = GradReport::default();
    for i in 0..set.len() {
        for k in 0..11 + ncolor {
            let mut s = set.clone();
            let x0 = *param_mut(&mut s.primitives[i], k);
            *param_mut(&mut s.primitives[i], k) = x0 + h;
            let (lp, cp) = raster_loss(&s, cam, bg, gc, ga);
            *param_mut(&mut s.primitives[i], k) = x0 - h;
            let (lm, cm) = raster_loss(&s, cam, bg, gc, ga);
            if cp != base_counts || cm != base_counts {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = param_grad(&grads[i], k);
            report.checked += 1;
            if !grad_close(analytic, numeric, rel, abs) {
                report.failures.push(format!(
                    "primitive {i} {}[{k}]: analytic {analytic:.10e} numeric {numeric:.10e}",
                    param_name(k)
                ));
            }
        }
    }
    report
}

/// Central-difference check of `analytic` against `loss` over every entry of
/// `params`. `loss` returns the scalar and the per-pixel contributor counts
/// of any render involved; entries whose stencil changes a count are skipped.
pub fn fd_check(
    label: &str,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    rel: f64,
    abs: f64,
    mut loss: impl FnMut(&[f64]) -> (f64, Vec<u32>),
) -> GradReport {
    let (_, base) = loss(params);
    let mut report = GradReport::default();
    let mut p = params.to_vec();
    for k in 0..params.len() {
        p[k] = params[k] + h;
        let (lp, cp) = loss(&p);
        p[k] = params[k] - h;
        let (lm, cm) = loss(&p);
        p[k] = params[k];
        if cp != base || cm != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        report.checked += 1;
        if !grad_close(analytic[k], numeric, rel, abs) {
            report.failures.push(format!("{label}[{k}]: analytic {:.10e} numeric {numeric:.10e}", analytic[k]));
        }
    }
    report
}

pub fn random_decoder(
    rng: &mut impl Rng,
    kind: avsplat::deformer::DecoderKind,
    n_mlp: usize,
    activation: avsplat::deformer::Activation,
    pose_dim: usize,
) -> avsplat::deformer::Decoder {
    let mut d = avsplat::deformer::Decoder::new(
        kind,
        avsplat::deformer::DecoderConfig { n_mlp, cm: 1 },
        pose_dim,
        (1, 1),
        activation,
        rng,
    )
    .unwrap();
    // leave the zero start so every layer receives gradient
    for v in d.params.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    d
}

/// Finite-difference check of one decoder's parameter and input gradients
/// against `⟨G, outputs⟩` for a random upstream `G`.
pub fn decoder_grad_check(rng: &mut impl Rng, kind: avsplat::deformer::DecoderKind, rows: usize) -> GradReport {
    use avsplat::deformer::Activation;
    let pose_dim = 6;
    let d = random_decoder(rng, kind, 3, Activation::Tanh, pose_dim);
    let positions: Vec<Vec3> = (0..rows).map(|_| random_unit(rng) * rng.random_range(0.0..1.0)).collect();
    let pose: Vec<f64> = (0..pose_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let view = random_unit(rng);
    let pass = d.forward(&positions, &pose, &view);
    let g: Vec<f64> = (0..pass.outputs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut gp = vec![0.0; d.param_count()];
    let gx = d.backward(&positions, &pose, &pass, &g, &mut gp);
    let dot = |o: &[f64]| o.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
    let mut report = fd_check(&format!("{kind:?} params"), &d.params, &gp, 1e-5, 1e-4, 1e-8, |p| {
        let mut e = d.clone();
        e.params.copy_from_slice(p);
        (dot(&e.forward(&positions, &pose, &view).outputs), Vec::new())
    });
    let flat: Vec<f64> = positions.iter().flat_map(|p| p.iter().cloned()).collect();
    let gflat: Vec<f64> = gx.iter().flat_map(|p| p.iter().cloned()).collect();
    report.merge(fd_check(&format!("{kind:?} inputs"), &flat, &gflat, 1e-5, 1e-4, 1e-8, |x| {
        let pos: Vec<Vec3> = x.chunks(3).map(Vec3::from_column_slice).collect();
        (dot(&d.forward(&pos, &pose, &view).outputs), Vec::new())
    }));
    report
}

/// Loss → rasterizer → residual application → body decoder parameters on a
/// small scene with random loss images.
pub fn chain_grad_check(rng: &mut impl Rng, gaussians: usize, size: usize, rel: f64) -> GradReport {
    use avsplat::deformer::{apply_residuals, apply_residuals_backward, Activation, DecoderKind, ResidualMap};
    let pose_dim = 6;
    let mut d = random_decoder(rng, DecoderKind::Body, 2, Activation::Tanh, pose_dim);
    for v in d.params.iter_mut() {
        *v *= 0.2;
    }
    let cam = random_camera(rng, size, size, ProjectionMode::Perspective);
    let mut canonical = random_set(rng, gaussians, 1);
    for g in &mut canonical.primitives {
        g.mean *= 0.3;
        g.log_scale = Vec3::repeat(rng.random_range(-1.8..-1.2));
        g.opacity_logit = rng.random_range(-0.5..1.5);
    }
    let positions: Vec<Vec3> = canonical.primitives.iter().map(|g| g.mean).collect();
    let pose: Vec<f64> = (0..pose_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let view = random_unit(rng);
    let bg = [0.2, 0.3, 0.1];
    let gc = random_image(rng, size, size, 3);
    let ga = random_image(rng, size, size, 1);
    let render_loss = |dec: &avsplat::deformer::Decoder| {
        let res = ResidualMap {
            data: dec.forward(&positions, &pose, &view).outputs,
        };
        let set = apply_residuals(&canonical, &res).unwrap();
        raster_loss(&set, &cam, bg, &gc, &ga)
    };
    let pass = d.forward(&positions, &pose, &view);
    let res = ResidualMap {
        data: pass.outputs.clone(),
    };
    let deformed = apply_residuals(&canonical, &res).unwrap();
    let g_deformed = avsplat::rasterize_backward(&deformed, &cam, bg, &gc, &ga);
    let (_, g_res) = apply_residuals_backward(&canonical, &res, &g_deformed);
    let mut gp = vec![0.0; d.param_count()];
    d.backward(&positions, &pose, &pass, &g_res, &mut gp);
    let params = d.params.clone();
    fd_check("chain params", &params, &gp, 1e-5, rel, 1e-8, |p| {
        d.params.copy_from_slice(p);
        render_loss(&d)
    })
}
