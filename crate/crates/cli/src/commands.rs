//! Command implementations. Each returns what it wrote so callers and tests
//! can inspect the results without re-reading files.

use std::path::{Path, PathBuf};

use avsplat::articulation::{fit_template, FitOptions, FitResult, SkinnedTemplate};
use avsplat::math::Vec3;
use avsplat::trainer::{
    evaluate, run_stage, synthesize, view_metrics, AvatarModel, Dataset, LossHooks, MetricsReport, Stage,
    TrainReport, Teacher,
};
use avsplat::{Checkpoint, Image};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::io::{self, crop_name, image_name, prepare_output, read_dataset, read_image, write_image, write_text};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FIT_FILE: &str = "fit.txt";

pub fn template(config: &Config) -> CliResult<SkinnedTemplate> {
    config.validate()?;
    Ok(SkinnedTemplate::puppet())
}

fn save_config(config: &Config, dir: &Path) -> CliResult<()> {
    write_text(&dir.join(CONFIG_FILE), &config.to_toml())
}

pub fn load_dataset(dir: &Path, template: &SkinnedTemplate) -> CliResult<Dataset> {
    read_dataset(dir, template.joint_count(), template.shape_dim())
}

pub fn load_model(path: &Path, template: &SkinnedTemplate) -> CliResult<AvatarModel> {
    Ok(load_model_at(path, template)?.0)
}

/// The model and the step counter stored with it.
fn load_model_at(path: &Path, template: &SkinnedTemplate) -> CliResult<(AvatarModel, u64)> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).at(path))?;
    let model = AvatarModel::from_checkpoint(template, &ck).map_err(|e| CliError::from(e).at(path))?;
    Ok((model, ck.step))
}

/// Renders the teacher, writes the dataset into `config.out`.
pub fn cmd_synth(config: &Config, force: bool) -> CliResult<(Teacher, Dataset)> {
    let t = template(config)?;
    prepare_output(&config.out, force)?;
    let (teacher, data) = synthesize(&t, &config.synth_config())?;
    io::write_dataset(&config.out, &data, Some(&teacher))?;
    save_config(config, &config.out)?;
    Ok((teacher, data))
}

/// Target file of `fit`: lines `v x y z` (one per template vertex, in
/// order) and `j x y z` (one per joint).
pub fn write_fit_target(path: &Path, vertices: &[Vec3], joints: &[Vec3]) -> CliResult<()> {
    let mut s = String::from("# v x y z per vertex, j x y z per joint\n");
    for (tag, pts) in [("v", vertices), ("j", joints)] {
        for p in pts {
            s.push_str(&format!("{tag} {} {} {}\n", p.x, p.y, p.z));
        }
    }
    write_text(path, &s)
}

pub fn read_fit_target(path: &Path) -> CliResult<(Vec<Vec3>, Vec<Vec3>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let (mut v, mut j) = (Vec::new(), Vec::new());
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        let dest = match f[0] {
            "v" => &mut v,
            "j" => &mut j,
            t => return Err(CliError::parse(path, i + 1, format!("unknown record `{t}`"))),
        };
        if f.len() != 4 {
            return Err(CliError::parse(path, i + 1, "expected a tag and three coordinates"));
        }
        let c: Result<Vec<f64>, _> = f[1..].iter().map(|x| x.parse::<f64>()).collect();
        let c = c.map_err(|e| CliError::parse(path, i + 1, e))?;
        dest.push(Vec3::new(c[0], c[1], c[2]));
    }
    Ok((v, j))
}

/// Fits shape and pose to the target file. Writes the result, then fails
/// with a validation error when the vertex RMS exceeds the tolerance.
pub fn cmd_fit(config: &Config, force: bool) -> CliResult<FitResult> {
    let t = template(config)?;
    let (v, j) = read_fit_target(&config.fit.target)?;
    let options = FitOptions {
        max_iterations: config.fit.max_iterations,
        ..FitOptions::default()
    };
    let fit = fit_template(&t, &v, &j, config.fit.lambda, &options).map_err(|e| CliError::from(e).at(&config.fit.target))?;
    prepare_output(&config.out, force)?;
    let beta: Vec<String> = fit.beta.iter().map(|b| b.to_string()).collect();
    let report = format!(
        "beta {}\npose {}\nobjective {}\nvertex_rms {}\njoint_rms {}\niterations {}\nconverged {}\n",
        beta.join(" "),
        io::format_pose(0, &fit.pose),
        fit.objective,
        fit.vertex_rms,
        fit.joint_rms,
        fit.iterations,
        fit.converged
    );
    write_text(&config.out.join(FIT_FILE), &report)?;
    save_config(config, &config.out)?;
    if fit.vertex_rms > config.fit.tolerance {
        return Err(CliError::Validation(format!(
            "vertex RMS {:e} m exceeds the tolerance {:e} m",
            fit.vertex_rms, config.fit.tolerance
        )));
    }
    Ok(fit)
}

pub struct TrainOptions {
    /// Run only this stage instead of all three.
    pub stage: Option<Stage>,
    /// Start from this checkpoint instead of a fresh model.
    pub resume: Option<PathBuf>,
    /// Training views replacing the dataset's.
    pub views: Option<Vec<usize>>,
    pub force: bool,
}

pub fn cmd_train(config: &Config, opts: &TrainOptions) -> CliResult<(AvatarModel, TrainReport)> {
    let t = template(config)?;
    let mut data = load_dataset(&config.dataset, &t)?;
    if let Some(v) = &opts.views {
        data.train_views = v.clone();
        data.heldout_views.retain(|h| !v.contains(h));
    }
    let (mut model, first_step) = match &opts.resume {
        Some(p) => load_model_at(p, &t)?,
        None => {
            let mut mc = config.model_config();
            mc.crop_size = data.samples[0].crop.width;
            (AvatarModel::new(&t, &data.beta, mc, config.seed)?, 0)
        }
    };
    prepare_output(&config.out, opts.force)?;
    save_config(config, &config.out)?;
    let schedule = config.schedule();
    let weights = config.loss_weights();
    let hooks = LossHooks::default();
    let mut report = TrainReport::default();
    let stages: Vec<Stage> = match opts.stage {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    for stage in stages {
        run_stage(&mut model, &data, stage, &schedule, &weights, &hooks, &mut report)?;
        let path = config.out.join(format!("stage{}.bin", stage.number()));
        model.to_checkpoint(first_step + report.curve.len() as u64).save(&path).map_err(|e| CliError::from(e).at(&path))?;
    }
    let path = config.out.join(CHECKPOINT_FILE);
    model.to_checkpoint(first_step + report.curve.len() as u64).save(&path).map_err(|e| CliError::from(e).at(&path))?;
    write_text(&config.out.join(LOSS_FILE), &report.to_csv())?;
    Ok((model, report))
}

pub struct RenderOptions {
    pub checkpoint: PathBuf,
    pub frame: usize,
    pub view: usize,
    /// Pose and camera files; default to the dataset's.
    pub poses: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
}

pub struct Rendered {
    pub path: PathBuf,
    pub image: Image,
    /// PSNR against the dataset image, when the dataset has this frame and view.
    pub psnr: Option<f64>,
}

pub fn cmd_render(config: &Config, opts: &RenderOptions) -> CliResult<Rendered> {
    let t = template(config)?;
    let model = load_model(&opts.checkpoint, &t)?;
    let pose_path = opts.poses.clone().unwrap_or_else(|| config.dataset.join(io::POSES));
    let cam_path = opts.cameras.clone().unwrap_or_else(|| config.dataset.join(io::CAMERAS));
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())));
    let poses = io::parse_poses(&pose_path, &read(&pose_path)?, t.joint_count())?;
    let cameras = io::parse_cameras(&cam_path, &read(&cam_path)?)?;
    let pose = poses
        .get(opts.frame)
        .ok_or_else(|| CliError::Validation(format!("{}: no frame {}", pose_path.display(), opts.frame)))?;
    let camera = cameras
        .get(opts.view)
        .ok_or_else(|| CliError::Validation(format!("{}: no camera {}", cam_path.display(), opts.view)))?;
    let background = [0.0; 3];
    let image = model.render(pose, camera, background)?.color;
    std::fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
    let path = config.out.join(format!("render_f{:04}_c{:02}.ppm", opts.frame, opts.view));
    write_image(&path, &image)?;
    let gt = config.dataset.join(image_name(opts.frame, opts.view));
    let psnr = if opts.poses.is_none() && opts.cameras.is_none() && gt.exists() {
        let target = read_image(&gt, 3)?;
        Some(avsplat::trainer::psnr(&image.quantized(), &target)?)
    } else {
        None
    };
    Ok(Rendered { path, image, psnr })
}

pub enum EvalSource {
    Checkpoint(PathBuf),
    /// A directory of renders in the dataset layout (`images/`, `crops/`).
    Predictions(PathBuf),
}

pub fn cmd_eval(config: &Config, source: &EvalSource, views: Option<&[usize]>, force: bool) -> CliResult<MetricsReport> {
    let t = template(config)?;
    let data = load_dataset(&config.dataset, &t)?;
    let views: Vec<usize> = views.map(|v| v.to_vec()).unwrap_or_else(|| data.heldout_views.clone());
    if views.is_empty() {
        return Err(CliError::Validation("no views to evaluate".into()));
    }
    if let Some(v) = views.iter().find(|v| **v >= data.cameras.len()) {
        return Err(CliError::Validation(format!("view {v} does not exist ({} cameras)", data.cameras.len())));
    }
    let report = match source {
        EvalSource::Checkpoint(p) => evaluate(&load_model(p, &t)?, &data, &views, None)?,
        EvalSource::Predictions(dir) => {
            let mut rows = Vec::new();
            for f in 0..data.frames() {
                for &v in &views {
                    let full = read_image(&dir.join(image_name(f, v)), 3)?;
                    let head = read_image(&dir.join(crop_name(f, v)), 3)?;
                    rows.push(view_metrics(f, v, &full, &head, data.sample(f, v)).map_err(|e| CliError::from(e).at(dir))?);
                }
            }
            MetricsReport { rows }
        }
    };
    prepare_output(&config.out, force)?;
    save_config(config, &config.out)?;
    write_text(&config.out.join(METRICS_FILE), &report.to_csv())?;
    Ok(report)
}
