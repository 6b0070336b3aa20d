//! On-disk dataset layout.
//!
//! ```text
//! manifest.txt        format line, counts, view split, shape, SHA-256 of every file
//! cameras.txt         index width height mode fx fy cx cy r00 .. r22 tx ty tz
//! poses.txt           frame tx ty tz, then rx ry rz per joint (axis-angle)
//! crops.txt           frame camera x y scale width height
//! images/fFFFF_cCC.ppm        8-bit RGB
//! masks/fFFFF_cCC.pgm         8-bit gray, 0 or 255
//! crops/fFFFF_cCC.ppm         head crop, 8-bit RGB
//! crops/fFFFF_cCC_mask.pgm    head crop mask
//! teacher.bin         ground-truth Gaussians and skin weights (synthetic data only)
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! dataset reads back bit-identical.

use std::fs;
use std::path::Path;

use avsplat::articulation::{Pose, SkinWeights};
use avsplat::math::{Mat3, Vec3};
use avsplat::posmap::CropSpec;
use avsplat::trainer::{Dataset, Sample, Teacher};
use avsplat::{CameraModel, Checkpoint, Image, Intrinsics, ProjectionMode};
use image::{ColorType, ImageFormat};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FORMAT_LINE: &str = "avsplat-dataset 1";
pub const MANIFEST: &str = "manifest.txt";
pub const CAMERAS: &str = "cameras.txt";
pub const POSES: &str = "poses.txt";
pub const CROPS: &str = "crops.txt";
pub const TEACHER: &str = "teacher.bin";

pub fn image_name(frame: usize, camera: usize) -> String {
    format!("images/f{frame:04}_c{camera:02}.ppm")
}

pub fn mask_name(frame: usize, camera: usize) -> String {
    format!("masks/f{frame:04}_c{camera:02}.pgm")
}

pub fn crop_name(frame: usize, camera: usize) -> String {
    format!("crops/f{frame:04}_c{camera:02}.ppm")
}

pub fn crop_mask_name(frame: usize, camera: usize) -> String {
    format!("crops/f{frame:04}_c{camera:02}_mask.pgm")
}

pub fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    let color = match img.channels {
        1 => ColorType::L8,
        3 => ColorType::Rgb8,
        c => return Err(CliError::Runtime(format!("cannot write a {c}-channel image"))),
    };
    image::save_buffer_with_format(path, &img.to_u8(), img.width as u32, img.height as u32, color, ImageFormat::Pnm)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Reads an 8-bit image as `channels` (1 or 3) channels in [0, 1].
pub fn read_image(path: &Path, channels: usize) -> CliResult<Image> {
    let img = image::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bytes = match channels {
        1 => img.to_luma8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        c => return Err(CliError::Runtime(format!("cannot read a {c}-channel image"))),
    };
    Ok(Image::from_u8(w, h, channels, &bytes))
}

fn join_floats(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

pub fn format_camera(index: usize, c: &CameraModel) -> String {
    let r = &c.rotation;
    let mode = match c.mode {
        ProjectionMode::Perspective => "perspective",
        ProjectionMode::Orthographic => "orthographic",
    };
    let k = &c.intrinsics;
    let mut values = vec![k.fx, k.fy, k.cx, k.cy];
    for i in 0..3 {
        for j in 0..3 {
            values.push(r[(i, j)]);
        }
    }
    values.extend([c.translation.x, c.translation.y, c.translation.z]);
    format!("{index} {} {} {mode} {}", c.width, c.height, join_floats(values))
}

pub fn format_pose(frame: usize, p: &Pose) -> String {
    let mut values = vec![p.translation.x, p.translation.y, p.translation.z];
    for r in &p.rotations {
        values.extend([r.x, r.y, r.z]);
    }
    format!("{frame} {}", join_floats(values))
}

/// Non-comment, non-empty lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_fields<T: std::str::FromStr>(path: &Path, line: usize, fields: &[&str]) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    fields
        .iter()
        .map(|f| f.parse::<T>().map_err(|e| CliError::parse(path, line, format!("`{f}`: {e}"))))
        .collect()
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn parse_cameras(path: &Path, text: &str) -> CliResult<Vec<CameraModel>> {
    let mut cams = Vec::new();
    for (line, l) in data_lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 20 {
            return Err(CliError::parse(path, line, format!("expected 20 fields, found {}", f.len())));
        }
        let head: Vec<usize> = parse_fields(path, line, &f[..3])?;
        if head[0] != cams.len() {
            return Err(CliError::parse(path, line, format!("camera {} out of order", head[0])));
        }
        let mode = match f[3] {
            "perspective" => ProjectionMode::Perspective,
            "orthographic" => ProjectionMode::Orthographic,
            m => return Err(CliError::parse(path, line, format!("unknown projection `{m}`"))),
        };
        let v: Vec<f64> = parse_fields(path, line, &f[4..])?;
        let cam = CameraModel {
            intrinsics: Intrinsics {
                fx: v[0],
                fy: v[1],
                cx: v[2],
                cy: v[3],
            },
            rotation: Mat3::from_row_slice(&v[4..13]),
            translation: Vec3::new(v[13], v[14], v[15]),
            width: head[1],
            height: head[2],
            mode,
        };
        cam.validate().map_err(|e| CliError::parse(path, line, e))?;
        cams.push(cam);
    }
    Ok(cams)
}

pub fn parse_poses(path: &Path, text: &str, joints: usize) -> CliResult<Vec<Pose>> {
    let mut poses = Vec::new();
    for (line, l) in data_lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 + 3 * joints {
            return Err(CliError::parse(
                path,
                line,
                format!("expected {} fields for {joints} joints, found {}", 4 + 3 * joints, f.len()),
            ));
        }
        let frame: usize = parse_fields(path, line, &f[..1])?[0];
        if frame != poses.len() {
            return Err(CliError::parse(path, line, format!("frame {frame} out of order")));
        }
        let v: Vec<f64> = parse_fields(path, line, &f[1..])?;
        let mut p = Pose::identity(joints);
        p.translation = Vec3::new(v[0], v[1], v[2]);
        for (j, r) in p.rotations.iter_mut().enumerate() {
            *r = Vec3::new(v[3 + 3 * j], v[4 + 3 * j], v[5 + 3 * j]);
        }
        poses.push(p);
    }
    Ok(poses)
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_output(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Validation(format!(
                "{} exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn teacher_checkpoint(teacher: &Teacher) -> Checkpoint {
    let mut ck = Checkpoint::new(0);
    ck.put_gaussian_set("teacher", &teacher.canonical);
    ck.put_u64("teacher.joints", vec![teacher.weights.joints() as u64]);
    ck.put_f64("teacher.weights", teacher.weights.as_slice().to_vec());
    ck
}

pub fn read_teacher(dir: &Path) -> CliResult<Teacher> {
    let path = dir.join(TEACHER);
    let ck = Checkpoint::load(&path).map_err(|e| CliError::from(e).at(&path))?;
    let canonical = ck.gaussian_set("teacher")?;
    let joints = ck.u64_scalar("teacher.joints")? as usize;
    let weights = SkinWeights::from_rows(joints, ck.f64("teacher.weights")?.to_vec())?;
    Ok(Teacher { canonical, weights })
}

/// Writes `data` (and `teacher`, when given) into `dir`, which must exist.
pub fn write_dataset(dir: &Path, data: &Dataset, teacher: Option<&Teacher>) -> CliResult<()> {
    for sub in ["images", "masks", "crops"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| CliError::io(dir, e))?;
    }
    let mut files: Vec<String> = Vec::new();
    let mut cams = String::from("# index width height mode fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n");
    for (i, c) in data.cameras.iter().enumerate() {
        cams.push_str(&format_camera(i, c));
        cams.push('\n');
    }
    write_text(&dir.join(CAMERAS), &cams)?;
    files.push(CAMERAS.into());
    let mut poses = String::from("# frame tx ty tz then rx ry rz per joint\n");
    for (f, p) in data.poses.iter().enumerate() {
        poses.push_str(&format_pose(f, p));
        poses.push('\n');
    }
    write_text(&dir.join(POSES), &poses)?;
    files.push(POSES.into());
    let mut crops = String::from("# frame camera x y scale width height\n");
    for f in 0..data.frames() {
        for c in 0..data.cameras.len() {
            let s = data.sample(f, c);
            let k = &s.crop;
            crops.push_str(&format!("{f} {c} {} {} {} {} {}\n", k.x, k.y, k.scale, k.width, k.height));
            for (name, img) in [
                (image_name(f, c), &s.image),
                (mask_name(f, c), &s.mask),
                (crop_name(f, c), &s.crop_image),
                (crop_mask_name(f, c), &s.crop_mask),
            ] {
                write_image(&dir.join(&name), img)?;
                files.push(name);
            }
        }
    }
    write_text(&dir.join(CROPS), &crops)?;
    files.push(CROPS.into());
    if let Some(t) = teacher {
        let path = dir.join(TEACHER);
        teacher_checkpoint(t).save(&path).map_err(|e| CliError::from(e).at(&path))?;
        files.push(TEACHER.into());
    }
    let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut manifest = format!(
        "{FORMAT_LINE}\nframes {}\ncameras {}\ntrain {}\nheldout {}\nbackground {}\nbeta {}\n",
        data.frames(),
        data.cameras.len(),
        list(&data.train_views),
        list(&data.heldout_views),
        join_floats(data.background),
        join_floats(data.beta.iter().copied()),
    );
    for name in &files {
        manifest.push_str(&format!("sha256 {} {name}\n", sha256_file(&dir.join(name))?));
    }
    write_text(&dir.join(MANIFEST), &manifest)
}

struct Manifest {
    frames: usize,
    cameras: usize,
    train: Vec<usize>,
    heldout: Vec<usize>,
    background: [f64; 3],
    beta: Vec<f64>,
    checksums: Vec<(String, String)>,
}

fn parse_manifest(path: &Path) -> CliResult<Manifest> {
    let text = read_text(path)?;
    let mut lines = data_lines(&text);
    match lines.next() {
        Some((_, l)) if l == FORMAT_LINE => {}
        _ => return Err(CliError::parse(path, 1, format!("expected `{FORMAT_LINE}`"))),
    }
    let mut m = Manifest {
        frames: 0,
        cameras: 0,
        train: Vec::new(),
        heldout: Vec::new(),
        background: [0.0; 3],
        beta: Vec::new(),
        checksums: Vec::new(),
    };
    let mut seen = Vec::new();
    for (line, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        let rest = &f[1..];
        seen.push(f[0]);
        match f[0] {
            "frames" | "cameras" => {
                let v: Vec<usize> = parse_fields(path, line, rest)?;
                if v.len() != 1 {
                    return Err(CliError::parse(path, line, "expected one count"));
                }
                if f[0] == "frames" {
                    m.frames = v[0];
                } else {
                    m.cameras = v[0];
                }
            }
            "train" => m.train = parse_fields(path, line, rest)?,
            "heldout" => m.heldout = parse_fields(path, line, rest)?,
            "beta" => m.beta = parse_fields(path, line, rest)?,
            "background" => {
                let v: Vec<f64> = parse_fields(path, line, rest)?;
                m.background = v
                    .try_into()
                    .map_err(|_| CliError::parse(path, line, "background needs three values"))?;
            }
            "sha256" if rest.len() == 2 => m.checksums.push((rest[0].to_string(), rest[1].to_string())),
            k => return Err(CliError::parse(path, line, format!("unknown entry `{k}`"))),
        }
    }
    for key in ["frames", "cameras", "train", "heldout", "background", "beta"] {
        if !seen.contains(&key) {
            return Err(CliError::Validation(format!("{}: missing `{key}`", path.display())));
        }
    }
    Ok(m)
}

/// Reads a dataset, checking the manifest checksums and the layout first;
/// every problem found is reported together.
pub fn read_dataset(dir: &Path, joints: usize, shape_dim: usize) -> CliResult<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let m = parse_manifest(&manifest_path)?;
    let mut problems = Vec::new();
    let mut listed: Vec<&str> = Vec::new();
    for (sum, name) in &m.checksums {
        listed.push(name);
        match sha256_file(&dir.join(name)) {
            Ok(actual) if &actual == sum => {}
            Ok(_) => problems.push(format!("{name}: checksum mismatch")),
            Err(e) => problems.push(e.to_string()),
        }
    }
    for f in 0..m.frames {
        for c in 0..m.cameras {
            for name in [image_name(f, c), mask_name(f, c), crop_name(f, c), crop_mask_name(f, c)] {
                if !listed.contains(&name.as_str()) {
                    problems.push(format!("{name}: not listed in the manifest"));
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: {} problem(s):\n  {}",
            dir.display(),
            problems.len(),
            problems.join("\n  ")
        )));
    }
    let cam_path = dir.join(CAMERAS);
    let cameras = parse_cameras(&cam_path, &read_text(&cam_path)?)?;
    let pose_path = dir.join(POSES);
    let poses = parse_poses(&pose_path, &read_text(&pose_path)?, joints)?;
    if cameras.len() != m.cameras || poses.len() != m.frames {
        return Err(CliError::Validation(format!(
            "{}: manifest lists {} frames × {} cameras, files hold {} × {}",
            dir.display(),
            m.frames,
            m.cameras,
            poses.len(),
            cameras.len()
        )));
    }
    let crops = read_crops(&dir.join(CROPS), m.frames, m.cameras)?;
    let mut samples = Vec::with_capacity(m.frames * m.cameras);
    for f in 0..m.frames {
        for c in 0..m.cameras {
            samples.push(Sample {
                image: read_image(&dir.join(image_name(f, c)), 3)?,
                mask: read_image(&dir.join(mask_name(f, c)), 1)?,
                crop: crops[f * m.cameras + c],
                crop_image: read_image(&dir.join(crop_name(f, c)), 3)?,
                crop_mask: read_image(&dir.join(crop_mask_name(f, c)), 1)?,
            });
        }
    }
    let data = Dataset {
        beta: m.beta,
        poses,
        cameras,
        train_views: m.train,
        heldout_views: m.heldout,
        samples,
        background: m.background,
    };
    data.validate(joints, shape_dim).map_err(|e| CliError::from(e).at(dir))?;
    Ok(data)
}

fn read_crops(path: &Path, frames: usize, cameras: usize) -> CliResult<Vec<CropSpec>> {
    let text = read_text(path)?;
    let mut out = Vec::with_capacity(frames * cameras);
    for (line, l) in data_lines(&text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 7 {
            return Err(CliError::parse(path, line, format!("expected 7 fields, found {}", f.len())));
        }
        let idx: Vec<usize> = parse_fields(path, line, &f[..2])?;
        if idx[0] * cameras + idx[1] != out.len() || idx[1] >= cameras {
            return Err(CliError::parse(path, line, "entry out of order"));
        }
        let v: Vec<f64> = parse_fields(path, line, &f[2..5])?;
        let size: Vec<usize> = parse_fields(path, line, &f[5..])?;
        out.push(CropSpec {
            x: v[0],
            y: v[1],
            scale: v[2],
            width: size[0],
            height: size[1],
        });
    }
    if out.len() != frames * cameras {
        return Err(CliError::Validation(format!(
            "{}: {} crops for {} (frame, camera) pairs",
            path.display(),
            out.len(),
            frames * cameras
        )));
    }
    Ok(out)
}
