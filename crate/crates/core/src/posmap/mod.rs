//! Orthographic positional maps of the template, face crops and the
//! canonical face model.
//!
//! A map is rendered from the canonical mesh, so the surface point behind each
//! pixel is fixed; the stored position is that point in whichever pose is
//! requested (canonical when no pose is given).

mod crop;
mod face;

pub use crop::{compute_face_crop, crop_camera, crop_intrinsics, CropSpec, FACE_CROP_FACTOR};
pub use face::{
    average_canonical_face, channels_to_primitive, densify_grid, primitive_to_channels, AttributeGrid,
    CanonicalFaceModel, FaceSide, RunningMean, GAUSSIAN_CHANNELS,
};

use rayon::prelude::*;

use crate::articulation::{Pose, SkinnedTemplate};
use crate::camera::{CameraModel, Intrinsics, ProjectionMode};
use crate::error::{Result, SplatError};
use crate::math::Vec3;

/// Which side of the body a map sees. The template faces +y, so the front
/// map looks along −y and the back map along +y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Front,
    Back,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Front, Side::Back];

    pub fn name(self) -> &'static str {
        match self {
            Side::Front => "front",
            Side::Back => "back",
        }
    }
}

/// Distance of the map camera from the frame center along the viewing axis (m).
const MAP_EYE_DISTANCE: f64 = 10.0;
/// Empty border around the fitted silhouette, as a fraction of its extent.
const MAP_MARGIN: f64 = 0.02;

/// Orthographic camera for a map of `side` centered on world `(center.x, center.z)`.
pub fn map_camera(side: Side, center: &Vec3, pixel_size: f64, width: usize, height: usize) -> CameraModel {
    let sign = match side {
        Side::Front => 1.0,
        Side::Back => -1.0,
    };
    let target = Vec3::new(center.x, 0.0, center.z);
    let eye = target + Vec3::y() * (sign * MAP_EYE_DISTANCE);
    CameraModel::look_at(
        eye,
        target,
        Vec3::z(),
        Intrinsics {
            fx: 1.0 / pixel_size,
            fy: 1.0 / pixel_size,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        },
        width,
        height,
        ProjectionMode::Orthographic,
    )
}

/// Square map camera enclosing the x/z extent of `vertices`.
pub fn fit_map_camera(side: Side, vertices: &[Vec3], resolution: usize) -> CameraModel {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let center = (lo + hi) / 2.0;
    let extent = (hi.x - lo.x).max(hi.z - lo.z) * (1.0 + 2.0 * MAP_MARGIN);
    map_camera(side, &center, extent / resolution as f64, resolution, resolution)
}

/// H×W grid of surface points with a coverage mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalMap {
    pub side: Side,
    pub width: usize,
    pub height: usize,
    /// Orthographic camera the canonical mesh was rasterized with.
    pub camera: CameraModel,
    /// Row-major positions; `(0, 0, 0)` where uncovered.
    pub positions: Vec<Vec3>,
    pub coverage: Vec<bool>,
    /// Triangle behind each pixel (`u32::MAX` where uncovered).
    pub triangles: Vec<u32>,
    pub barycentric: Vec<[f64; 3]>,
}

impl PositionalMap {
    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c).count()
    }

    /// Row-major indices of covered pixels.
    pub fn covered_pixels(&self) -> Vec<usize> {
        (0..self.coverage.len()).filter(|&i| self.coverage[i]).collect()
    }

    /// Positions of covered pixels in row-major order.
    pub fn covered_positions(&self) -> Vec<Vec3> {
        self.covered_pixels().iter().map(|&i| self.positions[i]).collect()
    }

    /// Map of precomputed samples with no mesh correspondence (for example a
    /// densified head grid).
    pub fn from_samples(side: Side, camera: CameraModel, positions: Vec<Vec3>, coverage: Vec<bool>) -> Result<Self> {
        let n = camera.width * camera.height;
        if positions.len() != n || coverage.len() != n {
            return Err(SplatError::Resolution(format!(
                "{} samples for a {}×{} map",
                positions.len(),
                camera.width,
                camera.height
            )));
        }
        Ok(PositionalMap {
            side,
            width: camera.width,
            height: camera.height,
            camera,
            positions,
            coverage,
            triangles: vec![u32::MAX; n],
            barycentric: vec![[0.0; 3]; n],
        })
    }

    /// Sub-map `[x0, x0+w) × [y0, y0+h)` with its camera shifted to match.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<PositionalMap> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(SplatError::Resolution(format!(
                "window {w}×{h} at ({x0}, {y0}) exceeds a {}×{} map",
                self.width, self.height
            )));
        }
        let crop = CropSpec {
            x: x0 as f64,
            y: y0 as f64,
            scale: 1.0,
            width: w,
            height: h,
        };
        let mut out = PositionalMap {
            side: self.side,
            width: w,
            height: h,
            camera: crop_camera(&self.camera, &crop),
            positions: Vec::with_capacity(w * h),
            coverage: Vec::with_capacity(w * h),
            triangles: Vec::with_capacity(w * h),
            barycentric: Vec::with_capacity(w * h),
        };
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let i = y * self.width + x;
                out.positions.push(self.positions[i]);
                out.coverage.push(self.coverage[i]);
                out.triangles.push(self.triangles[i]);
                out.barycentric.push(self.barycentric[i]);
            }
        }
        Ok(out)
    }

    /// Same pixel assignment with positions taken from another vertex array
    /// (for example the posed mesh).
    pub fn with_vertices(&self, vertices: &[Vec3], faces: &[[usize; 3]]) -> PositionalMap {
        let mut out = self.clone();
        for i in 0..out.positions.len() {
            if out.coverage[i] {
                let f = faces[out.triangles[i] as usize];
                let b = out.barycentric[i];
                out.positions[i] = vertices[f[0]] * b[0] + vertices[f[1]] * b[1] + vertices[f[2]] * b[2];
            }
        }
        out
    }
}

/// Depth-buffered orthographic rasterization of a mesh through `camera`.
/// Each covered pixel keeps the nearest surface hit; equal depths keep the
/// lower triangle index.
pub fn rasterize_mesh(vertices: &[Vec3], faces: &[[usize; 3]], camera: &CameraModel, side: Side) -> PositionalMap {
    let (w, h) = (camera.width, camera.height);
    let projected: Vec<(f64, f64, f64)> = vertices
        .iter()
        .map(|v| {
            let pc = camera.to_camera(v);
            let uv = camera.project_camera_point(&pc);
            (uv.x, uv.y, pc.z)
        })
        .collect();
    let rows: Vec<Vec<(f64, u32, [f64; 3])>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let py = y as f64 + 0.5;
            let mut row = vec![(f64::INFINITY, u32::MAX, [0.0; 3]); w];
            for (t, f) in faces.iter().enumerate() {
                let (a, b, c) = (projected[f[0]], projected[f[1]], projected[f[2]]);
                let (ymin, ymax) = (a.1.min(b.1).min(c.1), a.1.max(b.1).max(c.1));
                if py < ymin || py > ymax {
                    continue;
                }
                let area = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
                if area.abs() < 1e-12 {
                    continue;
                }
                let xmin = a.0.min(b.0).min(c.0);
                let xmax = a.0.max(b.0).max(c.0);
                let x0 = ((xmin - 0.5).ceil().max(0.0)) as usize;
                let x1 = ((xmax - 0.5).floor()).min(w as f64 - 1.0);
                if x1 < 0.0 {
                    continue;
                }
                for x in x0..=x1 as usize {
                    let px = x as f64 + 0.5;
                    let w0 = ((b.0 - px) * (c.1 - py) - (c.0 - px) * (b.1 - py)) / area;
                    let w1 = ((c.0 - px) * (a.1 - py) - (a.0 - px) * (c.1 - py)) / area;
                    let w2 = 1.0 - w0 - w1;
                    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                        continue;
                    }
                    let depth = w0 * a.2 + w1 * b.2 + w2 * c.2;
                    if depth < row[x].0 {
                        row[x] = (depth, t as u32, [w0, w1, w2]);
                    }
                }
            }
            row
        })
        .collect();
    let mut map = PositionalMap {
        side,
        width: w,
        height: h,
        camera: camera.clone(),
        positions: vec![Vec3::zeros(); w * h],
        coverage: vec![false; w * h],
        triangles: vec![u32::MAX; w * h],
        barycentric: vec![[0.0; 3]; w * h],
    };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (_, t, b)) in row.into_iter().enumerate() {
            if t != u32::MAX {
                let i = y * w + x;
                map.coverage[i] = true;
                map.triangles[i] = t;
                map.barycentric[i] = b;
            }
        }
    }
    map.with_vertices(vertices, faces)
}

/// Front or back positional map of the template with shape `beta`. Pixels
/// are assigned on the canonical mesh; positions are posed by `pose` when given.
pub fn render_positional_map(
    template: &SkinnedTemplate,
    beta: &[f64],
    pose: Option<&Pose>,
    side: Side,
    resolution: usize,
) -> PositionalMap {
    let canonical = template.shaped_vertices(beta);
    let camera = fit_map_camera(side, &canonical, resolution);
    render_positional_map_with(template, beta, pose, &camera, side)
}

/// As [`render_positional_map`] with an explicit map camera.
pub fn render_positional_map_with(
    template: &SkinnedTemplate,
    beta: &[f64],
    pose: Option<&Pose>,
    camera: &CameraModel,
    side: Side,
) -> PositionalMap {
    let canonical = template.shaped_vertices(beta);
    let map = rasterize_mesh(&canonical, &template.faces, camera, side);
    match pose {
        Some(p) => map.with_vertices(&template.posed_vertices(beta, p), &template.faces),
        None => map,
    }
}
