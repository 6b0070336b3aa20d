//! Tiled front-to-back Gaussian compositing with an analytic backward pass.
//!
//! The effective opacity of Gaussian `i` at a pixel is
//! `α'ᵢ = σ(oᵢ)·exp(-½ d²)` when the 2D squared Mahalanobis distance `d² ≤ 9`
//! and zero otherwise. Contributors are composited in (depth, index) order; a
//! pixel stops after the contributor that drops its transmittance below
//! [`TRANSMITTANCE_EPS`], and whatever transmittance remains shows the background.

mod backward;
mod project;

pub use backward::rasterize_backward;
pub use project::{project_gaussian, ProjectedGaussian, CUTOFF_D2, LOW_PASS};

use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::gaussian::GaussianSet;
use crate::image::Image;

pub const TILE_SIZE: usize = 16;
pub const TRANSMITTANCE_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub alpha: Image,
    /// Number of Gaussians composited at each pixel.
    pub contributors: Vec<u32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

/// Projected Gaussians in compositing order plus per-tile contributor lists.
pub(crate) struct Binned {
    pub projected: Vec<ProjectedGaussian>,
    pub tiles_x: usize,
    /// Indices into `projected`, ascending (hence depth sorted) per tile.
    pub tile_lists: Vec<Vec<u32>>,
}

pub(crate) fn bin(set: &GaussianSet, camera: &CameraModel) -> Binned {
    let degree = set.sh_degree;
    let mut projected: Vec<ProjectedGaussian> = set
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let t = project::projection_terms(g, camera)?;
            project::finish_projection(i, g, camera, degree, &t)
        })
        .collect();
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let tiles_x = camera.width.div_ceil(TILE_SIZE);
    let tiles_y = camera.height.div_ceil(TILE_SIZE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    let (w, h) = (camera.width as i64, camera.height as i64);
    for (k, p) in projected.iter().enumerate() {
        let (x0, x1, y0, y1) = p.pixel_bounds();
        let (x0, x1) = (x0.max(0), x1.min(w - 1));
        let (y0, y1) = (y0.max(0), y1.min(h - 1));
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let ts = TILE_SIZE as i64;
        for ty in (y0 / ts)..=(y1 / ts) {
            for tx in (x0 / ts)..=(x1 / ts) {
                tile_lists[(ty as usize) * tiles_x + tx as usize].push(k as u32);
            }
        }
    }
    Binned {
        projected,
        tiles_x,

        tile_lists,
    }
}

impl Binned {
    pub fn tile_rect(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(width), y0, (y0 + TILE_SIZE).min(height))
    }
}

/// Effective opacity and its inputs at pixel center `(px, py)`, or `None`
/// beyond the cutoff.
#[inline(always)]
pub(crate) fn falloff(p: &ProjectedGaussian, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = px - p.mean2d.x;
    let dy = py - p.mean2d.y;
    let [a, b, c] = p.conic;
    let d2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if d2 > CUTOFF_D2 {
        return None;
    }
    let w = (-0.5 * d2).exp();
    Some((p.opacity * w, w, dx, dy))
}

struct TileOut {
    color: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    count: Vec<u32>,
}

/// Renders `set` through `camera` over a constant background.
pub fn rasterize(set: &GaussianSet, camera: &CameraModel, background: [f64; 3]) -> RenderOutput {
    let (width, height) = (camera.width, camera.height);
    let binned = bin(set, camera);
    let tiles: Vec<TileOut> = (0..binned.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = binned.tile_rect(tile, width, height);
            let list = &binned.tile_lists[tile];
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileOut {
                color: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                count: Vec::with_capacity(n),
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    let mut count = 0u32;
                    for &k in list {
                        let p = &binned.projected[k as usize];
                        let Some((alpha, ..)) = falloff(p, px, py) else {
                            continue;
                        };
                        let wgt = alpha * t;
                        c[0] += wgt * p.color[0];
                        c[1] += wgt * p.color[1];
                        c[2] += wgt * p.color[2];
                        t *= 1.0 - alpha;
                        count += 1;
                        if t < TRANSMITTANCE_EPS {
                            break;
                        }
                    }
                    out.color.push([
                        c[0] + t * background[0],
                        c[1] + t * background[1],
                        c[2] + t * background[2],
                    ]);
                    out.alpha.push(1.0 - t);
                    out.count.push(count);
                }
            }
            out
        })
        .collect();

    let mut color = Image::new(width, height, 3);
    let mut alpha = Image::new(width, height, 1);
    let mut contributors = vec![0u32; width * height];
    for (tile, out) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = binned.tile_rect(tile, width, height);
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                color.pixel_mut(x, y).copy_from_slice(&out.color[i]);
                alpha.data[y * width + x] = out.alpha[i];
                contributors[y * width + x] = out.count[i];
                i += 1;
            }
        }
    }
    RenderOutput {
        color,
        alpha,
        contributors,
    }
}
