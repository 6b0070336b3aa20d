//! Nearest-triangle binding of points to a triangle mesh.

use rayon::prelude::*;

use super::skinning::SkinWeights;
use crate::math::Vec3;

/// Closest point on triangle `(a, b, c)` to `p` by Voronoi-region tests.
/// Returns barycentric weights of the closest point.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// Result of a nearest-triangle query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub triangle: usize,
    pub barycentric: [f64; 3],
    pub distance_sq: f64,
}

/// Uniform grid over triangle bounding boxes for nearest-triangle queries.
pub struct TriangleGrid<'a> {
    vertices: &'a [Vec3],
    faces: &'a [[usize; 3]],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl<'a> TriangleGrid<'a> {
    pub fn new(vertices: &'a [Vec3], faces: &'a [[usize; 3]]) -> Self {
        assert!(!faces.is_empty(), "mesh has no triangles");
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for f in faces {
            for &v in f {
                lo = lo.inf(&vertices[v]);
                hi = hi.sup(&vertices[v]);
            }
        }
        let extent = (hi - lo).map(|e| e.max(1e-9));
        // about two triangles per cell on average for surface meshes
        let target_cells = (faces.len() as f64 / 2.0).max(1.0);
        let cell = (extent.x * extent.y * extent.z / target_cells).cbrt().max(extent.max() / 256.0);
        let dims = [0, 1, 2].map(|k| ((extent[k] / cell).ceil() as usize).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut grid = TriangleGrid {
            vertices,
            faces,
            origin: lo,
            cell,
            dims,
            cells: Vec::new(),
        };
        for (t, f) in faces.iter().enumerate() {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            let lo_c = grid.cell_of(&a.inf(&b).inf(&c));
            let hi_c = grid.cell_of(&a.sup(&b).sup(&c));
            for z in lo_c[2]..=hi_c[2] {
                for y in lo_c[1]..=hi_c[1] {
                    for x in lo_c[0]..=hi_c[0] {
                        cells[grid.flat([x, y, z])].push(t as u32);
                    }
                }
            }
        }
        grid.cells = cells;
        grid
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let c = ((p[k] - self.origin[k]) / self.cell).floor();
            (c.max(0.0) as usize).min(self.dims[k] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn test(&self, t: usize, p: &Vec3, best: &mut SurfaceHit) {
        let f = self.faces[t];
        let (a, b, c) = (&self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]);
        let bary = closest_point_on_triangle(p, a, b, c);
        let q = a * bary[0] + b * bary[1] + c * bary[2];
        let d = (p - q).norm_squared();
        // ties go to the lower triangle index, independent of visit order
        if d < best.distance_sq || (d == best.distance_sq && t < best.triangle) {
            *best = SurfaceHit {
                triangle: t,
                barycentric: bary,
                distance_sq: d,
            };
        }
    }

    /// Nearest triangle to `p`, searching shells of cells outward until no
    /// unvisited cell can hold anything closer.
    pub fn nearest(&self, p: &Vec3) -> SurfaceHit {
        let mut best = SurfaceHit {
            triangle: usize::MAX,
            barycentric: [1.0, 0.0, 0.0],
            distance_sq: f64::INFINITY,
        };
        let home = self.cell_of(p);
        // distance from p to the grid box, for points outside it
        let outside = [0, 1, 2]
            .map(|k| {
                let lo = self.origin[k];
                let hi = lo + self.dims[k] as f64 * self.cell;
                (lo - p[k]).max(p[k] - hi).max(0.0)
            })
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt();
        let max_ring = *self.dims.iter().max().unwrap();
        for ring in 0..=max_ring {
            let lo = [0, 1, 2].map(|k| home[k] as i64 - ring as i64);
            let hi = [0, 1, 2].map(|k| home[k] as i64 + ring as i64);
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                    for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                        let on_shell = [x, y, z].iter().zip(lo.iter().zip(&hi)).any(|(v, (l, h))| v == l || v == h);
                        if !on_shell {
                            continue;
                        }
                        for &t in &self.cells[self.flat([x as usize, y as usize, z as usize])] {
                            self.test(t as usize, p, &mut best);
                        }
                    }
                }
            }
            // every unvisited cell is at least `ring` cells past the home cell
            // along some axis and inside the grid box along the others
            let reach_sq = (ring as f64 * self.cell).powi(2) + outside * outside;
            if best.distance_sq < reach_sq {
                break;
            }
        }
        best
    }
}

/// Skinning weights for each point, interpolated barycentrically from the
/// vertex weights of its nearest mesh triangle.
pub fn bind_points_to_surface(
    points: &[Vec3],
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    vertex_weights: &SkinWeights,
) -> SkinWeights {
    let grid = TriangleGrid::new(vertices, faces);
    let joints = vertex_weights.joints();
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| {
            let hit = grid.nearest(p);
            let f = faces[hit.triangle];
            let mut row = vec![0.0; joints];
            for (k, &v) in f.iter().enumerate() {
                for (r, w) in row.iter_mut().zip(vertex_weights.row(v)) {
                    *r += hit.barycentric[k] * w;
                }
            }
            row
        })
        .collect();
    SkinWeights::from_rows(joints, rows.concat()).expect("rows have joint length")
}
