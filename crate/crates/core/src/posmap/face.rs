use super::Side;
use crate::error::{Result, SplatError};
use crate::gaussian::GaussianPrimitive;
use crate::math::{Quat, Vec3};
use crate::sh::MAX_COEFFS;

/// Channels of a Gaussian attribute grid: mean 3, log-scale 3, rotation 4
/// (w, x, y, z), opacity logit 1, color coefficients 12.
pub const GAUSSIAN_CHANNELS: usize = 23;

pub fn primitive_to_channels(g: &GaussianPrimitive, out: &mut [f64]) {
    out[0..3].copy_from_slice(g.mean.as_slice());
    out[3..6].copy_from_slice(g.log_scale.as_slice());
    out[6..10].copy_from_slice(&[g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
    out[10] = g.opacity_logit;
    out[11..23].copy_from_slice(&g.color);
}

pub fn channels_to_primitive(c: &[f64]) -> GaussianPrimitive {
    let mut color = [0.0; MAX_COEFFS];
    color.copy_from_slice(&c[11..23]);
    GaussianPrimitive {
        mean: Vec3::new(c[0], c[1], c[2]),
        log_scale: Vec3::new(c[3], c[4], c[5]),
        rotation: Quat::new(c[6], c[7], c[8], c[9]),
        opacity_logit: c[10],
        color,
    }
}

/// H×W×C grid of attributes with a coverage mask. Uncovered cells hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub coverage: Vec<bool>,
}

impl AttributeGrid {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            coverage: vec![false; width * height],
        }
    }

    /// Fully covered grid from row-major data.
    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(SplatError::Dimension(format!(
                "{} values for a {width}×{height}×{channels} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            coverage: vec![true; width * height],
        })
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    #[inline]
    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.coverage[y * self.width + x]
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c).count()
    }

    fn check_compatible(&self, other: &AttributeGrid) -> Result<()> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(SplatError::Resolution(format!(
                "{}×{}×{} grid vs {}×{}×{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        if self.coverage != other.coverage {
            return Err(SplatError::Correspondence("grids cover different cells".into()));
        }
        Ok(())
    }

    /// Gaussians of the covered cells in row-major order (GAUSSIAN_CHANNELS layout).
    pub fn primitives(&self) -> Vec<GaussianPrimitive> {
        assert_eq!(self.channels, GAUSSIAN_CHANNELS, "not a Gaussian attribute grid");
        (0..self.width * self.height)
            .filter(|&i| self.coverage[i])
            .map(|i| channels_to_primitive(&self.data[i * self.channels..(i + 1) * self.channels]))
            .collect()
    }
}

/// Per-cell running mean over a stream of grids.
#[derive(Clone, Debug, Default)]
pub struct RunningMean {
    mean: Option<AttributeGrid>,
    count: usize,
}

impl RunningMean {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, grid: &AttributeGrid) -> Result<()> {
        self.count += 1;
        match &mut self.mean {
            None => {
                let mut m = grid.clone();
                let c = m.channels;
                for (cell, covered) in grid.coverage.iter().enumerate() {
                    if !covered {
                        m.data[cell * c..(cell + 1) * c].fill(0.0);
                    }
                }
                self.mean = Some(m);
            }
            Some(m) => {
                m.check_compatible(grid)?;
                let k = self.count as f64;
                for (cell, covered) in m.coverage.iter().enumerate() {
                    if *covered {
                        let c = m.channels;
                        for i in cell * c..(cell + 1) * c {
                            m.data[i] += (grid.data[i] - m.data[i]) / k;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Result<AttributeGrid> {
        self.mean.clone().ok_or_else(|| SplatError::Empty("no grids to average".into()))
    }
}

/// Per-cell arithmetic mean of grids that share shape and coverage.
pub fn average_canonical_face(grids: &[AttributeGrid]) -> Result<AttributeGrid> {
    let first = grids.first().ok_or_else(|| SplatError::Empty("no grids to average".into()))?;
    let mut sum = first.clone();
    for g in &grids[1..] {
        sum.check_compatible(g)?;
        for (s, v) in sum.data.iter_mut().zip(&g.data) {
            *s += v;
        }
    }
    let n = grids.len() as f64;
    for (cell, covered) in sum.coverage.iter().enumerate() {
        let c = sum.channels;
        for v in &mut sum.data[cell * c..(cell + 1) * c] {
            *v = if *covered { *v / n } else { 0.0 };
        }
    }
    Ok(sum)
}

/// Interpolation support along one axis for output node `o`: the source node
/// `o / factor` itself when it lands on one, otherwise its two neighbors.
fn support(o: usize, factor: usize, n: usize) -> Option<[(usize, f64); 2]> {
    let i = o / factor;
    let r = o % factor;
    if r == 0 {
        return Some([(i, 1.0), (i, 0.0)]);
    }
    if i + 1 >= n {
        return None;
    }
    let t = r as f64 / factor as f64;
    Some([(i, 1.0 - t), (i + 1, t)])
}

/// Upsamples by `factor` with separable linear interpolation per channel.
/// Output node `(X, Y)` sits at source coordinate `(X/factor, Y/factor)`, so
/// source nodes are copied exactly. An output node is covered when every
/// source node it draws on is covered; the trailing `factor − 1` rows and
/// columns lie past the last source node and stay uncovered.
pub fn densify_grid(grid: &AttributeGrid, factor: usize) -> Result<AttributeGrid> {
    if factor == 0 {
        return Err(SplatError::Invalid("densification factor must be at least 1".into()));
    }
    let (w, h, c) = (grid.width * factor, grid.height * factor, grid.channels);
    let mut out = AttributeGrid::new(w, h, c);
    for y in 0..h {
        let Some(sy) = support(y, factor, grid.height) else {
            continue;
        };
        for x in 0..w {
            let Some(sx) = support(x, factor, grid.width) else {
                continue;
            };
            let taps: Vec<(usize, usize, f64)> = sy
                .iter()
                .flat_map(|&(j, wy)| sx.iter().map(move |&(i, wx)| (i, j, wx * wy)))
                .filter(|t| t.2 != 0.0)
                .collect();
            if !taps.iter().all(|&(i, j, _)| grid.covered(i, j)) {
                continue;
            }
            out.coverage[y * w + x] = true;
            let dst = out.cell_mut(x, y);
            if let [(i, j, _)] = taps[..] {
                dst.copy_from_slice(grid.cell(i, j));
                continue;
            }
            for (i, j, wt) in taps {
                for (d, s) in dst.iter_mut().zip(grid.cell(i, j)) {
                    *d += wt * s;
                }
            }
        }
    }
    Ok(out)
}

/// Averaged and densified face attribute grids for one side.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSide {
    pub side: Side,
    pub averaged: AttributeGrid,
    pub densified: AttributeGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalFaceModel {
    pub factor: usize,
    pub sides: Vec<FaceSide>,
}

impl CanonicalFaceModel {
    /// Averages each side's per-frame grids and densifies the result.
    pub fn build(frames: &[(Side, Vec<AttributeGrid>)], factor: usize) -> Result<Self> {
        let sides = frames
            .iter()
            .map(|(side, grids)| {
                let averaged = average_canonical_face(grids)?;
                let densified = densify_grid(&averaged, factor)?;
                Ok(FaceSide {
                    side: *side,
                    averaged,
                    densified,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { factor, sides })
    }

    /// Face Gaussians of every side, in side order then row-major order.
    pub fn primitives(&self) -> Vec<GaussianPrimitive> {
        self.sides.iter().flat_map(|s| s.densified.primitives()).collect()
    }
}
