//! Per-pixel multi-layer perceptrons over a flat parameter vector.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use rayon::prelude::*;

/// Rows per parallel work item; fixed so reductions never depend on threads.
const CHUNK_ROWS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

/// Layer widths and the offsets of each layer's weights (column-major
/// `out × in`) and bias within a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpShape {
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Offset of the first layer inside the owning parameter vector.
    pub base: usize,
}

impl MlpShape {
    pub fn new(widths: Vec<usize>, activation: Activation, base: usize) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            widths,
            activation,
            base,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weight offset, bias offset)` of layer `l`.
    pub fn offsets(&self, l: usize) -> (usize, usize) {
        let mut o = self.base;
        for w in self.widths.windows(2).take(l) {
            o += w[0] * w[1] + w[1];
        }
        (o, o + self.widths[l] * self.widths[l + 1])
    }

    pub fn describe(&self) -> String {
        format!("{:?}/{}", self.widths, self.activation.name())
    }

    /// Uniform Glorot initialization; the last layer is zero.
    pub fn initialize(&self, params: &mut [f64], rng: &mut impl Rng) {
        for l in 0..self.layers() {
            let (w_off, b_off) = self.offsets(l);
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let last = l + 1 == self.layers();
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for v in &mut params[w_off..w_off + n_in * n_out] {
                *v = if last { 0.0 } else { rng.random_range(-bound..bound) };
            }
            params[b_off..b_off + n_out].fill(0.0);
        }
    }

    fn weights<'a>(&self, params: &'a [f64], l: usize) -> DMatrixView<'a, f64> {
        let (w_off, _) = self.offsets(l);
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        DMatrixView::from_slice(&params[w_off..w_off + n_in * n_out], n_out, n_in)
    }

    fn bias<'a>(&self, params: &'a [f64], l: usize) -> &'a [f64] {
        let (_, b_off) = self.offsets(l);
        &params[b_off..b_off + self.widths[l + 1]]
    }
}

/// Activations of every layer for one chunk of rows (`rows × width`).
#[derive(Clone, Debug)]
pub struct ChunkTape {
    pub activations: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct MlpTape {
    pub chunks: Vec<ChunkTape>,
}

impl MlpTape {
    /// Output row `r` (owned copy).
    pub fn output_row(&self, r: usize) -> Vec<f64> {
        let c = &self.chunks[r / CHUNK_ROWS];
        let out = c.activations.last().unwrap();
        out.row(r % CHUNK_ROWS).iter().cloned().collect()
    }

    /// All outputs, row-major.
    pub fn outputs(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for c in &self.chunks {
            let out = c.activations.last().unwrap();
            for r in 0..out.nrows() {
                v.extend(out.row(r).iter());
            }
        }
        v
    }
}

/// Runs the MLP on row-major `inputs` (`rows × input_dim`).
pub fn mlp_forward(shape: &MlpShape, params: &[f64], inputs: &[f64]) -> MlpTape {
    let d = shape.input_dim();
    let rows = inputs.len() / d;
    let chunks = (0..rows.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let r0 = c * CHUNK_ROWS;
            let n = CHUNK_ROWS.min(rows - r0);
            let x = DMatrix::from_row_slice(n, d, &inputs[r0 * d..(r0 + n) * d]);
            let mut activations = vec![x];
            for l in 0..shape.layers() {
                let w = shape.weights(params, l);
                let b = shape.bias(params, l);
                let mut h = activations.last().unwrap() * w.transpose();
                for (j, mut col) in h.column_iter_mut().enumerate() {
                    col.add_scalar_mut(b[j]);
                }
                if l + 1 < shape.layers() && shape.activation == Activation::Tanh {
                    h.apply(|v| *v = v.tanh());
                }
                activations.push(h);
            }
            ChunkTape { activations }
        })
        .collect();
    MlpTape { chunks }
}

/// Reverse pass. `grad_out` is row-major `rows × output_dim`; parameter
/// gradients are added into `grad_params` (same layout as `params`). Returns
/// the row-major gradient w.r.t. the inputs.
pub fn mlp_backward(shape: &MlpShape, params: &[f64], tape: &MlpTape, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
    let o = shape.output_dim();
    let d = shape.input_dim();
    let partials: Vec<(Vec<f64>, DMatrix<f64>)> = tape
        .chunks
        .par_iter()
        .enumerate()
        .map(|(c, chunk)| {
            let r0 = c * CHUNK_ROWS;
            let n = chunk.activations[0].nrows();
            let mut g = DMatrix::from_row_slice(n, o, &grad_out[r0 * o..(r0 + n) * o]);
            let mut local = vec![0.0; shape.param_count()];
            for l in (0..shape.layers()).rev() {
                let (w_off, b_off) = shape.offsets(l);
                let (w_off, b_off) = (w_off - shape.base, b_off - shape.base);
                let input = &chunk.activations[l];
                let gw = g.transpose() * input;
                local[w_off..w_off + gw.len()].copy_from_slice(gw.as_slice());
                for (j, col) in g.column_iter().enumerate() {
                    local[b_off + j] = col.sum();
                }
                let mut gi = &g * shape.weights(params, l);
                if l > 0 && shape.activation == Activation::Tanh {
                    gi.zip_apply(input, |gv, h| *gv *= 1.0 - h * h);
                }
                g = gi;
            }
            (local, g)
        })
        .collect();
    let mut grad_in = Vec::with_capacity(tape.chunks.iter().map(|c| c.activations[0].nrows()).sum::<usize>() * d);
    for (local, g) in &partials {
        for (acc, v) in grad_params[shape.base..shape.base + local.len()].iter_mut().zip(local) {
            *acc += v;
        }
        for r in 0..g.nrows() {
            grad_in.extend(g.row(r).iter());
        }
    }
    grad_in
}
