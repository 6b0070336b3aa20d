//! Training objective: masked L1 on color, L1 on alpha against the mask, an
//! offset regularizer on position residuals and optional image hooks.

use crate::deformer::{ResidualMap, RES_POSITION};
use crate::error::{Result, SplatError};
use crate::image::Image;
use crate::raster::RenderOutput;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub perceptual: f64,
    pub offset: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            perceptual: 0.1,
            offset: 5e-3,
            adversarial: 5e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l1", self.l1),
            ("perceptual", self.perceptual),
            ("offset", self.offset),
            ("adversarial", self.adversarial),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SplatError::Invalid(format!("loss weight {name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Extra image-space term: returns a scalar and its gradient w.r.t. the
/// rendered color image.
pub trait ImageHook: Send + Sync {
    fn evaluate(&self, rendered: &Image, target: &Image) -> (f64, Image);
}

/// Optional perceptual and adversarial terms; both are absent by default.
#[derive(Clone, Copy, Default)]
pub struct LossHooks<'a> {
    pub perceptual: Option<&'a dyn ImageHook>,
    pub adversarial: Option<&'a dyn ImageHook>,
}

/// Unweighted term values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub mask: f64,
    pub offset: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.l1 * (self.l1 + self.mask) + w.offset * self.offset + w.perceptual * self.perceptual + w.adversarial * self.adversarial
    }

    pub fn add(&mut self, o: &LossTerms) {
        self.l1 += o.l1;
        self.mask += o.mask;
        self.offset += o.offset;
        self.perceptual += o.perceptual;
        self.adversarial += o.adversarial;
    }
}

/// Image terms of one render with gradients w.r.t. its color and alpha.
#[derive(Clone, Debug)]
pub struct ImageLoss {
    pub terms: LossTerms,
    pub grad_color: Image,
    pub grad_alpha: Image,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `λ_l1·mean(m·|C − target|) + λ_l1·mean|α − m|` plus hook terms.
pub fn image_loss(
    rendered: &RenderOutput,
    target: &Image,
    mask: &Image,
    weights: &LossWeights,
    hooks: &LossHooks,
) -> Result<ImageLoss> {
    let (w, h) = (rendered.width(), rendered.height());
    if target.width != w || target.height != h || target.channels != 3 {
        return Err(SplatError::Resolution(format!(
            "target is {}×{}×{}, render is {w}×{h}×3",
            target.width, target.height, target.channels
        )));
    }
    if mask.width != w || mask.height != h || mask.channels != 1 {
        return Err(SplatError::Resolution(format!(
            "mask is {}×{}×{}, render is {w}×{h}×1",
            mask.width, mask.height, mask.channels
        )));
    }
    let n = (w * h) as f64;
    let mut terms = LossTerms::default();
    let mut grad_color = Image::new(w, h, 3);
    let mut grad_alpha = Image::new(w, h, 1);
    for i in 0..w * h {
        let m = mask.data[i];
        for c in 0..3 {
            let d = rendered.color.data[3 * i + c] - target.data[3 * i + c];
            terms.l1 += m * d.abs();
            grad_color.data[3 * i + c] = weights.l1 * m * sign(d) / (3.0 * n);
        }
        let d = rendered.alpha.data[i] - m;
        terms.mask += d.abs();
        grad_alpha.data[i] = weights.l1 * sign(d) / n;
    }
    terms.l1 /= 3.0 * n;
    terms.mask /= n;
    for (hook, lambda, slot) in [
        (hooks.perceptual, weights.perceptual, &mut terms.perceptual),
        (hooks.adversarial, weights.adversarial, &mut terms.adversarial),
    ] {
        if let Some(hook) = hook {
            let (v, g) = hook.evaluate(&rendered.color, target);
            if !g.same_shape(&grad_color) {
                return Err(SplatError::Resolution("hook gradient does not match the render".into()));
            }
            *slot = v;
            for (a, b) in grad_color.data.iter_mut().zip(&g.data) {
                *a += lambda * b;
            }
        }
    }
    Ok(ImageLoss {
        terms,
        grad_color,
        grad_alpha,
    })
}

/// `mean‖Δposition‖²` over all rows of all maps, with gradients
/// `2·λ·Δposition / N` laid out like the residual maps.
pub fn offset_loss(residuals: &[&ResidualMap], weight: f64) -> (f64, Vec<Vec<f64>>) {
    let n: usize = residuals.iter().map(|r| r.rows()).sum();
    let mut grads: Vec<Vec<f64>> = residuals.iter().map(|r| vec![0.0; r.data.len()]).collect();
    if n == 0 {
        return (0.0, grads);
    }
    let mut sum = 0.0;
    for (r, g) in residuals.iter().zip(grads.iter_mut()) {
        for i in 0..r.rows() {
            let row = r.row(i);
            for k in RES_POSITION..RES_POSITION + 3 {
                sum += row[k] * row[k];
                g[i * crate::deformer::RESIDUAL_CHANNELS + k] = 2.0 * weight * row[k] / n as f64;
            }
        }
    }
    (sum / n as f64, grads)
}

/// Full objective of one render: image terms plus the offset regularizer.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub terms: LossTerms,
    pub grad_color: Image,
    pub grad_alpha: Image,
    /// Gradients w.r.t. each residual map, in input order.
    pub grad_residuals: Vec<Vec<f64>>,
}

pub fn compute_loss(
    rendered: &RenderOutput,
    target: &Image,
    mask: &Image,
    residuals: &[&ResidualMap],
    weights: &LossWeights,
    hooks: &LossHooks,
) -> Result<LossOutput> {
    let img = image_loss(rendered, target, mask, weights, hooks)?;
    let (offset, grad_residuals) = offset_loss(residuals, weights.offset);
    let mut terms = img.terms;
    terms.offset = offset;
    Ok(LossOutput {
        total: terms.total(weights),
        terms,
        grad_color: img.grad_color,
        grad_alpha: img.grad_alpha,
        grad_residuals,
    })
}
