//! Image quality metrics and evaluation reports.

use std::fmt::Write as _;

use crate::error::{Result, SplatError};
use crate::image::Image;

/// Value PSNR is capped at in reports and aggregates.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(SplatError::Resolution(format!(
            "{}×{}×{} vs {}×{}×{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if a.data.is_empty() {
        return Err(SplatError::Empty("image has no pixels".into()));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// Peak signal-to-noise ratio for unit peak; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// PSNR over the pixels where `select` is true.
pub fn psnr_where(a: &Image, b: &Image, select: &[bool]) -> Result<f64> {
    check_shapes(a, b)?;
    if select.len() != a.width * a.height {
        return Err(SplatError::Resolution("selection does not match the image".into()));
    }
    let c = a.channels;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, s) in select.iter().enumerate() {
        if *s {
            for k in 0..c {
                let d = a.data[i * c + k] - b.data[i * c + k];
                sum += d * d;
            }
            n += c;
        }
    }
    if n == 0 {
        return Err(SplatError::Empty("no pixels selected".into()));
    }
    Ok(if sum == 0.0 { f64::INFINITY } else { -10.0 * (sum / n as f64).log10() })
}

pub fn cap_psnr(v: f64) -> f64 {
    v.min(PSNR_CAP)
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering of one channel.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|t| k[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|t| k[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11×11 windows (Gaussian
/// weights, σ = 1.5) and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(SplatError::Resolution(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {}×{}",
            a.width, a.height
        )));
    }
    let (w, h, c) = (a.width, a.height, a.channels);
    let k = ssim_kernel();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = (0..w * h).map(|i| a.data[i * c + ch]).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data[i * c + ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter(&x, w, h, &k), filter(&y, w, h, &k));
        let (sxx, syy, sxy) = (filter(&xx, w, h, &k), filter(&yy, w, h, &k), filter(&xy, w, h, &k));
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Metrics of one held-out (frame, view) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetrics {
    pub frame: usize,
    pub view: usize,
    /// Full image, PSNR capped at [`PSNR_CAP`].
    pub psnr: f64,
    pub ssim: f64,
    /// Full-image pixels outside the head crop rectangle.
    pub body_psnr: f64,
    /// Head crop rendered through the crop camera.
    pub head_psnr: f64,
    pub head_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ViewMetrics>,
}

/// Column means of a report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub body_psnr: f64,
    pub head_psnr: f64,
    pub head_ssim: f64,
}

impl MetricsReport {
    pub fn mean(&self) -> MetricsSummary {
        let n = self.rows.len().max(1) as f64;
        let avg = |f: fn(&ViewMetrics) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        MetricsSummary {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            body_psnr: avg(|r| r.body_psnr),
            head_psnr: avg(|r| r.head_psnr),
            head_ssim: avg(|r| r.head_ssim),
        }
    }

    /// Mean metrics per view index, in ascending view order.
    pub fn per_view(&self) -> Vec<(usize, MetricsSummary)> {
        let mut views: Vec<usize> = self.rows.iter().map(|r| r.view).collect();
        views.sort_unstable();
        views.dedup();
        views
            .into_iter()
            .map(|v| {
                let sub = MetricsReport {
                    rows: self.rows.iter().filter(|r| r.view == v).cloned().collect(),
                };
                (v, sub.mean())
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,view,psnr,ssim,body_psnr,head_psnr,head_ssim\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.frame, r.view, r.psnr, r.ssim, r.body_psnr, r.head_psnr, r.head_ssim
            )
            .unwrap();
        }
        s
    }

    /// Human-readable per-view table with an aggregate row.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>6} {:>9} {:>7} {:>9} {:>9} {:>9}\n",
            "view", "PSNR", "SSIM", "body", "head", "head SSIM"
        );
        let line = |s: &mut String, name: &str, m: &MetricsSummary| {
            writeln!(
                s,
                "{name:>6} {:>9.3} {:>7.4} {:>9.3} {:>9.3} {:>9.4}",
                m.psnr, m.ssim, m.body_psnr, m.head_psnr, m.head_ssim
            )
            .unwrap();
        };
        for (v, m) in self.per_view() {
            line(&mut s, &v.to_string(), &m);
        }
        line(&mut s, "all", &self.mean());
        s
    }
}
