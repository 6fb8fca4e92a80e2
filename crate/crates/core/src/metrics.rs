//! Fidelity metrics. Sequences are compared in luma gray.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Column order of [`MetricReport::to_csv`].
pub const CSV_COLUMNS: [&str; 3] = ["frame", "mse", "ssim"];

fn check_shape(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shape("mse", a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n)
}

fn window_1d() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

// separable valid-mode filtering of a row-major h×w plane
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows of two
/// single-channel images with dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shape("ssim", a, b)?;
    if a.channels() != 1 {
        return Err(Error::invalid("ssim expects single-channel images"));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let k = window_1d();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
    let mx = filter_valid(x, h, w, &k);
    let my = filter_valid(y, h, w, &k);
    let sxx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &k);
    let syy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &k);
    let sxy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub mse: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_mse: f64,
    pub mean_ssim: f64,
    /// Slots for metrics computed elsewhere (e.g. `lpips`, `fid`).
    pub external: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn frames(&self) -> usize {
        self.mse.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = CSV_COLUMNS.join(",");
        s.push('\n');
        for (i, (m, q)) in self.mse.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(s, "{i},{m:.10},{q:.10}");
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames     {}", self.frames());
        let _ = writeln!(s, "mean mse   {:.6}", self.mean_mse);
        let _ = writeln!(s, "mean ssim  {:.6}", self.mean_ssim);
        for (k, v) in &self.external {
            let _ = writeln!(s, "{k:<10} {v:.6}");
        }
        s
    }
}

/// Per-frame metrics after luma conversion of both sides.
pub fn evaluate_sequence(pred: &[Image], gt: &[Image]) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "frame count mismatch: {} predicted vs {} reference",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("no frames to evaluate"));
    }
    let mut report = MetricReport::default();
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (p.to_gray(), g.to_gray());
        report.mse.push(mse(&p, &g)?);
        report.ssim.push(ssim(&p, &g)?);
    }
    let n = pred.len() as f64;
    report.mean_mse = report.mse.iter().sum::<f64>() / n;
    report.mean_ssim = report.ssim.iter().sum::<f64>() / n;
    Ok(report)
}
