//! Reconstruction quality metrics.

use crate::complex::ComplexImage;
use crate::error::{shape_err, NpgdError, Result};
use crate::tensor::Tensor;

/// SNR reported when the error is negligible relative to the signal.
pub const SNR_CAP_DB: f64 = 100.0;

const SSIM_RADIUS: usize = 3;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub snr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
}

impl MetricReport {
    pub fn compute(estimate: &ComplexImage, truth: &ComplexImage) -> Result<Self> {
        Ok(Self {
            snr_db: snr_db(estimate, truth)?,
            ssim: ssim(estimate, truth)?,
            nrmse: nrmse(estimate, truth)?,
        })
    }
}

fn error_and_signal(estimate: &ComplexImage, truth: &ComplexImage) -> Result<(f64, f64)> {
    estimate.check_same_dims(truth)?;
    let signal = truth.norm();
    if signal == 0.0 {
        return Err(NpgdError::UndefinedMetric("reference image is zero".into()));
    }
    Ok((estimate.sub(truth)?.norm(), signal))
}

/// `20 log10(||x*|| / ||x - x*||)` on the complex images, capped at 100 dB.
pub fn snr_db(estimate: &ComplexImage, truth: &ComplexImage) -> Result<f64> {
    let (err, signal) = error_and_signal(estimate, truth)?;
    if err < 1e-10 * signal {
        return Ok(SNR_CAP_DB);
    }
    Ok((20.0 * (signal / err).log10()).min(SNR_CAP_DB))
}

/// `||x - x*|| / ||x*||`.
pub fn nrmse(estimate: &ComplexImage, truth: &ComplexImage) -> Result<f64> {
    let (err, signal) = error_and_signal(estimate, truth)?;
    Ok(err / signal)
}

/// SSIM of the magnitude images with dynamic range taken from `truth`.
pub fn ssim(estimate: &ComplexImage, truth: &ComplexImage) -> Result<f64> {
    estimate.check_same_dims(truth)?;
    let b = truth.magnitude();
    let (lo, hi) = b
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = (hi - lo) as f64;
    if range == 0.0 {
        return Err(NpgdError::UndefinedMetric(
            "reference image has zero dynamic range".into(),
        ));
    }
    ssim_with_range(&estimate.magnitude(), &b, range)
}

fn gaussian_window() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode Gaussian filtering of an `h x w` image.
fn blur(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| win[t] * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| win[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM of two real `H x W` images over every full 7x7 Gaussian window.
pub fn ssim_with_range(a: &Tensor, b: &Tensor, range: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    let s = a.shape();
    if s.len() != 2 {
        return shape_err(format!("ssim expects 2-D images, got {s:?}"));
    }
    let (h, w) = (s[0], s[1]);
    let k = 2 * SSIM_RADIUS + 1;
    if h < k || w < k {
        return Err(NpgdError::Dimension {
            axis: if h < k { "height" } else { "width" },
            size: h.min(w),
            requirement: "must be at least 7 for the SSIM window",
        });
    }
    if !(range > 0.0) {
        return Err(NpgdError::UndefinedMetric(format!("dynamic range must be positive, got {range}")));
    }
    let win = gaussian_window();
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = blur(&x, h, w, &win);
    let my = blur(&y, h, w, &win);
    let mxx = blur(&prod(&x, &x), h, w, &win);
    let myy = blur(&prod(&y, &y), h, w, &win);
    let mxy = blur(&prod(&x, &y), h, w, &win);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (u, v) = (mx[i], my[i]);
            let sxx = mxx[i] - u * u;
            let syy = myy[i] - v * v;
            let sxy = mxy[i] - u * v;
            ((2.0 * u * v + c1) * (2.0 * sxy + c2)) / ((u * u + v * v + c1) * (sxx + syy + c2))
        })
        .sum();
    Ok(total / n as f64)
}
