//! Instance normalization kernels.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f32 = 1e-5;

pub(crate) fn instance_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f32>)> {
    let s = x.shape();
    if s.len() != 3 || gamma.shape() != [s[0]] || beta.shape() != [s[0]] {
        return shape_err(format!(
            "instance norm expects CxHxW input with C-vectors, got {s:?}, {:?}, {:?}",
            gamma.shape(),
            beta.shape()
        ));
    }
    let n = s[1] * s[2];
    let mut xhat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    let mut inv_std = Vec::with_capacity(s[0]);
    for c in 0..s[0] {
        let plane = &x.data()[c * n..(c + 1) * n];
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + INSTANCE_NORM_EPS as f64).sqrt();
        inv_std.push(is as f32);
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for i in 0..n {
            let h = ((plane[i] as f64 - mean) * is) as f32;
            xhat[c * n + i] = h;
            out[c * n + i] = g * h + b;
        }
    }
    Ok((
        Tensor::new(s, out)?,
        Tensor::new(s, xhat)?,
        inv_std,
    ))
}

pub(crate) fn instance_norm_backward(
    xhat: &Tensor,
    inv_std: &[f32],
    gamma: &Tensor,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = xhat.shape();
    let n = s[1] * s[2];
    let mut dx = vec![0.0f32; xhat.len()];
    let mut dgamma = vec![0.0f32; s[0]];
    let mut dbeta = vec![0.0f32; s[0]];
    for c in 0..s[0] {
        let xh = &xhat.data()[c * n..(c + 1) * n];
        let gy = &g.data()[c * n..(c + 1) * n];
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for i in 0..n {
            sum_g += gy[i] as f64;
            sum_gx += (gy[i] * xh[i]) as f64;
        }
        dbeta[c] = sum_g as f32;
        dgamma[c] = sum_gx as f32;
        let gm = gamma.data()[c] as f64;
        let scale = gm * inv_std[c] as f64 / n as f64;
        for i in 0..n {
            let v = n as f64 * gy[i] as f64 - sum_g - xh[i] as f64 * sum_gx;
            dx[c * n + i] = (scale * v) as f32;
        }
    }
    (
        Tensor::new(s, dx).expect("shape"),
        Tensor::from_vec(dgamma),
        Tensor::from_vec(dbeta),
    )
}
