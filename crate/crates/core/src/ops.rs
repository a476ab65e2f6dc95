//! Measurement operators and the data-consistency gradient step.

use std::fmt;
use std::sync::Arc;

use crate::autograd::{Function, Tape, Var};
use crate::complex::ComplexImage;
use crate::error::{NpgdError, Result};
use crate::fft::{fft2, ifft2};
use crate::rng::XorShift64Star;
use crate::sampling::SamplingMask;
use crate::tensor::Tensor;

/// A linear measurement map with its adjoint under the real inner product
/// on stacked (re, im) images.
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn input_dims(&self) -> (usize, usize);
    fn output_dims(&self) -> (usize, usize);
    fn apply(&self, x: &ComplexImage) -> Result<ComplexImage>;
    fn adjoint(&self, y: &ComplexImage) -> Result<ComplexImage>;

    /// `adjoint(apply(x))`.
    fn normal(&self, x: &ComplexImage) -> Result<ComplexImage> {
        self.adjoint(&self.apply(x)?)
    }
}

/// `y = mask . fft2(x)`: undersampled Cartesian k-space.
#[derive(Clone, Debug)]
pub struct MaskedFourierOperator {
    mask: SamplingMask,
}

impl MaskedFourierOperator {
    pub fn new(mask: SamplingMask) -> Self {
        Self { mask }
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    fn zero_unsampled(&self, mut k: ComplexImage) -> ComplexImage {
        let bits = self.mask.bits();
        for (v, &b) in k.re_mut().iter_mut().zip(bits) {
            if !b {
                *v = 0.0;
            }
        }
        for (v, &b) in k.im_mut().iter_mut().zip(bits) {
            if !b {
                *v = 0.0;
            }
        }
        k
    }
}

impl LinearOperator for MaskedFourierOperator {
    fn input_dims(&self) -> (usize, usize) {
        (self.mask.height(), self.mask.width())
    }

    fn output_dims(&self) -> (usize, usize) {
        self.input_dims()
    }

    fn apply(&self, x: &ComplexImage) -> Result<ComplexImage> {
        let (h, w) = self.input_dims();
        x.check_dims(h, w)?;
        Ok(self.zero_unsampled(fft2(x)?))
    }

    /// Zero-filled inverse FFT; entries outside the mask are ignored.
    fn adjoint(&self, y: &ComplexImage) -> Result<ComplexImage> {
        let (h, w) = self.output_dims();
        y.check_dims(h, w)?;
        ifft2(&self.zero_unsampled(y.clone()))
    }
}

/// Factor-2 box downsampling: each output pixel is the mean of a 2x2 block.
#[derive(Clone, Debug)]
pub struct BoxDownsampleOperator {
    height: usize,
    width: usize,
}

impl BoxDownsampleOperator {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        for (axis, n) in [("height", height), ("width", width)] {
            if n == 0 || n % 2 != 0 {
                return Err(NpgdError::Dimension {
                    axis,
                    size: n,
                    requirement: "must be even for 2x2 box downsampling",
                });
            }
        }
        Ok(Self { height, width })
    }
}

impl LinearOperator for BoxDownsampleOperator {
    fn input_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn output_dims(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    fn apply(&self, x: &ComplexImage) -> Result<ComplexImage> {
        x.check_dims(self.height, self.width)?;
        let (h, w) = self.output_dims();
        let (xr, xi) = (x.re().data(), x.im().data());
        let wi = self.width;
        Ok(ComplexImage::from_fn(h, w, |i, j| {
            let idx = [
                2 * i * wi + 2 * j,
                2 * i * wi + 2 * j + 1,
                (2 * i + 1) * wi + 2 * j,
                (2 * i + 1) * wi + 2 * j + 1,
            ];
            let r: f32 = idx.iter().map(|&k| xr[k]).sum();
            let m: f32 = idx.iter().map(|&k| xi[k]).sum();
            (r * 0.25, m * 0.25)
        }))
    }

    fn adjoint(&self, y: &ComplexImage) -> Result<ComplexImage> {
        let (h, w) = self.output_dims();
        y.check_dims(h, w)?;
        let (yr, yi) = (y.re().data(), y.im().data());
        Ok(ComplexImage::from_fn(self.height, self.width, |i, j| {
            let k = (i / 2) * w + j / 2;
            (yr[k] * 0.25, yi[k] * 0.25)
        }))
    }
}

/// The identity map, useful for denoising-style sanity runs.
#[derive(Clone, Debug)]
pub struct IdentityOperator {
    height: usize,
    width: usize,
}

impl IdentityOperator {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

impl LinearOperator for IdentityOperator {
    fn input_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn output_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn apply(&self, x: &ComplexImage) -> Result<ComplexImage> {
        x.check_dims(self.height, self.width)?;
        Ok(x.clone())
    }

    fn adjoint(&self, y: &ComplexImage) -> Result<ComplexImage> {
        self.apply(y)
    }
}

/// `y - apply(x)`.
pub fn measurement_residual(op: &dyn LinearOperator, x: &ComplexImage, y: &ComplexImage) -> Result<ComplexImage> {
    y.sub(&op.apply(x)?)
}

/// One data-consistency step `x + alpha * adjoint(y - apply(x))`.
pub fn gradient_step(x: &ComplexImage, y: &ComplexImage, alpha: f32, op: &dyn LinearOperator) -> Result<ComplexImage> {
    if !(alpha > 0.0) {
        return Err(NpgdError::Parameter(format!("step size must be positive, got {alpha}")));
    }
    let r = op.adjoint(&measurement_residual(op, x, y)?)?;
    r.axpy(alpha, x)
}

/// `I - alpha * adjoint(apply(d))`, the error propagator of the gradient step.
pub fn consistency_propagate(d: &ComplexImage, alpha: f32, op: &dyn LinearOperator) -> Result<ComplexImage> {
    op.normal(d)?.axpy(-alpha, d)
}

/// Estimate of `||op||^2` by power iteration on `adjoint * apply`.
pub fn operator_norm_sq(op: &dyn LinearOperator, iterations: usize, seed: u64) -> Result<f64> {
    let (h, w) = op.input_dims();
    let mut rng = XorShift64Star::new(seed);
    let mut v = ComplexImage::random(h, w, &mut rng);
    let mut est = 0.0;
    for _ in 0..iterations.max(1) {
        let n = v.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v = v.scale((1.0 / n) as f32);
        let nv = op.normal(&v)?;
        est = nv.dot(&v)?;
        v = nv;
    }
    Ok(est)
}

struct GradStepFn {
    x: Var,
    alpha: Var,
    op: Arc<dyn LinearOperator>,
    adj_residual: Tensor,
}

impl Function for GradStepFn {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.alpha]
    }

    fn vjp(&self, tape: &Tape, _output: &Tensor, g: &Tensor) -> Vec<Tensor> {
        let alpha = tape.value(self.alpha).item();
        let gi = ComplexImage::from_channels(g).expect("gradient is 2xHxW");
        let dx = consistency_propagate(&gi, alpha, self.op.as_ref())
            .expect("operator dims checked on forward")
            .to_channels();
        let da = g.dot(&self.adj_residual).expect("same shape") as f32;
        vec![dx, Tensor::scalar(da)]
    }
}

/// Differentiable [`gradient_step`]: `x` is a `2 x H x W` node and `alpha` a scalar node.
pub fn gradient_step_on_tape(
    tape: &mut Tape,
    x: Var,
    alpha: Var,
    y: &ComplexImage,
    op: &Arc<dyn LinearOperator>,
) -> Result<Var> {
    let xi = ComplexImage::from_channels(tape.value(x))?;
    let a = tape.value(alpha).item();
    let adj = op.adjoint(&measurement_residual(op.as_ref(), &xi, y)?)?;
    let out = adj.axpy(a, &xi)?.to_channels();
    let f = GradStepFn {
        x,
        alpha,
        op: Arc::clone(op),
        adj_residual: adj.to_channels(),
    };
    Ok(tape.custom(out, Arc::new(f)))
}

struct ResidualSqFn {
    x: Var,
    adj_residual: Tensor,
}

impl Function for ResidualSqFn {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn vjp(&self, _tape: &Tape, _output: &Tensor, g: &Tensor) -> Vec<Tensor> {
        vec![self.adj_residual.scale(-2.0 * g.item())]
    }
}

/// Differentiable `||y - apply(x)||^2`.
pub fn residual_sq_on_tape(tape: &mut Tape, x: Var, y: &ComplexImage, op: &Arc<dyn LinearOperator>) -> Result<Var> {
    let xi = ComplexImage::from_channels(tape.value(x))?;
    let r = measurement_residual(op.as_ref(), &xi, y)?;
    let value = r.norm_sq() as f32;
    let f = ResidualSqFn {
        x,
        adj_residual: op.adjoint(&r)?.to_channels(),
    };
    Ok(tape.custom(Tensor::scalar(value), Arc::new(f)))
}
