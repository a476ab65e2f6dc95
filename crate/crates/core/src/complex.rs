//! Complex-valued images stored as separate real and imaginary planes.

use crate::error::{shape_err, Result};
use crate::rng::XorShift64Star;
use crate::tensor::{dot_slices, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    re: Tensor,
    im: Tensor,
}

impl ComplexImage {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape().len() != 2 {
            return shape_err(format!("complex planes must be 2-D, got {:?}", re.shape()));
        }
        re.check_same_shape(&im)?;
        Ok(Self { re, im })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            re: Tensor::zeros(&[height, width]),
            im: Tensor::zeros(&[height, width]),
        }
    }

    pub fn from_real(re: Tensor) -> Result<Self> {
        let im = Tensor::zeros(re.shape());
        Self::new(re, im)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f32, f32)) -> Self {
        let mut re = Vec::with_capacity(height * width);
        let mut im = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                let (a, b) = f(i, j);
                re.push(a);
                im.push(b);
            }
        }
        Self {
            re: Tensor::new(&[height, width], re).expect("consistent"),
            im: Tensor::new(&[height, width], im).expect("consistent"),
        }
    }

    /// Entries drawn i.i.d. from a standard normal.
    pub fn random(height: usize, width: usize, rng: &mut XorShift64Star) -> Self {
        let n = height * width;
        let re = (0..n).map(|_| rng.normal() as f32).collect();
        let im = (0..n).map(|_| rng.normal() as f32).collect();
        Self {
            re: Tensor::new(&[height, width], re).expect("consistent"),
            im: Tensor::new(&[height, width], im).expect("consistent"),
        }
    }

    pub fn height(&self) -> usize {
        self.re.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.re.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn re(&self) -> &Tensor {
        &self.re
    }

    pub fn im(&self) -> &Tensor {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f32] {
        self.re.data_mut()
    }

    pub fn im_mut(&mut self) -> &mut [f32] {
        self.im.data_mut()
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.dims() != (height, width) {
            return shape_err(format!(
                "expected {height}x{width} image, got {}x{}",
                self.height(),
                self.width()
            ));
        }
        Ok(())
    }

    pub fn check_same_dims(&self, other: &ComplexImage) -> Result<()> {
        other.check_dims(self.height(), self.width())
    }

    /// Real inner product on the stacked (re, im) vector.
    pub fn dot(&self, other: &ComplexImage) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(dot_slices(self.re.data(), other.re.data()) + dot_slices(self.im.data(), other.im.data()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.re.sum_squares() + self.im.sum_squares()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: f32, other: &ComplexImage) -> Result<ComplexImage> {
        Ok(Self {
            re: self.re.axpy(alpha, &other.re)?,
            im: self.im.axpy(alpha, &other.im)?,
        })
    }

    pub fn add(&self, other: &ComplexImage) -> Result<ComplexImage> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ComplexImage) -> Result<ComplexImage> {
        Ok(Self {
            re: self.re.sub(&other.re)?,
            im: self.im.sub(&other.im)?,
        })
    }

    pub fn scale(&self, s: f32) -> ComplexImage {
        Self {
            re: self.re.scale(s),
            im: self.im.scale(s),
        }
    }

    pub fn magnitude(&self) -> Tensor {
        self.re
            .zip_map(&self.im, |a, b| (a * a + b * b).sqrt())
            .expect("planes share a shape")
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn max_abs_diff(&self, other: &ComplexImage) -> f32 {
        self.re
            .max_abs_diff(&other.re)
            .max(self.im.max_abs_diff(&other.im))
    }

    /// Pack as a `2 x H x W` tensor (channel 0 real, channel 1 imaginary).
    pub fn to_channels(&self) -> Tensor {
        let mut data = Vec::with_capacity(2 * self.re.len());
        data.extend_from_slice(self.re.data());
        data.extend_from_slice(self.im.data());
        Tensor::new(&[2, self.height(), self.width()], data).expect("consistent")
    }

    pub fn from_channels(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 2 {
            return shape_err(format!("expected 2xHxW tensor, got {s:?}"));
        }
        let n = s[1] * s[2];
        let re = Tensor::new(&[s[1], s[2]], t.data()[..n].to_vec())?;
        let im = Tensor::new(&[s[1], s[2]], t.data()[n..].to_vec())?;
        Ok(Self { re, im })
    }
}
