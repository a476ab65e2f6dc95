//! Unitary radix-2 two-dimensional FFT.
//!
//! Both directions scale by `1/sqrt(H*W)`, so the transform is an isometry
//! and a binary k-space mask composed with it has operator norm at most one.

use crate::complex::ComplexImage;
use crate::error::{NpgdError, Result};
use crate::tensor::Tensor;

fn check_pow2(axis: &'static str, n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(NpgdError::Dimension {
            axis,
            size: n,
            requirement: "must be a power of two",
        });
    }
    Ok(())
}

/// In-place iterative Cooley-Tukey on split real/imaginary buffers.
fn fft1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        for k in 0..half {
            let (ws, wc) = (ang * k as f64).sin_cos();
            let mut start = 0;
            while start < n {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wc - im[b] * ws;
                let ti = re[b] * ws + im[b] * wc;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                start += len;
            }
        }
        len <<= 1;
    }
}

fn transform(img: &ComplexImage, inverse: bool) -> Result<ComplexImage> {
    let (h, w) = img.dims();
    check_pow2("height", h)?;
    check_pow2("width", w)?;
    let mut re: Vec<f64> = img.re().data().iter().map(|&v| v as f64).collect();
    let mut im: Vec<f64> = img.im().data().iter().map(|&v| v as f64).collect();
    for r in 0..h {
        let s = r * w..(r + 1) * w;
        fft1d(&mut re[s.clone()], &mut im[s], inverse);
    }
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            cr[r] = re[r * w + c];
            ci[r] = im[r * w + c];
        }
        fft1d(&mut cr, &mut ci, inverse);
        for r in 0..h {
            re[r * w + c] = cr[r];
            im[r * w + c] = ci[r];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let re = re.into_iter().map(|v| (v * scale) as f32).collect();
    let im = im.into_iter().map(|v| (v * scale) as f32).collect();
    ComplexImage::new(Tensor::new(&[h, w], re)?, Tensor::new(&[h, w], im)?)
}

pub fn fft2(img: &ComplexImage) -> Result<ComplexImage> {
    transform(img, false)
}

pub fn ifft2(img: &ComplexImage) -> Result<ComplexImage> {
    transform(img, true)
}
