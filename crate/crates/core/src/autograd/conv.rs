//! im2col convolution kernels backed by `matrixmultiply::sgemm`.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Option<Self> {
        if input.len() != 3 || kernel.len() != 4 || kernel[1] != input[0] || kernel[2] != kernel[3] {
            return None;
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, k) = (kernel[0], kernel[2]);
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Row-major `c = a * b + beta * c` with optional transposes of the stored operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the (m, k, n) extents checked above and the
    // strides address only elements inside those slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output columns `ox` whose input column `ox * stride + kj - pad` lies inside the row.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    if g.w + g.pad <= kj {
        return (0, 0);
    }
    let hi = ((g.w - 1 + g.pad - kj) / g.stride + 1).min(g.w_out);
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, input: &[f32]) -> Vec<f32> {
    let cols = g.col_cols();
    let mut col = vec![0.0f32; g.col_rows() * cols];
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let (lo, hi) = valid_cols(g, kj);
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.w_out + lo..oy * g.w_out + hi];
                    let start = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out.copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (i, o) in out.iter_mut().enumerate() {
                            *o = src[start + i * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    col
}

fn col2im(g: &ConvGeom, col: &[f32]) -> Vec<f32> {
    let cols = g.col_cols();
    let mut out = vec![0.0f32; g.c_in * g.h * g.w];
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let (lo, hi) = valid_cols(g, kj);
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let start = lo * g.stride + kj - g.pad;
                    let s = &src[oy * g.w_out + lo..oy * g.w_out + hi];
                    for (i, v) in s.iter().enumerate() {
                        dst[start + i * g.stride] += v;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

pub(crate) fn conv_forward(g: &ConvGeom, input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let n = g.col_cols();
    let mut out = vec![0.0f32; g.c_out * n];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(n).enumerate() {
            chunk.fill(b.data()[co]);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    if g.is_pointwise() {
        gemm(g.c_out, g.c_in, n, kernel.data(), false, input.data(), false, beta, &mut out);
    } else {
        let col = im2col(g, input.data());
        gemm(g.c_out, g.col_rows(), n, kernel.data(), false, &col, false, beta, &mut out);
    }
    Tensor::new(&[g.c_out, g.h_out, g.w_out], out).expect("conv output shape")
}

pub(crate) struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv_backward(g: &ConvGeom, input: &Tensor, kernel: &Tensor, grad_out: &Tensor) -> ConvGrads {
    let n = g.col_cols();
    let kk = g.col_rows();
    let go = grad_out.data();
    let bias: Vec<f32> = go
        .chunks(n)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32)
        .collect();
    let mut dk = vec![0.0f32; g.c_out * kk];
    let input_grad = if g.is_pointwise() {
        gemm(g.c_out, n, kk, go, false, input.data(), true, 0.0, &mut dk);
        let mut dx = vec![0.0f32; kk * n];
        gemm(kk, g.c_out, n, kernel.data(), true, go, false, 0.0, &mut dx);
        dx
    } else {
        let col = im2col(g, input.data());
        gemm(g.c_out, n, kk, go, false, &col, true, 0.0, &mut dk);
        let mut dcol = vec![0.0f32; kk * n];
        gemm(kk, g.c_out, n, kernel.data(), true, go, false, 0.0, &mut dcol);
        col2im(g, &dcol)
    };
    ConvGrads {
        input: Tensor::new(input.shape(), input_grad).expect("input grad shape"),
        kernel: Tensor::new(kernel.shape(), dk).expect("kernel grad shape"),
        bias: Tensor::from_vec(bias),
    }
}
