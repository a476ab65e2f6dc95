//! Wavelet-sparsity compressed sensing: orthonormal Haar, soft thresholding,
//! ISTA and FISTA.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::complex::ComplexImage;
use crate::error::{NpgdError, Result};
use crate::metrics::snr_db;
use crate::ops::{gradient_step, operator_norm_sq, LinearOperator};
use crate::parallel::{try_par_map, Execution};
use crate::tensor::Tensor;
use crate::unroll::Sample;

const SQRT_HALF: f32 = std::f32::consts::FRAC_1_SQRT_2;

fn check_levels(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(NpgdError::Parameter("haar levels must be at least 1".into()));
    }
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    for (axis, n) in [("height", h), ("width", w)] {
        if block == 0 || n % block != 0 {
            return Err(NpgdError::Dimension {
                axis,
                size: n,
                requirement: "must be divisible by 2^levels",
            });
        }
    }
    Ok(())
}

/// One analysis step along `n` strided samples: averages first, details second.
fn analyze(buf: &mut [f32], tmp: &mut [f32], start: usize, stride: usize, n: usize) {
    let half = n / 2;
    for k in 0..half {
        let a = buf[start + 2 * k * stride];
        let b = buf[start + (2 * k + 1) * stride];
        tmp[k] = (a + b) * SQRT_HALF;
        tmp[half + k] = (a - b) * SQRT_HALF;
    }
    for k in 0..n {
        buf[start + k * stride] = tmp[k];
    }
}

fn synthesize(buf: &mut [f32], tmp: &mut [f32], start: usize, stride: usize, n: usize) {
    let half = n / 2;
    for k in 0..half {
        let s = buf[start + k * stride];
        let d = buf[start + (half + k) * stride];
        tmp[2 * k] = (s + d) * SQRT_HALF;
        tmp[2 * k + 1] = (s - d) * SQRT_HALF;
    }
    for k in 0..n {
        buf[start + k * stride] = tmp[k];
    }
}

fn haar_real(data: &mut [f32], h: usize, w: usize, levels: usize, inverse: bool) {
    let mut tmp = vec![0.0; h.max(w)];
    let order: Vec<usize> = if inverse { (0..levels).rev().collect() } else { (0..levels).collect() };
    for l in order {
        let (bh, bw) = (h >> l, w >> l);
        if inverse {
            for j in 0..bw {
                synthesize(data, &mut tmp, j, w, bh);
            }
            for i in 0..bh {
                synthesize(data, &mut tmp, i * w, 1, bw);
            }
        } else {
            for i in 0..bh {
                analyze(data, &mut tmp, i * w, 1, bw);
            }
            for j in 0..bw {
                analyze(data, &mut tmp, j, w, bh);
            }
        }
    }
}

fn haar_complex(x: &ComplexImage, levels: usize, inverse: bool) -> Result<ComplexImage> {
    let (h, w) = x.dims();
    check_levels(h, w, levels)?;
    let mut out = x.clone();
    haar_real(out.re_mut(), h, w, levels, inverse);
    haar_real(out.im_mut(), h, w, levels, inverse);
    Ok(out)
}

/// Multi-level separable orthonormal Haar analysis (Mallat layout), applied
/// to the real and imaginary parts independently.
pub fn haar2_forward(x: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    haar_complex(x, levels, false)
}

pub fn haar2_inverse(c: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    haar_complex(c, levels, true)
}

/// `sign(v) * max(|v| - lambda, 0)` elementwise.
pub fn soft_threshold(v: &Tensor, lambda: f32) -> Tensor {
    v.map(|x| x.signum() * (x.abs() - lambda).max(0.0))
}

/// Magnitude shrinkage of complex coefficients: `c * max(1 - lambda/|c|, 0)`.
pub fn soft_threshold_complex(c: &ComplexImage, lambda: f32) -> ComplexImage {
    let mut out = c.clone();
    let (h, w) = c.dims();
    for i in 0..h * w {
        let (re, im) = (c.re().data()[i] as f64, c.im().data()[i] as f64);
        let mag = re.hypot(im);
        let k = if mag > lambda as f64 { 1.0 - lambda as f64 / mag } else { 0.0 };
        out.re_mut()[i] = (re * k) as f32;
        out.im_mut()[i] = (im * k) as f32;
    }
    out
}

fn l1_complex(c: &ComplexImage) -> f64 {
    c.re()
        .data()
        .iter()
        .zip(c.im().data())
        .map(|(&a, &b)| (a as f64).hypot(b as f64))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Ista,
    Fista,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Ista => "ista",
            Solver::Fista => "fista",
        })
    }
}

impl FromStr for Solver {
    type Err = NpgdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ista" => Ok(Solver::Ista),
            "fista" => Ok(Solver::Fista),
            other => Err(NpgdError::Config(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsConfig {
    pub lambda: f32,
    pub iterations: usize,
    pub solver: Solver,
    pub levels: usize,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            iterations: 300,
            solver: Solver::Fista,
            levels: 3,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(NpgdError::Config(format!("cs.lambda must be positive, got {}", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(NpgdError::Config("cs.iterations must be at least 1".into()));
        }
        if self.levels == 0 {
            return Err(NpgdError::Config("cs.levels must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveRow {
    pub iter: usize,
    pub objective: f64,
    pub data_term: f64,
    pub l1_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsResult {
    pub image: ComplexImage,
    /// Row 0 is the starting point `x = 0`.
    pub trace: Vec<ObjectiveRow>,
    pub step_size: f32,
}

pub const OBJECTIVE_HEADER: &str = "iter,objective,data_term,l1_term";

pub fn write_objective_csv(rows: &[ObjectiveRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{OBJECTIVE_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.objective, r.data_term, r.l1_term)?;
    }
    Ok(())
}

/// `1` when `||A||^2 <= 1` (checked by power iteration), otherwise `1 / ||A||^2`.
pub fn safe_step_size(op: &dyn LinearOperator) -> Result<f32> {
    let l = operator_norm_sq(op, 50, 0x5354_4550)?;
    Ok(if l <= 1.0 + 1e-6 { 1.0 } else { (1.0 / l) as f32 })
}

fn objective(op: &dyn LinearOperator, y: &ComplexImage, x: &ComplexImage, lambda: f32, levels: usize, iter: usize) -> Result<ObjectiveRow> {
    let data_term = 0.5 * y.sub(&op.apply(x)?)?.norm_sq();
    let l1_term = lambda as f64 * l1_complex(&haar2_forward(x, levels)?);
    Ok(ObjectiveRow {
        iter,
        objective: data_term + l1_term,
        data_term,
        l1_term,
    })
}

/// FISTA momentum sequence `t_0 = 1, t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2`.
pub fn fista_momentum(n: usize) -> Vec<f64> {
    let mut t = vec![1.0];
    for k in 0..n {
        let tk: f64 = t[k];
        t.push((1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0);
    }
    t
}

/// Solve `min 0.5 ||y - A x||^2 + lambda ||W x||_1` from `x = 0`.
pub fn solve(y: &ComplexImage, op: &dyn LinearOperator, cfg: &CsConfig) -> Result<CsResult> {
    cfg.validate()?;
    let alpha = safe_step_size(op)?;
    solve_with_step(y, op, cfg, alpha)
}

pub fn ista(y: &ComplexImage, op: &dyn LinearOperator, cfg: &CsConfig) -> Result<CsResult> {
    solve(y, op, &CsConfig { solver: Solver::Ista, ..cfg.clone() })
}

pub fn fista(y: &ComplexImage, op: &dyn LinearOperator, cfg: &CsConfig) -> Result<CsResult> {
    solve(y, op, &CsConfig { solver: Solver::Fista, ..cfg.clone() })
}

pub fn solve_with_step(y: &ComplexImage, op: &dyn LinearOperator, cfg: &CsConfig, alpha: f32) -> Result<CsResult> {
    cfg.validate()?;
    let (h, w) = op.input_dims();
    y.check_dims(op.output_dims().0, op.output_dims().1)?;
    check_levels(h, w, cfg.levels)?;
    let prox = |v: &ComplexImage| -> Result<ComplexImage> {
        let c = haar2_forward(v, cfg.levels)?;
        haar2_inverse(&soft_threshold_complex(&c, alpha * cfg.lambda), cfg.levels)
    };

    let mut x = ComplexImage::zeros(h, w);
    let mut prev = x.clone();
    let mut z = x.clone();
    let mut t = 1.0f64;
    let first = objective(op, y, &x, cfg.lambda, cfg.levels, 0)?;
    let limit = 10.0 * first.objective.max(f64::MIN_POSITIVE);
    let mut trace = vec![first];
    for k in 1..=cfg.iterations {
        let base = match cfg.solver {
            Solver::Ista => &x,
            Solver::Fista => &z,
        };
        let next = prox(&gradient_step(base, y, alpha, op)?)?;
        let row = objective(op, y, &next, cfg.lambda, cfg.levels, k)?;
        if !row.objective.is_finite() || row.objective > limit {
            return Err(NpgdError::Solver(format!(
                "{} diverged at iteration {k}: objective {:e} vs initial {:e}",
                cfg.solver, row.objective, first.objective
            )));
        }
        trace.push(row);
        prev = std::mem::replace(&mut x, next);
        if cfg.solver == Solver::Fista {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = ((t - 1.0) / t_next) as f32;
            z = x.sub(&prev)?.axpy(beta, &x)?;
            t = t_next;
        }
    }
    drop(prev);
    Ok(CsResult {
        image: x,
        trace,
        step_size: alpha,
    })
}

/// `n` log-spaced thresholds in `[1e-4, 1e-1] * peak`.
pub fn default_lambda_grid(peak: f32, n: usize) -> Vec<f32> {
    let (lo, hi) = (1e-4f64.ln(), 1e-1f64.ln());
    (0..n)
        .map(|i| {
            let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            (peak as f64 * (lo + f * (hi - lo)).exp()) as f32
        })
        .collect()
}

/// Largest wavelet-coefficient magnitude of the zero-filled images.
pub fn peak_coefficient(samples: &[Sample], levels: usize) -> Result<f32> {
    let mut peak = 0.0f32;
    for s in samples {
        let c = haar2_forward(&s.op.adjoint(&s.measurement)?, levels)?;
        for (a, b) in c.re().data().iter().zip(c.im().data()) {
            peak = peak.max(a.hypot(*b));
        }
    }
    Ok(peak)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaTuning {
    pub best_lambda: f32,
    /// `(lambda, mean SNR)` in ascending lambda order.
    pub table: Vec<(f32, f64)>,
}

/// Exhaustive grid search for the threshold with the best mean SNR; ties
/// resolve to the smaller threshold.
pub fn tune_lambda(samples: &[Sample], grid: &[f32], cfg: &CsConfig, exec: Execution) -> Result<LambdaTuning> {
    if samples.is_empty() {
        return Err(NpgdError::EmptyDataset("validation set has no samples".into()));
    }
    let mut grid: Vec<f32> = grid.to_vec();
    if grid.is_empty() {
        return Err(NpgdError::Config("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(NpgdError::Config("lambda grid values must be positive".into()));
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let table = try_par_map(exec, &grid, |_, &lambda| -> Result<(f32, f64)> {
        let c = CsConfig { lambda, ..cfg.clone() };
        let mut total = 0.0;
        for s in samples {
            let r = solve(&s.measurement, s.op.as_ref(), &c)?;
            total += snr_db(&r.image, &s.truth)?;
        }
        Ok((lambda, total / samples.len() as f64))
    })?;
    let mut best = table[0];
    for &(l, snr) in &table[1..] {
        if snr > best.1 {
            best = (l, snr);
        }
    }
    Ok(LambdaTuning {
        best_lambda: best.0,
        table,
    })
}
