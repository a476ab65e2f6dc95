//! Error dynamics of the unrolled iteration around a ground-truth image.
//!
//! With `G = I - alpha Phi^H Phi`, `delta = x_t - x*`, `u = x* + G delta` and
//! noiseless `y = Phi x*`, the next iterate is `x_{t+1} = F_t(u)` where `F_t` is the net with
//! its gates frozen at the proximal input. Writing `F_*` for the net frozen at
//! `x*` and `L_*` for its linear part,
//!
//! ```text
//! x_{t+1} - x* = L_*(G delta) + (F_t(u) - F_*(u)) + xi,    xi = P(x*) - x*
//! ```
//!
//! which is exact because `F_*(u) = F_*(x*) + L_*(u - x*)` and `F_*(x*) = P(x*)`.

use std::io::Write;

use crate::complex::ComplexImage;
use crate::error::{NpgdError, Result};
use crate::metrics::nrmse;
use crate::ops::{consistency_propagate, gradient_step, LinearOperator};
use crate::parallel::{try_par_map, Execution};
use crate::prox::{MaskSnapshot, Normalization, ProximalNet};
use crate::unroll::{unrolled_forward, Sample, Trajectory};

/// Relative tolerance used to decide whether `y` is noiseless.
const CONSISTENCY_TOL: f64 = 1e-4;

/// The net with every gate replaced by a stored mask.
#[derive(Clone, Debug)]
pub struct FrozenAffineMap<'a> {
    pub net: &'a ProximalNet,
    pub masks: MaskSnapshot,
}

impl<'a> FrozenAffineMap<'a> {
    /// Freeze the gates at the pre-activations produced by `x`.
    pub fn capture(net: &'a ProximalNet, x: &ComplexImage) -> Result<Self> {
        require_affine(net)?;
        Ok(Self {
            net,
            masks: net.capture_masks(x)?,
        })
    }

    pub fn apply(&self, u: &ComplexImage) -> Result<ComplexImage> {
        self.net.forward_frozen(&self.masks, u)
    }

    /// Linear part `apply(u) - apply(0)`.
    pub fn linear(&self, u: &ComplexImage) -> Result<ComplexImage> {
        self.net.forward_frozen_linear(&self.masks, u)
    }
}

pub fn require_affine(net: &ProximalNet) -> Result<()> {
    if net.config().normalization != Normalization::None {
        return Err(NpgdError::Unsupported(format!(
            "contraction analysis needs normalization = none, net uses {}",
            net.config().normalization
        )));
    }
    Ok(())
}

pub fn frozen_apply(net: &ProximalNet, masks: &MaskSnapshot, u: &ComplexImage) -> Result<ComplexImage> {
    net.forward_frozen(masks, u)
}

fn ratio(num: f64, delta: &ComplexImage) -> Result<f64> {
    let d = delta.norm();
    if d == 0.0 {
        return Err(NpgdError::UndefinedRatio("perturbation delta is zero".into()));
    }
    Ok(num / d)
}

/// `||L_* (I - alpha Phi^H Phi) delta|| / ||delta||`.
pub fn eta1(
    net: &ProximalNet,
    masks_star: &MaskSnapshot,
    op: &dyn LinearOperator,
    alpha: f32,
    delta: &ComplexImage,
) -> Result<f64> {
    let ad = consistency_propagate(delta, alpha, op)?;
    let v = net.forward_frozen_linear(masks_star, &ad)?;
    ratio(v.norm(), delta)
}

/// `||F_t(u) - F_*(u)|| / ||delta||` with `u = x* + (I - alpha Phi^H Phi) delta`.
#[allow(clippy::too_many_arguments)]
pub fn eta2(
    net: &ProximalNet,
    masks_star: &MaskSnapshot,
    masks_t: &MaskSnapshot,
    op: &dyn LinearOperator,
    alpha: f32,
    delta: &ComplexImage,
    x_star: &ComplexImage,
) -> Result<f64> {
    let u = x_star.add(&consistency_propagate(delta, alpha, op)?)?;
    let d = net.forward_frozen(masks_t, &u)?.sub(&net.forward_frozen(masks_star, &u)?)?;
    ratio(d.norm(), delta)
}

/// Representation error `P(x*) - x*`.
pub fn xi(net: &ProximalNet, x_star: &ComplexImage) -> Result<ComplexImage> {
    net.forward(x_star)?.sub(x_star)
}

pub fn xi_norm(net: &ProximalNet, x_star: &ComplexImage) -> Result<f64> {
    Ok(xi(net, x_star)?.norm())
}

/// Everything measured on one step `x_t -> x_{t+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAnalysis {
    pub x_next: ComplexImage,
    pub delta_norm: f64,
    /// `||x_{t+1} - x*||`.
    pub next_error: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub xi_norm: f64,
    /// `||(x_{t+1} - x*) - (L_* G delta + (F_t - F_*)(u) + xi)||`.
    pub residual: f64,
    pub slack: f64,
}

/// `(eta1 + eta2) ||delta|| + eps - ||x_{t+1} - x*||`.
pub fn bound_slack(eta1: f64, eta2: f64, delta_norm: f64, eps: f64, next_error: f64) -> f64 {
    (eta1 + eta2) * delta_norm + eps - next_error
}

fn check_noiseless(op: &dyn LinearOperator, x_star: &ComplexImage, y: &ComplexImage) -> Result<()> {
    let r = y.sub(&op.apply(x_star)?)?.norm();
    if r > CONSISTENCY_TOL * y.norm().max(f64::MIN_POSITIVE) {
        return Err(NpgdError::Contract(format!(
            "decomposition needs noiseless measurements, ||y - Phi x*|| = {r:e}"
        )));
    }
    Ok(())
}

struct Reference<'a> {
    masks_star: MaskSnapshot,
    xi: ComplexImage,
    x_star: &'a ComplexImage,
}

impl<'a> Reference<'a> {
    fn new(net: &ProximalNet, x_star: &'a ComplexImage) -> Result<Self> {
        require_affine(net)?;
        Ok(Self {
            masks_star: net.capture_masks(x_star)?,
            xi: xi(net, x_star)?,
            x_star,
        })
    }
}

fn analyze_step(
    net: &ProximalNet,
    reference: &Reference<'_>,
    op: &dyn LinearOperator,
    alpha: f32,
    x_t: &ComplexImage,
    y: &ComplexImage,
) -> Result<StepAnalysis> {
    let x_star = reference.x_star;
    let s = gradient_step(x_t, y, alpha, op)?;
    let masks_t = net.capture_masks(&s)?;
    let x_next = net.forward(&s)?;

    let delta = x_t.sub(x_star)?;
    let ad = consistency_propagate(&delta, alpha, op)?;
    let u = x_star.add(&ad)?;
    let lin = net.forward_frozen_linear(&reference.masks_star, &ad)?;
    let pert = net
        .forward_frozen(&masks_t, &u)?
        .sub(&net.forward_frozen(&reference.masks_star, &u)?)?;
    let rhs = lin.add(&pert)?.add(&reference.xi)?;
    let err_next = x_next.sub(x_star)?;
    let residual = err_next.sub(&rhs)?.norm();

    let delta_norm = delta.norm();
    let (eta1, eta2) = if delta_norm > 0.0 {
        (lin.norm() / delta_norm, pert.norm() / delta_norm)
    } else {
        (0.0, 0.0)
    };
    let xi_norm = reference.xi.norm();
    let next_error = err_next.norm();
    Ok(StepAnalysis {
        slack: bound_slack(eta1, eta2, delta_norm, xi_norm, next_error),
        x_next,
        delta_norm,
        next_error,
        eta1,
        eta2,
        xi_norm,
        residual,
    })
}

/// Check the error decomposition on the step from `x_t`.
pub fn decomposition_check(
    net: &ProximalNet,
    op: &dyn LinearOperator,
    alpha: f32,
    x_t: &ComplexImage,
    x_star: &ComplexImage,
    y: &ComplexImage,
) -> Result<StepAnalysis> {
    check_noiseless(op, x_star, y)?;
    let reference = Reference::new(net, x_star)?;
    analyze_step(net, &reference, op, alpha, x_t, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DebiasOutcome {
    Converged,
    /// Iteration budget exhausted before the update fell below tolerance.
    NotConverged,
    /// The iterate grew 100x; `x_T` is returned unchanged.
    NonContractive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Debiased {
    pub image: ComplexImage,
    pub outcome: DebiasOutcome,
    pub iterations: usize,
}

/// Fixed-point iteration `x <- F(g(x; y))` of the affine map `F` given by
/// the frozen gates `masks_t`, started from `x_T`.
#[allow(clippy::too_many_arguments)]
pub fn debias(
    net: &ProximalNet,
    masks_t: &MaskSnapshot,
    op: &dyn LinearOperator,
    alpha: f32,
    y: &ComplexImage,
    x_t: &ComplexImage,
    max_iters: usize,
    tol: f64,
) -> Result<Debiased> {
    require_affine(net)?;
    let start = x_t.norm();
    let mut x = x_t.clone();
    for it in 1..=max_iters {
        let next = net.forward_frozen(masks_t, &gradient_step(&x, y, alpha, op)?)?;
        let step = next.sub(&x)?.norm();
        let norm = next.norm();
        if !norm.is_finite() || norm > 100.0 * start.max(f64::MIN_POSITIVE) {
            return Ok(Debiased {
                image: x_t.clone(),
                outcome: DebiasOutcome::NonContractive,
                iterations: it,
            });
        }
        x = next;
        if step <= tol * norm {
            return Ok(Debiased {
                image: x,
                outcome: DebiasOutcome::Converged,
                iterations: it,
            });
        }
    }
    Ok(Debiased {
        image: x,
        outcome: DebiasOutcome::NotConverged,
        iterations: max_iters,
    })
}

/// Freeze the gates of the last proximal step (input `s_T`, output `x_T`)
/// and run [`debias`] from `x_T`.
pub fn debias_final(
    net: &ProximalNet,
    op: &dyn LinearOperator,
    alpha: f32,
    y: &ComplexImage,
    traj: &Trajectory,
    max_iters: usize,
    tol: f64,
) -> Result<Debiased> {
    require_affine(net)?;
    let (Some(s_t), Some(x_t)) = (traj.s.last(), traj.x.last()) else {
        return Err(NpgdError::Contract("debias needs a non-empty trajectory".into()));
    };
    let masks = net.capture_masks(s_t)?;
    debias(net, &masks, op, alpha, y, x_t, max_iters, tol)
}

/// Row `t` describes the step that produced `x_t` from `x_{t-1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionRow {
    pub t: usize,
    pub nrmse: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub xi_norm: f64,
    pub decomp_residual: f64,
    pub bound_slack: f64,
    /// `||x_{t-1} - x*||`, the norm the bound is scaled by.
    pub delta_norm: f64,
    /// `||x_t - x*||`.
    pub error_norm: f64,
}

/// Per-step diagnostics of the `T`-step trajectory for noiseless `y = Phi x*`.
pub fn analyze_trajectory(
    net: &ProximalNet,
    alpha: f32,
    iterations: usize,
    op: &dyn LinearOperator,
    x_star: &ComplexImage,
) -> Result<Vec<ContractionRow>> {
    let reference = Reference::new(net, x_star)?;
    let y = op.apply(x_star)?;
    let (h, w) = op.input_dims();
    let mut x = ComplexImage::zeros(h, w);
    let mut rows = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        let step = analyze_step(net, &reference, op, alpha, &x, &y)?;
        rows.push(ContractionRow {
            t,
            nrmse: nrmse(&step.x_next, x_star)?,
            eta1: step.eta1,
            eta2: step.eta2,
            xi_norm: step.xi_norm,
            decomp_residual: step.residual,
            bound_slack: step.slack,
            delta_norm: step.delta_norm,
            error_norm: step.next_error,
        });
        x = step.x_next;
    }
    debug_assert_eq!(
        &x,
        unrolled_forward(net, op, &y, alpha, iterations)?.final_image()
    );
    Ok(rows)
}

pub fn analyze_samples(
    net: &ProximalNet,
    alpha: f32,
    iterations: usize,
    samples: &[Sample],
    exec: Execution,
) -> Result<Vec<Vec<ContractionRow>>> {
    require_affine(net)?;
    try_par_map(exec, samples, |_, s| {
        analyze_trajectory(net, alpha, iterations, s.op.as_ref(), &s.truth)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub nrmse_mean: f64,
    pub nrmse_std: f64,
    pub eta1_mean: f64,
    pub eta1_std: f64,
    pub eta2_mean: f64,
    pub eta2_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation across samples for every `t`.
pub fn aggregate(traces: &[Vec<ContractionRow>]) -> Result<Vec<AggregateRow>> {
    let first = traces
        .first()
        .ok_or_else(|| NpgdError::EmptyDataset("no traces to aggregate".into()))?;
    if traces.iter().any(|t| t.len() != first.len()) {
        return Err(NpgdError::Contract("traces have different lengths".into()));
    }
    Ok((0..first.len())
        .map(|i| {
            let col = |f: fn(&ContractionRow) -> f64| traces.iter().map(|t| f(&t[i])).collect::<Vec<_>>();
            let (nrmse_mean, nrmse_std) = mean_std(&col(|r| r.nrmse));
            let (eta1_mean, eta1_std) = mean_std(&col(|r| r.eta1));
            let (eta2_mean, eta2_std) = mean_std(&col(|r| r.eta2));
            AggregateRow {
                t: first[i].t,
                nrmse_mean,
                nrmse_std,
                eta1_mean,
                eta1_std,
                eta2_mean,
                eta2_std,
            }
        })
        .collect())
}

pub const TRACE_HEADER: &str = "t,nrmse,eta1,eta2,xi_norm,decomp_residual,bound_slack";
pub const AGGREGATE_HEADER: &str = "t,nrmse_mean,nrmse_std,eta1_mean,eta1_std,eta2_mean,eta2_std";

pub fn write_trace_csv(rows: &[ContractionRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.t, r.nrmse, r.eta1, r.eta2, r.xi_norm, r.decomp_residual, r.bound_slack
        )?;
    }
    Ok(())
}

pub fn write_aggregate_csv(rows: &[AggregateRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.t, r.nrmse_mean, r.nrmse_std, r.eta1_mean, r.eta1_std, r.eta2_mean, r.eta2_std
        )?;
    }
    Ok(())
}
