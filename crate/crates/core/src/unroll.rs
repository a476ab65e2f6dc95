//! Unrolled proximal gradient iterations and their end-to-end training.
//!
//! ```text
//! x_0 = 0,  s_{t+1} = x_t + alpha * A^H (y - A x_t),  x_{t+1} = P(s_{t+1})
//! loss = beta * l(x*, x_T) + (1 - beta) * sum_t ||y - A x_t||^2
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use crate::autograd::{Gradients, Tape, Var};
use crate::complex::ComplexImage;
use crate::error::{NpgdError, Result};
use crate::ops::{gradient_step, gradient_step_on_tape, residual_sq_on_tape, LinearOperator};
use crate::parallel::{try_par_map, Execution};
use crate::prox::{Checkpoint, Gating, OptimizerState, ProximalNet};
use crate::rng::XorShift64Star;
use crate::tensor::Tensor;

/// Lower bound applied to the step size after every optimizer update.
pub const ALPHA_FLOOR: f32 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L2,
    /// Smoothed `sum sqrt(e^2 + 1e-8)`.
    L1,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
        })
    }
}

impl FromStr for LossKind {
    type Err = NpgdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "l1" => Ok(LossKind::L1),
            other => Err(NpgdError::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnrollConfig {
    pub iterations: usize,
    pub alpha_init: f32,
    pub beta: f32,
    pub loss: LossKind,
}

impl Default for UnrollConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            alpha_init: 1.0,
            beta: 0.75,
            loss: LossKind::L2,
        }
    }
}

impl UnrollConfig {
    pub fn new(iterations: usize, alpha_init: f32) -> Self {
        Self {
            iterations,
            alpha_init,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(NpgdError::Config("unroll.iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(NpgdError::Config(format!("unroll.beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.alpha_init > 0.0) || !self.alpha_init.is_finite() {
            return Err(NpgdError::Config(format!("unroll.alpha must be positive, got {}", self.alpha_init)));
        }
        Ok(())
    }

    pub fn to_entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("unroll.iterations".into(), self.iterations.to_string());
        m.insert("unroll.alpha".into(), self.alpha_init.to_string());
        m.insert("unroll.beta".into(), self.beta.to_string());
        m.insert("unroll.loss".into(), self.loss.to_string());
        m
    }

    pub fn from_entries(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| m.get(k).ok_or_else(|| NpgdError::Config(format!("missing key {k}")));
        let bad = |k: &str| NpgdError::Config(format!("{k} has an invalid value"));
        let cfg = Self {
            iterations: get("unroll.iterations")?.parse().map_err(|_| bad("unroll.iterations"))?,
            alpha_init: get("unroll.alpha")?.parse().map_err(|_| bad("unroll.alpha"))?,
            beta: get("unroll.beta")?.parse().map_err(|_| bad("unroll.beta"))?,
            loss: get("unroll.loss")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Proximal inputs `s_1 .. s_T`.
    pub s: Vec<ComplexImage>,
    /// Iterates `x_1 .. x_T`.
    pub x: Vec<ComplexImage>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn final_image(&self) -> &ComplexImage {
        self.x.last().expect("trajectory has at least one iterate")
    }
}

/// Plain (untaped) evaluation of `T` unrolled iterations.
pub fn unrolled_forward(
    net: &ProximalNet,
    op: &dyn LinearOperator,
    y: &ComplexImage,
    alpha: f32,
    iterations: usize,
) -> Result<Trajectory> {
    if iterations == 0 {
        return Err(NpgdError::Config("unroll.iterations must be at least 1".into()));
    }
    let (h, w) = op.input_dims();
    let mut x = ComplexImage::zeros(h, w);
    let mut traj = Trajectory {
        s: Vec::with_capacity(iterations),
        x: Vec::with_capacity(iterations),
    };
    for _ in 0..iterations {
        let s = gradient_step(&x, y, alpha, op)?;
        x = net.forward(&s)?;
        traj.s.push(s);
        traj.x.push(x.clone());
    }
    Ok(traj)
}

/// Nodes recorded by [`unrolled_forward_on`].
#[derive(Clone, Debug)]
pub struct TapedTrajectory {
    pub s: Vec<Var>,
    pub x: Vec<Var>,
}

/// Record `T` iterations on `tape`, sharing the bound weights across iterations.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_forward_on(
    tape: &mut Tape,
    net: &ProximalNet,
    bound: &crate::prox::BoundParams,
    alpha: Var,
    op: &Arc<dyn LinearOperator>,
    y: &ComplexImage,
    iterations: usize,
) -> Result<TapedTrajectory> {
    let (h, w) = op.input_dims();
    let mut x = tape.leaf(ComplexImage::zeros(h, w).to_channels());
    let mut traj = TapedTrajectory {
        s: Vec::with_capacity(iterations),
        x: Vec::with_capacity(iterations),
    };
    for _ in 0..iterations {
        let s = gradient_step_on_tape(tape, x, alpha, y, op)?;
        x = net.forward_on(tape, bound, s, &mut Gating::Live)?;
        traj.s.push(s);
        traj.x.push(x);
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// Unweighted `l(x*, x_T)`.
    pub terminal: f64,
    /// Unweighted `sum_t ||y - A x_t||^2`.
    pub consistency: f64,
}

fn terminal_loss(kind: LossKind, x: &ComplexImage, truth: &ComplexImage) -> Result<f64> {
    let d = x.sub(truth)?;
    let parts = d.re().data().iter().chain(d.im().data()).map(|&e| e as f64);
    Ok(match kind {
        LossKind::L2 => parts.map(|e| e * e).sum(),
        LossKind::L1 => parts.map(|e| (e * e + 1e-8).sqrt()).sum(),
    })
}

/// Objective of a finished trajectory.
pub fn loss_p1(
    traj: &Trajectory,
    truth: &ComplexImage,
    y: &ComplexImage,
    op: &dyn LinearOperator,
    beta: f32,
    kind: LossKind,
) -> Result<LossParts> {
    let terminal = terminal_loss(kind, traj.final_image(), truth)?;
    let mut consistency = 0.0;
    for x in &traj.x {
        consistency += y.sub(&op.apply(x)?)?.norm_sq();
    }
    let b = beta as f64;
    Ok(LossParts {
        total: b * terminal + (1.0 - b) * consistency,
        terminal,
        consistency,
    })
}

/// Taped objective; returns the scalar root and the unweighted parts.
pub fn loss_p1_on_tape(
    tape: &mut Tape,
    traj: &TapedTrajectory,
    truth: &ComplexImage,
    y: &ComplexImage,
    op: &Arc<dyn LinearOperator>,
    beta: f32,
    kind: LossKind,
) -> Result<(Var, LossParts)> {
    let last = *traj.x.last().ok_or_else(|| NpgdError::Contract("empty trajectory".into()))?;
    let target = truth.to_channels();
    let terminal = match kind {
        LossKind::L2 => tape.mse_loss(last, &target)?,
        LossKind::L1 => tape.l1_loss(last, &target)?,
    };
    let mut parts = LossParts {
        terminal: tape.value(terminal).item() as f64,
        ..LossParts::default()
    };
    let mut total = tape.scale(terminal, beta);
    for &x in &traj.x {
        let r = residual_sq_on_tape(tape, x, y, op)?;
        parts.consistency += tape.value(r).item() as f64;
        let weighted = tape.scale(r, 1.0 - beta);
        total = tape.add(total, weighted)?;
    }
    parts.total = tape.value(total).item() as f64;
    Ok((total, parts))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub image: ComplexImage,
    /// `||y - A x_t||` for `t = 1..T`.
    pub residuals: Vec<f64>,
}

pub fn reconstruct(
    net: &ProximalNet,
    alpha: f32,
    iterations: usize,
    y: &ComplexImage,
    op: &dyn LinearOperator,
) -> Result<Reconstruction> {
    y.check_dims(op.output_dims().0, op.output_dims().1)?;
    let traj = unrolled_forward(net, op, y, alpha, iterations)?;
    let residuals = traj
        .x
        .iter()
        .map(|x| Ok(y.sub(&op.apply(x)?)?.norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Reconstruction {
        image: traj.x.into_iter().last().expect("iterations >= 1"),
        residuals,
    })
}

/// Reconstruct with the step size and iteration count stored in a checkpoint.
pub fn reconstruct_checkpoint(ck: &Checkpoint, y: &ComplexImage, op: &dyn LinearOperator) -> Result<Reconstruction> {
    let unroll = UnrollConfig::from_entries(&ck.metadata)?;
    reconstruct(&ck.net, ck.alpha, unroll.iterations, y, op)
}

/// One training example with its own forward operator.
#[derive(Clone, Debug)]
pub struct Sample {
    pub truth: ComplexImage,
    pub measurement: ComplexImage,
    pub op: Arc<dyn LinearOperator>,
}

impl Sample {
    /// Noiseless measurement `y = A x*`.
    pub fn simulate(truth: ComplexImage, op: Arc<dyn LinearOperator>) -> Result<Self> {
        let measurement = op.apply(&truth)?;
        Ok(Self { truth, measurement, op })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub halving_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            halving_period: 10_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 2,
            epochs: 10,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.lr", self.learning_rate),
            ("train.eps", self.eps),
            ("train.halving_period", self.halving_period as f64),
            ("train.batch_size", self.batch_size as f64),
            ("train.epochs", self.epochs as f64),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NpgdError::Config(format!("{k} must be positive, got {v}")));
            }
        }
        for (k, v) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(NpgdError::Config(format!("{k} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// `lr0 * 0.5^floor(step / period)`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((step / self.halving_period) as i32)
    }
}

/// One row of the per-step loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_terminal: f64,
    pub loss_consistency: f64,
    pub alpha: f32,
    pub grad_norm: f64,
}

pub const TRACE_HEADER: &str = "step,epoch,lr,loss_total,loss_terminal,loss_consistency,alpha,grad_norm";

pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.step, r.epoch, r.lr, r.loss_total, r.loss_terminal, r.loss_consistency, r.alpha, r.grad_norm
        )?;
    }
    Ok(())
}

/// Loss and gradients of one sample; the last gradient is for `alpha`.
pub struct SampleGradient {
    pub loss: LossParts,
    pub grads: Vec<Tensor>,
}

pub fn sample_gradient(net: &ProximalNet, alpha: f32, sample: &Sample, cfg: &UnrollConfig) -> Result<SampleGradient> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let a = tape.leaf(Tensor::scalar(alpha));
    let traj = unrolled_forward_on(
        &mut tape,
        net,
        &bound,
        a,
        &sample.op,
        &sample.measurement,
        cfg.iterations,
    )?;
    let (root, loss) = loss_p1_on_tape(&mut tape, &traj, &sample.truth, &sample.measurement, &sample.op, cfg.beta, cfg.loss)?;
    let mut g: Gradients = tape.backward(root)?;
    let mut grads: Vec<Tensor> = bound.vars.iter().map(|&v| g.take(v)).collect();
    grads.push(g.take(a));
    Ok(SampleGradient { loss, grads })
}

/// In-place Adam update of the net parameters and `alpha` (the last slot).
pub fn adam_step(
    net: &mut ProximalNet,
    alpha: &mut f32,
    state: &mut OptimizerState,
    grads: &[Tensor],
    lr: f64,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let update = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
        for i in 0..p.len() {
            let gi = g[i] as f64;
            let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            p[i] = (p[i] as f64 - step) as f32;
        }
    };
    let n = net.params().len();
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        update(p.value.data_mut(), grads[i].data(), state.m[i].data_mut(), state.v[i].data_mut());
    }
    let mut a = [*alpha];
    update(&mut a, grads[n].data(), state.m[n].data_mut(), state.v[n].data_mut());
    *alpha = a[0].max(ALPHA_FLOOR);
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<TraceRow>,
}

/// Mini-batch Adam on the unrolled objective.
///
/// Data order is a fresh seeded permutation every epoch. Per-sample gradients
/// may be computed concurrently but are always summed in sample order.
pub fn train(
    samples: &[Sample],
    init: Checkpoint,
    unroll: &UnrollConfig,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(NpgdError::EmptyDataset("training set has no samples".into()));
    }
    unroll.validate()?;
    cfg.validate()?;
    let Checkpoint {
        mut net,
        mut alpha,
        optimizer,
        mut metadata,
    } = init;
    let mut state = optimizer.unwrap_or_else(|| OptimizerState::zeros_like(&net));
    metadata.extend(unroll.to_entries());
    metadata.insert("train.seed".into(), cfg.seed.to_string());

    let mut trace = Vec::new();
    let mut step = state.step as usize;
    let n_slots = net.params().len() + 1;
    for epoch in 0..cfg.epochs {
        let mut rng = XorShift64Star::derive(cfg.seed, 0x4550_4f43 ^ epoch as u64);
        let order = rng.permutation(samples.len());
        for batch in order.chunks(cfg.batch_size) {
            let results = {
                let net_ref = &net;
                try_par_map(exec, batch, |_, &i| sample_gradient(net_ref, alpha, &samples[i], unroll))?
            };
            let scale = 1.0 / batch.len() as f32;
            let mut grads: Vec<Tensor> = results[0].grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            let mut loss = LossParts::default();
            for r in &results {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.add_assign(g);
                }
                loss.total += r.loss.total;
                loss.terminal += r.loss.terminal;
                loss.consistency += r.loss.consistency;
            }
            debug_assert_eq!(grads.len(), n_slots);
            for g in &mut grads {
                *g = g.scale(scale);
            }
            let inv = 1.0 / batch.len() as f64;
            loss.total *= inv;
            loss.terminal *= inv;
            loss.consistency *= inv;
            let grad_norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
            let lr = cfg.learning_rate_at(step);
            if !loss.total.is_finite() || !grad_norm.is_finite() {
                return Err(NpgdError::Numeric(format!(
                    "non-finite loss at step {step} (lr {lr:e}, grad norm {grad_norm:e})"
                )));
            }
            adam_step(&mut net, &mut alpha, &mut state, &grads, lr, cfg);
            trace.push(TraceRow {
                step,
                epoch,
                lr,
                loss_total: loss.total,
                loss_terminal: loss.terminal,
                loss_consistency: loss.consistency,
                alpha,
                grad_norm,
            });
            step += 1;
            if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
                if let Some(path) = &cfg.checkpoint_path {
                    let mut md = metadata.clone();
                    md.insert("train.epoch".into(), epoch.to_string());
                    Checkpoint {
                        net: net.clone(),
                        alpha,
                        optimizer: Some(state.clone()),
                        metadata: md,
                    }
                    .save(path)?;
                }
            }
        }
    }
    metadata.insert("train.epoch".into(), cfg.epochs.to_string());
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            net,
            alpha,
            optimizer: Some(state),
            metadata,
        },
        trace,
    })
}
