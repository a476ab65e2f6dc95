//! Learned proximal networks.
//!
//! Every activation is written as `sigma(z) = D(z) * z`. Running the net
//! with [`Gating::Capture`] records the gates `D(z)` of every activation
//! layer; [`Gating::Frozen`] replays a recorded snapshot, which turns the
//! network into an affine map of its input.

mod checkpoint;
mod config;

use crate::autograd::{relu_gate, swish_gate, Tape, Var};
use crate::complex::ComplexImage;
use crate::error::{NpgdError, Result};
use crate::rng::XorShift64Star;
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_VERSION};
pub use config::{Activation, Architecture, Normalization, ProximalConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProximalNet {
    config: ProximalConfig,
    params: Vec<Param>,
}

/// Recorded gate values `D(z_k)` for every activation layer of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSnapshot {
    pub masks: Vec<Tensor>,
    pub layer_ids: Vec<String>,
    pub activation: Activation,
    /// FNV-1a hash of the input the gates were captured at.
    pub source_digest: u64,
}

pub enum Gating<'a> {
    Live,
    Capture(&'a mut Vec<Tensor>),
    Frozen(&'a MaskSnapshot),
}

/// Parameter leaves registered on a tape, aligned with [`ProximalNet::params`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

pub fn digest(t: &Tensor) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in t.data() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Standard-deviation multiplier for the last layer's initial weights.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

struct ForwardCtx<'g, 'a> {
    gating: &'g mut Gating<'a>,
    with_bias: bool,
    layer: usize,
}

impl ProximalNet {
    /// Random initialisation: kernels `N(0, 2/fan_in)`, zero biases, unit norm scales.
    ///
    /// The output layer is drawn [`OUTPUT_INIT_SCALE`] times smaller, so an
    /// untrained net does not amplify its input over the unrolled iterations.
    pub fn build(config: ProximalConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = XorShift64Star::derive(seed, 0x5052_4f58);
        let mut params = Vec::new();
        let mut conv = |name: &str, c_out: usize, c_in: usize, k: usize, rng: &mut XorShift64Star, gain: f64| {
            let fan_in = (c_in * k * k) as f64;
            let std = gain * (2.0 / fan_in).sqrt();
            let w = (0..c_out * c_in * k * k)
                .map(|_| (rng.normal() * std) as f32)
                .collect();
            params.push(Param {
                name: format!("{name}.weight"),
                value: Tensor::new(&[c_out, c_in, k, k], w).expect("shape"),
            });
            params.push(Param {
                name: format!("{name}.bias"),
                value: Tensor::zeros(&[c_out]),
            });
        };
        let f = config.feature_maps;
        match config.arch {
            Architecture::ResNet => {
                conv("head", f, 2, 3, &mut rng, 1.0);
                for b in 0..config.num_res_blocks {
                    for c in 1..=2 {
                        conv(&format!("rb{b}.conv{c}"), f, f, 3, &mut rng, 1.0);
                    }
                }
                conv("tail1", f, f, 1, &mut rng, 1.0);
                conv("tail2", f, f, 1, &mut rng, 1.0);
                conv("tail3", 2, f, 1, &mut rng, OUTPUT_INIT_SCALE);
                if config.normalization == Normalization::Instance {
                    for b in 0..config.num_res_blocks {
                        for c in 1..=2 {
                            params.push(Param {
                                name: format!("rb{b}.norm{c}.gamma"),
                                value: Tensor::full(&[f], 1.0),
                            });
                            params.push(Param {
                                name: format!("rb{b}.norm{c}.beta"),
                                value: Tensor::zeros(&[f]),
                            });
                        }
                    }
                }
            }
            Architecture::Chain => {
                let k = config.chain_kernel;
                let n = config.chain_layers;
                for l in 0..n {
                    let c_in = if l == 0 { 2 } else { f };
                    let c_out = if l + 1 == n { 2 } else { f };
                    let gain = if l + 1 == n { OUTPUT_INIT_SCALE } else { 1.0 };
                    conv(&format!("chain{l}"), c_out, c_in, k, &mut rng, gain);
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: ProximalConfig, params: Vec<Param>) -> Result<Self> {
        let reference = Self::build(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(NpgdError::Config(format!(
                "expected {} parameter tensors, got {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (r, p) in reference.params.iter().zip(&params) {
            if r.name != p.name || r.value.shape() != p.value.shape() {
                return Err(NpgdError::Config(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    r.name,
                    r.value.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    /// Residual net that reproduces its input exactly.
    ///
    /// Channels 0 and 1 carry `re + shift` and `im + shift`, so every ReLU gate
    /// is open for inputs above `-shift`; the last layer removes the shift.
    pub fn identity_resnet(feature_maps: usize, num_res_blocks: usize, shift: f32) -> Result<Self> {
        let mut config = ProximalConfig::resnet(num_res_blocks, feature_maps.max(2));
        config.normalization = Normalization::None;
        let mut net = Self::build(config, 0)?;
        let f = net.config.feature_maps;
        for p in &mut net.params {
            p.value = Tensor::zeros(p.value.shape());
        }
        net.param_mut("head.weight").data_mut()[4] = 1.0;
        net.param_mut("head.weight").data_mut()[(2 + 1) * 9 + 4] = 1.0;
        net.param_mut("head.bias").data_mut()[..2].fill(shift);
        for tail in ["tail1", "tail2"] {
            let w = net.param_mut(&format!("{tail}.weight")).data_mut();
            w[0] = 1.0;
            w[f + 1] = 1.0;
        }
        let w = net.param_mut("tail3.weight").data_mut();
        w[0] = 1.0;
        w[f + 1] = 1.0;
        net.param_mut("tail3.bias").data_mut().fill(-shift);
        Ok(net)
    }

    pub fn config(&self) -> &ProximalConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Panics if `name` is not a parameter of this architecture.
    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
            .value
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    fn index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
    }

    fn conv(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        ctx: &ForwardCtx<'_, '_>,
        name: &str,
        x: Var,
    ) -> Result<Var> {
        let w = bound.vars[self.index(&format!("{name}.weight"))];
        let b = ctx.with_bias.then(|| bound.vars[self.index(&format!("{name}.bias"))]);
        let k = tape.value(w).shape()[2];
        tape.conv2d(x, w, b, 1, k / 2)
    }

    fn activate(&self, tape: &mut Tape, ctx: &mut ForwardCtx<'_, '_>, z: Var) -> Result<Var> {
        let k = ctx.layer;
        ctx.layer += 1;
        let gate = match self.config.activation {
            Activation::Relu => relu_gate,
            Activation::Swish => swish_gate,
        };
        match &mut ctx.gating {
            Gating::Frozen(snap) => {
                let mask = snap.masks.get(k).ok_or_else(|| {
                    NpgdError::Contract(format!("mask snapshot has no layer {k}"))
                })?;
                if mask.shape() != tape.value(z).shape() {
                    return Err(NpgdError::Contract(format!(
                        "mask layer {k} has shape {:?}, pre-activation is {:?}",
                        mask.shape(),
                        tape.value(z).shape()
                    )));
                }
                tape.gate(z, mask.clone())
            }
            Gating::Capture(store) => {
                store.push(tape.value(z).map(gate));
                Ok(self.live_activation(tape, z))
            }
            Gating::Live => Ok(self.live_activation(tape, z)),
        }
    }

    fn live_activation(&self, tape: &mut Tape, z: Var) -> Var {
        match self.config.activation {
            Activation::Relu => tape.relu(z),
            Activation::Swish => tape.swish(z),
        }
    }

    fn normalize(&self, tape: &mut Tape, bound: &BoundParams, name: &str, x: Var) -> Result<Var> {
        match self.config.normalization {
            Normalization::None => Ok(x),
            Normalization::Instance => {
                let g = bound.vars[self.index(&format!("{name}.gamma"))];
                let b = bound.vars[self.index(&format!("{name}.beta"))];
                tape.instance_norm(x, g, b)
            }
        }
    }

    /// Record `P(x)` on `tape` for a `2 x H x W` input node.
    pub fn forward_on(&self, tape: &mut Tape, bound: &BoundParams, x: Var, gating: &mut Gating<'_>) -> Result<Var> {
        self.forward_impl(tape, bound, x, gating, true)
    }

    fn forward_impl(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        gating: &mut Gating<'_>,
        with_bias: bool,
    ) -> Result<Var> {
        let s = tape.value(x).shape();
        if s.len() != 3 || s[0] != 2 {
            return Err(NpgdError::Shape(format!("proximal input must be 2xHxW, got {s:?}")));
        }
        if let Gating::Frozen(snap) = gating {
            if self.config.normalization != Normalization::None {
                return Err(NpgdError::Unsupported(
                    "frozen-gate evaluation needs a normalization-free network".into(),
                ));
            }
            if snap.masks.len() != self.config.gated_layers() || snap.activation != self.config.activation {
                return Err(NpgdError::Contract(format!(
                    "snapshot with {} {} layers does not match a net with {} {} layers",
                    snap.masks.len(),
                    snap.activation,
                    self.config.gated_layers(),
                    self.config.activation
                )));
            }
        }
        let mut ctx = ForwardCtx {
            gating,
            with_bias,
            layer: 0,
        };
        match self.config.arch {
            Architecture::ResNet => {
                let mut h = self.conv(tape, bound, &ctx, "head", x)?;
                for b in 0..self.config.num_res_blocks {
                    let mut z = h;
                    for c in 1..=2 {
                        z = self.conv(tape, bound, &ctx, &format!("rb{b}.conv{c}"), z)?;
                        z = self.normalize(tape, bound, &format!("rb{b}.norm{c}"), z)?;
                        z = self.activate(tape, &mut ctx, z)?;
                    }
                    h = tape.add(h, z)?;
                }
                let mut z = self.conv(tape, bound, &ctx, "tail1", h)?;
                z = self.activate(tape, &mut ctx, z)?;
                z = self.conv(tape, bound, &ctx, "tail2", z)?;
                z = self.activate(tape, &mut ctx, z)?;
                self.conv(tape, bound, &ctx, "tail3", z)
            }
            Architecture::Chain => {
                let mut z = x;
                for l in 0..self.config.chain_layers {
                    z = self.conv(tape, bound, &ctx, &format!("chain{l}"), z)?;
                }
                self.activate(tape, &mut ctx, z)
            }
        }
    }

    fn run(&self, x: &ComplexImage, gating: &mut Gating<'_>, with_bias: bool) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.leaf(x.to_channels());
        let out = self.forward_impl(&mut tape, &bound, xv, gating, with_bias)?;
        ComplexImage::from_channels(tape.value(out))
    }

    pub fn forward(&self, x: &ComplexImage) -> Result<ComplexImage> {
        self.run(x, &mut Gating::Live, true)
    }

    /// Forward pass that records every activation gate.
    pub fn capture_masks(&self, x: &ComplexImage) -> Result<MaskSnapshot> {
        let mut masks = Vec::new();
        self.run(x, &mut Gating::Capture(&mut masks), true)?;
        Ok(MaskSnapshot {
            layer_ids: self.gated_layer_ids(),
            masks,
            activation: self.config.activation,
            source_digest: digest(&x.to_channels()),
        })
    }

    /// The affine map obtained by replacing every gate with `masks`.
    pub fn forward_frozen(&self, masks: &MaskSnapshot, u: &ComplexImage) -> Result<ComplexImage> {
        self.run(u, &mut Gating::Frozen(masks), true)
    }

    /// Linear part of the frozen map: the same pass with every bias dropped.
    pub fn forward_frozen_linear(&self, masks: &MaskSnapshot, u: &ComplexImage) -> Result<ComplexImage> {
        self.run(u, &mut Gating::Frozen(masks), false)
    }

    pub fn gated_layer_ids(&self) -> Vec<String> {
        match self.config.arch {
            Architecture::ResNet => {
                let mut ids = Vec::new();
                for b in 0..self.config.num_res_blocks {
                    ids.push(format!("rb{b}.act1"));
                    ids.push(format!("rb{b}.act2"));
                }
                ids.push("tail1.act".into());
                ids.push("tail2.act".into());
                ids
            }
            Architecture::Chain => vec![format!("chain{}.act", self.config.chain_layers - 1)],
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Checkpoint::new(self.clone(), 1.0).save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(Checkpoint::load(path)?.net)
    }
}
