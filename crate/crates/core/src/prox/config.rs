use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{NpgdError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Residual blocks followed by a 1x1 convolution tail.
    ResNet,
    /// Linear convolution chain with a single gated output layer.
    Chain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Instance,
    None,
}

macro_rules! string_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = NpgdError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(NpgdError::Config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

string_enum!(Architecture { Architecture::ResNet => "resnet", Architecture::Chain => "chain" });
string_enum!(Activation { Activation::Relu => "relu", Activation::Swish => "swish" });
string_enum!(Normalization { Normalization::Instance => "instance", Normalization::None => "none" });

#[derive(Clone, Debug, PartialEq)]
pub struct ProximalConfig {
    pub arch: Architecture,
    pub num_res_blocks: usize,
    pub feature_maps: usize,
    pub chain_layers: usize,
    pub chain_kernel: usize,
    pub activation: Activation,
    pub normalization: Normalization,
}

impl Default for ProximalConfig {
    fn default() -> Self {
        Self::resnet(1, 32)
    }
}

impl ProximalConfig {
    pub fn resnet(num_res_blocks: usize, feature_maps: usize) -> Self {
        Self {
            arch: Architecture::ResNet,
            num_res_blocks,
            feature_maps,
            chain_layers: 3,
            chain_kernel: 5,
            activation: Activation::Relu,
            normalization: Normalization::Instance,
        }
    }

    /// Full-width residual proximal (128 feature maps).
    pub fn resnet_wide(num_res_blocks: usize) -> Self {
        Self::resnet(num_res_blocks, 128)
    }

    pub fn chain(chain_layers: usize, chain_kernel: usize, feature_maps: usize) -> Self {
        Self {
            arch: Architecture::Chain,
            num_res_blocks: 1,
            feature_maps,
            chain_layers,
            chain_kernel,
            activation: Activation::Swish,
            normalization: Normalization::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(NpgdError::Config(m));
        if self.feature_maps == 0 {
            return err("prox.features must be at least 1".into());
        }
        match self.arch {
            Architecture::ResNet => {
                if self.num_res_blocks == 0 {
                    return err("prox.res_blocks must be at least 1".into());
                }
            }
            Architecture::Chain => {
                if self.normalization != Normalization::None {
                    return err("chain architecture requires prox.normalization = none".into());
                }
                if self.chain_layers == 0 {
                    return err("prox.chain_layers must be at least 1".into());
                }
                if self.chain_kernel.is_multiple_of(2) {
                    return err(format!(
                        "prox.chain_kernel must be odd for same-size convolution, got {}",
                        self.chain_kernel
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of gated (activation) layers.
    pub fn gated_layers(&self) -> usize {
        match self.arch {
            Architecture::ResNet => 2 * self.num_res_blocks + 2,
            Architecture::Chain => 1,
        }
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let f = self.feature_maps;
        match self.arch {
            Architecture::ResNet => {
                let norm = if self.normalization == Normalization::Instance { 4 * f } else { 0 };
                let head = 2 * f * 9 + f;
                let block = 2 * (f * f * 9 + f) + norm;
                let tail = 2 * (f * f + f) + (2 * f + 2);
                head + self.num_res_blocks * block + tail
            }
            Architecture::Chain => {
                let k2 = self.chain_kernel * self.chain_kernel;
                if self.chain_layers == 1 {
                    2 * 2 * k2 + 2
                } else {
                    (2 * f * k2 + f) + (self.chain_layers - 2) * (f * f * k2 + f) + (2 * f * k2 + 2)
                }
            }
        }
    }

    pub fn to_entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("prox.arch".into(), self.arch.to_string());
        m.insert("prox.res_blocks".into(), self.num_res_blocks.to_string());
        m.insert("prox.features".into(), self.feature_maps.to_string());
        m.insert("prox.chain_layers".into(), self.chain_layers.to_string());
        m.insert("prox.chain_kernel".into(), self.chain_kernel.to_string());
        m.insert("prox.activation".into(), self.activation.to_string());
        m.insert("prox.normalization".into(), self.normalization.to_string());
        m
    }

    pub fn from_entries(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            m.get(k)
                .ok_or_else(|| NpgdError::Config(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| NpgdError::Config(format!("{k} is not an integer")))
        };
        let cfg = Self {
            arch: get("prox.arch")?.parse()?,
            num_res_blocks: num("prox.res_blocks")?,
            feature_maps: num("prox.features")?,
            chain_layers: num("prox.chain_layers")?,
            chain_kernel: num("prox.chain_kernel")?,
            activation: get("prox.activation")?.parse()?,
            normalization: get("prox.normalization")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
