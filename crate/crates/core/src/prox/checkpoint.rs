//! Binary checkpoint container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "NPGD" | u16 version
//! u32 n_entries | n_entries x (u16 len, key bytes, u16 len, value bytes)   sorted by key
//! f32 alpha
//! u32 n_records | n_records x (u16 len, name bytes, u8 rank, rank x u32 dim, f32 data)
//! u32 crc32 of every preceding byte
//! ```
//!
//! Optimizer moments are stored as extra records named `adam.m/<param>` and
//! `adam.v/<param>`; the step counter lives in the config block.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Param, ProximalConfig, ProximalNet};
use crate::error::{NpgdError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"NPGD";
const ADAM_STEP_KEY: &str = "adam.step";
const ALPHA_RECORD: &str = "alpha";

/// Adam moments, one per parameter tensor followed by one for the step size.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn zeros_like(net: &ProximalNet) -> Self {
        let mut m: Vec<Tensor> = net.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        m.push(Tensor::scalar(0.0));
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: ProximalNet,
    pub alpha: f32,
    pub optimizer: Option<OptimizerState>,
    /// Free-form metadata (unrolling settings, seed, epoch, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(net: ProximalNet, alpha: f32) -> Self {
        Self {
            net,
            alpha,
            optimizer: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = self.net.config().to_entries();
        for (k, v) in &self.metadata {
            if k.starts_with("prox.") || k == ADAM_STEP_KEY {
                return Err(NpgdError::Config(format!("reserved metadata key {k}")));
            }
            entries.insert(k.clone(), v.clone());
        }
        if let Some(opt) = &self.optimizer {
            entries.insert(ADAM_STEP_KEY.into(), opt.step.to_string());
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (k, v) in &entries {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        out.extend_from_slice(&self.alpha.to_le_bytes());

        let mut records: Vec<(String, &Tensor)> = self
            .net
            .params()
            .iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        if let Some(opt) = &self.optimizer {
            let names: Vec<&str> = self
                .net
                .params()
                .iter()
                .map(|p| p.name.as_str())
                .chain(std::iter::once(ALPHA_RECORD))
                .collect();
            if opt.m.len() != names.len() || opt.v.len() != names.len() {
                return Err(NpgdError::Contract(format!(
                    "optimizer state has {} / {} moments for {} slots",
                    opt.m.len(),
                    opt.v.len(),
                    names.len()
                )));
            }
            for (prefix, moments) in [("adam.m/", &opt.m), ("adam.v/", &opt.v)] {
                for (name, t) in names.iter().zip(moments.iter()) {
                    records.push((format!("{prefix}{name}"), t));
                }
            }
        }
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            put_str(&mut out, &name)?;
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let head = &bytes[..bytes.len().min(4)];
        if head != &MAGIC[..head.len()] || bytes.is_empty() {
            return Err(NpgdError::Format("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < 6 {
            return Err(NpgdError::Corruption("checkpoint truncated".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(NpgdError::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        if bytes.len() < 10 {
            return Err(NpgdError::Corruption("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(NpgdError::Corruption("checksum mismatch (file truncated or modified)".into()));
        }

        let mut r = Reader { buf: body, pos: 6 };
        let n_entries = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n_entries {
            let k = r.string()?;
            let v = r.string()?;
            entries.insert(k, v);
        }
        let alpha = r.f32()?;
        let n_records = r.u32()? as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let name = r.string()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            let value = Tensor::new(&shape, data).map_err(|e| NpgdError::Corruption(e.to_string()))?;
            records.push(Param { name, value });
        }
        if r.pos != body.len() {
            return Err(NpgdError::Corruption(format!(
                "{} unexpected trailing bytes",
                body.len() - r.pos
            )));
        }

        let config = ProximalConfig::from_entries(&entries)?;
        let n_params = config.parameter_count();
        let mut params = Vec::new();
        let mut adam: BTreeMap<String, Tensor> = BTreeMap::new();
        for rec in records {
            if rec.name.starts_with("adam.") {
                adam.insert(rec.name, rec.value);
            } else {
                params.push(rec);
            }
        }
        let net = ProximalNet::from_params(config, params)?;
        debug_assert_eq!(net.parameter_count(), n_params);

        let optimizer = match entries.get(ADAM_STEP_KEY) {
            None => None,
            Some(step) => {
                let step = step
                    .parse()
                    .map_err(|_| NpgdError::Format(format!("bad {ADAM_STEP_KEY} value {step:?}")))?;
                let names: Vec<&str> = net
                    .params()
                    .iter()
                    .map(|p| p.name.as_str())
                    .chain(std::iter::once(ALPHA_RECORD))
                    .collect();
                let mut take = |prefix: &str| -> Result<Vec<Tensor>> {
                    names
                        .iter()
                        .map(|n| {
                            let key = format!("{prefix}{n}");
                            adam.remove(&key)
                                .ok_or_else(|| NpgdError::Format(format!("missing optimizer record {key}")))
                        })
                        .collect()
                };
                let m = take("adam.m/")?;
                let v = take("adam.v/")?;
                Some(OptimizerState { step, m, v })
            }
        };
        if let Some(extra) = adam.keys().next() {
            return Err(NpgdError::Format(format!("unexpected record {extra}")));
        }
        let metadata = entries
            .into_iter()
            .filter(|(k, _)| !k.starts_with("prox.") && k != ADAM_STEP_KEY)
            .collect();
        Ok(Self {
            net,
            alpha,
            optimizer,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| NpgdError::Config(format!("string of {} bytes is too long for a checkpoint", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NpgdError::Corruption(format!("record extends past end of file at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NpgdError::Corruption("non-UTF-8 string".into()))
    }
}
