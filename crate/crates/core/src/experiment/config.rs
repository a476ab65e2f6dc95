//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! rejected, and every value is validated before any computation starts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{CsConfig, Solver};
use crate::data::PhantomSpec;
use crate::error::{NpgdError, Result};
use crate::prox::ProximalConfig;
use crate::sampling::{DEFAULT_CENTER_FRACTION, DEFAULT_DECAY, DEFAULT_RATE};
use crate::unroll::{TrainConfig, UnrollConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Variable-density Cartesian Fourier undersampling.
    Mri,
    /// 2x2 box downsampling.
    Sr,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Mri => "mri",
            Task::Sr => "sr",
        })
    }
}

impl FromStr for Task {
    type Err = NpgdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mri" => Ok(Task::Mri),
            "sr" => Ok(Task::Sr),
            other => Err(NpgdError::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic,
    /// Images written by `gendata` (`*_re.pgm` / `*_im.pgm` pairs).
    Dataset(PathBuf),
    /// Arbitrary grayscale PGM files, centre-cropped.
    Grayscale(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub count: usize,
    pub test_count: usize,
    pub val_count: usize,
    pub seed: u64,
    pub phantom: PhantomSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskConfig {
    pub rate: f64,
    pub center_fraction: f64,
    pub decay: f64,
    pub seed: u64,
    pub per_sample: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeConfig {
    pub debias_iters: usize,
    pub debias_tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub image_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub data: DataConfig,
    pub mask: MaskConfig,
    pub unroll: UnrollConfig,
    pub train: TrainConfig,
    pub prox: ProximalConfig,
    pub cs: CsConfig,
    /// `None`: tune on the validation split.
    pub cs_lambda: Option<f32>,
    pub cs_grid_points: usize,
    pub analyze: AnalyzeConfig,
    /// `(T, residual blocks)` cells for `sweep`.
    pub sweep: Vec<(usize, usize)>,
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "task",
    "image_size",
    "seed",
    "out_dir",
    "threads",
    "data.source",
    "data.dir",
    "data.count",
    "data.test_count",
    "data.val_count",
    "data.seed",
    "data.min_ellipses",
    "data.max_ellipses",
    "data.smooth_phase",
    "mask.rate",
    "mask.center_fraction",
    "mask.decay",
    "mask.seed",
    "mask.per_sample",
    "unroll.iterations",
    "unroll.alpha",
    "unroll.beta",
    "unroll.loss",
    "prox.arch",
    "prox.res_blocks",
    "prox.features",
    "prox.chain_layers",
    "prox.chain_kernel",
    "prox.activation",
    "prox.normalization",
    "train.lr",
    "train.halving_period",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.batch_size",
    "train.epochs",
    "train.seed",
    "train.checkpoint_every",
    "cs.lambda",
    "cs.iterations",
    "cs.solver",
    "cs.levels",
    "cs.grid_points",
    "analyze.debias_iters",
    "analyze.debias_tol",
    "sweep.grid",
];

/// Parse `key = value` lines into a map, rejecting unknown and repeated keys.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| NpgdError::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(NpgdError::Config(format!("line {}: unknown key {k:?}", n + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(NpgdError::Config(format!("line {}: key {k:?} given twice", n + 1)));
        }
    }
    Ok(map)
}

struct Entries<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Entries<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| NpgdError::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| NpgdError::Config(format!("{key}: cannot parse {v:?}"))))
            .transpose()
    }
}

fn parse_grid(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|cell| {
            let cell = cell.trim();
            let parsed = cell
                .split_once('x')
                .and_then(|(t, rb)| Some((t.trim().parse().ok()?, rb.trim().parse().ok()?)));
            match parsed {
                Some((t, rb)) if t > 0 && rb > 0 => Ok((t, rb)),
                _ => Err(NpgdError::Config(format!("sweep.grid: bad cell {cell:?}, expected TxRB"))),
            }
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_entries(map: &BTreeMap<String, String>) -> Result<Self> {
        for k in map.keys() {
            if !KEYS.contains(&k.as_str()) {
                return Err(NpgdError::Config(format!("unknown key {k:?}")));
            }
        }
        let e = Entries { map };
        let task: Task = e.get("task", Task::Mri)?;
        let seed: u64 = e.get("seed", 0)?;
        let image_size = e.get("image_size", if task == Task::Mri { 64 } else { 32 })?;

        let source = match e.raw("data.source").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic,
            kind @ ("dataset" | "grayscale") => {
                let dir = PathBuf::from(e.raw("data.dir").ok_or_else(|| {
                    NpgdError::Config(format!("data.dir is required for data.source = {kind}"))
                })?);
                if kind == "dataset" {
                    DataSource::Dataset(dir)
                } else {
                    DataSource::Grayscale(dir)
                }
            }
            other => return Err(NpgdError::Config(format!("data.source: unknown value {other:?}"))),
        };
        let defaults = PhantomSpec::default();
        let data = DataConfig {
            source,
            count: e.get("data.count", 200)?,
            test_count: e.get("data.test_count", 20)?,
            val_count: e.get("data.val_count", 20)?,
            seed: e.get("data.seed", seed)?,
            phantom: PhantomSpec {
                min_ellipses: e.get("data.min_ellipses", defaults.min_ellipses)?,
                max_ellipses: e.get("data.max_ellipses", defaults.max_ellipses)?,
                smooth_phase: e.get("data.smooth_phase", defaults.smooth_phase)?,
                ..defaults
            },
        };
        let mask = MaskConfig {
            rate: e.get("mask.rate", DEFAULT_RATE)?,
            center_fraction: e.get("mask.center_fraction", DEFAULT_CENTER_FRACTION)?,
            decay: e.get("mask.decay", DEFAULT_DECAY)?,
            seed: e.get("mask.seed", seed.wrapping_add(1))?,
            per_sample: e.get("mask.per_sample", false)?,
        };
        let ud = UnrollConfig::default();
        let unroll = UnrollConfig {
            iterations: e.get("unroll.iterations", ud.iterations)?,
            alpha_init: e.get("unroll.alpha", if task == Task::Mri { 1.0 } else { 0.5 })?,
            beta: e.get("unroll.beta", ud.beta)?,
            loss: e.get("unroll.loss", ud.loss)?,
        };
        let mut prox = ProximalConfig::default();
        if let Some(arch) = e.opt("prox.arch")? {
            prox.arch = arch;
            if arch == crate::prox::Architecture::Chain {
                let c = ProximalConfig::chain(prox.chain_layers, prox.chain_kernel, prox.feature_maps);
                prox.activation = c.activation;
                prox.normalization = c.normalization;
            }
        }
        prox.num_res_blocks = e.get("prox.res_blocks", prox.num_res_blocks)?;
        prox.feature_maps = e.get("prox.features", prox.feature_maps)?;
        prox.chain_layers = e.get("prox.chain_layers", prox.chain_layers)?;
        prox.chain_kernel = e.get("prox.chain_kernel", prox.chain_kernel)?;
        prox.activation = e.get("prox.activation", prox.activation)?;
        prox.normalization = e.get("prox.normalization", prox.normalization)?;

        let td = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: e.get("train.lr", td.learning_rate)?,
            halving_period: e.get("train.halving_period", td.halving_period)?,
            beta1: e.get("train.beta1", td.beta1)?,
            beta2: e.get("train.beta2", td.beta2)?,
            eps: e.get("train.eps", td.eps)?,
            batch_size: e.get("train.batch_size", td.batch_size)?,
            epochs: e.get("train.epochs", td.epochs)?,
            seed: e.get("train.seed", seed.wrapping_add(2))?,
            checkpoint_every: e.get("train.checkpoint_every", 0)?,
            checkpoint_path: None,
        };
        let csd = CsConfig::default();
        let cs_lambda: Option<f32> = e.opt("cs.lambda")?;
        let cs = CsConfig {
            lambda: cs_lambda.unwrap_or(csd.lambda),
            iterations: e.get("cs.iterations", csd.iterations)?,
            solver: e.get::<Solver>("cs.solver", csd.solver)?,
            levels: e.get("cs.levels", csd.levels)?,
        };
        let cfg = Self {
            task,
            image_size,
            seed,
            out_dir: PathBuf::from(e.raw("out_dir").unwrap_or("out")),
            threads: e.get("threads", 1)?,
            data,
            mask,
            unroll,
            train,
            prox,
            cs,
            cs_lambda,
            cs_grid_points: e.get("cs.grid_points", 8)?,
            analyze: AnalyzeConfig {
                debias_iters: e.get("analyze.debias_iters", 200)?,
                debias_tol: e.get("analyze.debias_tol", 1e-6)?,
            },
            sweep: parse_grid(e.raw("sweep.grid").unwrap_or("1x1,3x1"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&parse_entries(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| NpgdError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(NpgdError::Config(m));
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return cfg_err(format!("image_size must be a power of two >= 8, got {}", self.image_size));
        }
        if self.threads == 0 {
            return cfg_err("threads must be at least 1".into());
        }
        if self.data.test_count == 0 {
            return cfg_err("data.test_count must be at least 1".into());
        }
        if self.data.source == DataSource::Synthetic && self.data.count == 0 {
            return Err(NpgdError::EmptyDataset("data.count is 0".into()));
        }
        if self.data.source == DataSource::Synthetic && self.data.count <= self.data.test_count {
            return cfg_err(format!(
                "data.count ({}) must exceed data.test_count ({})",
                self.data.count, self.data.test_count
            ));
        }
        self.data.phantom.validate()?;
        if self.task == Task::Mri {
            if !(self.mask.rate > 0.0 && self.mask.rate <= 1.0) {
                return cfg_err(format!("mask.rate must lie in (0, 1], got {}", self.mask.rate));
            }
            if !(self.mask.center_fraction >= 0.0 && self.mask.center_fraction < self.mask.rate) {
                return cfg_err("mask.center_fraction must lie in [0, mask.rate)".into());
            }
        }
        self.unroll.validate()?;
        self.prox.validate()?;
        self.train.validate()?;
        if self.cs_lambda.is_some() {
            self.cs.validate()?;
        } else {
            CsConfig { lambda: 1.0, ..self.cs.clone() }.validate()?;
            if self.cs_grid_points == 0 {
                return cfg_err("cs.grid_points must be at least 1".into());
            }
        }
        if !self.image_size.is_multiple_of(1 << self.cs.levels.min(30)) {
            return cfg_err(format!("cs.levels = {} does not divide image_size", self.cs.levels));
        }
        if self.sweep.is_empty() {
            return cfg_err("sweep.grid is empty".into());
        }
        Ok(())
    }

    /// Entries recorded in checkpoints so later commands can detect mismatches.
    pub fn checkpoint_entries(&self) -> BTreeMap<String, String> {
        let mut m = self.unroll.to_entries();
        m.insert("task".into(), self.task.to_string());
        m.insert("image_size".into(), self.image_size.to_string());
        m
    }
}
