//! Synthetic ellipse phantoms and on-disk image datasets.
//!
//! A complex image is stored as two 16-bit PGM files, `<stem>_re.pgm` and
//! `<stem>_im.pgm`, with values in `[-1, 1]` mapped linearly onto `[0, 65535]`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use crate::complex::ComplexImage;
use crate::error::{NpgdError, Result};
use crate::pgm::Pgm;
use crate::rng::XorShift64Star;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    pub intensity: (f64, f64),
    /// Multiply by a random smooth unit-modulus phase.
    pub smooth_phase: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            min_ellipses: 3,
            max_ellipses: 8,
            intensity: (0.1, 0.8),
            smooth_phase: false,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_ellipses == 0 || self.min_ellipses > self.max_ellipses {
            return Err(NpgdError::Config(format!(
                "ellipse count range [{}, {}] is invalid",
                self.min_ellipses, self.max_ellipses
            )));
        }
        let (lo, hi) = self.intensity;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(NpgdError::Config(format!("intensity range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// One `size x size` phantom: a large body ellipse plus smaller randomly
/// placed and oriented ellipses, summed and clipped to `[0, 1]`.
pub fn phantom(size: usize, spec: &PhantomSpec, seed: u64) -> Result<ComplexImage> {
    spec.validate()?;
    if size == 0 {
        return Err(NpgdError::Dimension {
            axis: "size",
            size,
            requirement: "must be positive",
        });
    }
    let mut rng = XorShift64Star::derive(seed, 0x5048_414e);
    let count = spec.min_ellipses + rng.below(spec.max_ellipses - spec.min_ellipses + 1);
    let (lo, hi) = spec.intensity;
    let mut shapes = Vec::with_capacity(count);
    for k in 0..count {
        let angle = rng.uniform(0.0, PI);
        let (cx, cy, a, b) = if k == 0 {
            (rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.65, 0.9), rng.uniform(0.55, 0.8))
        } else {
            (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0.08, 0.35), rng.uniform(0.05, 0.25))
        };
        shapes.push(Ellipse {
            cx,
            cy,
            a,
            b,
            cos: angle.cos(),
            sin: angle.sin(),
            value: rng.uniform(lo, hi),
        });
    }
    let phase = if spec.smooth_phase {
        Some([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5), rng.uniform(-PI, PI)])
    } else {
        None
    };
    let coord = |i: usize| (2.0 * i as f64 + 1.0) / size as f64 - 1.0;
    Ok(ComplexImage::from_fn(size, size, |i, j| {
        let (y, x) = (coord(i), coord(j));
        let m: f64 = shapes.iter().filter(|e| e.contains(x, y)).map(|e| e.value).sum();
        let m = m.clamp(0.0, 1.0);
        match phase {
            None => (m as f32, 0.0),
            Some([p, q, r, c]) => {
                let phi = PI * (p * x + q * y + r * x * y) + c;
                ((m * phi.cos()) as f32, (m * phi.sin()) as f32)
            }
        }
    }))
}

pub fn phantoms(count: usize, size: usize, spec: &PhantomSpec, seed: u64) -> Result<Vec<ComplexImage>> {
    if count == 0 {
        return Err(NpgdError::EmptyDataset("requested 0 phantoms".into()));
    }
    (0..count)
        .map(|i| phantom(size, spec, XorShift64Star::derive(seed, i as u64).next_u64()))
        .collect()
}

fn encode(v: f32) -> u16 {
    (((v.clamp(-1.0, 1.0) as f64 + 1.0) / 2.0 * 65535.0).round()) as u16
}

fn decode(p: u16) -> f32 {
    (p as f64 / 65535.0 * 2.0 - 1.0) as f32
}

fn channel_to_pgm(t: &Tensor, h: usize, w: usize) -> Pgm {
    Pgm::new(w, h, u16::MAX, t.data().iter().map(|&v| encode(v)).collect()).expect("pixel count matches")
}

/// The image exactly as it reads back after a write.
pub fn quantize(x: &ComplexImage) -> ComplexImage {
    let q = |t: &Tensor| t.map(|v| decode(encode(v)));
    ComplexImage::new(q(x.re()), q(x.im())).expect("same dims")
}

pub fn write_complex_pgm(x: &ComplexImage, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let (h, w) = x.dims();
    let dir = dir.as_ref();
    channel_to_pgm(x.re(), h, w).write(dir.join(format!("{stem}_re.pgm")))?;
    channel_to_pgm(x.im(), h, w).write(dir.join(format!("{stem}_im.pgm")))?;
    Ok(())
}

fn pgm_to_signed(p: &Pgm) -> Tensor {
    let scale = 65535.0 / p.maxval as f64;
    let data = p
        .pixels
        .iter()
        .map(|&v| decode((v as f64 * scale).round() as u16))
        .collect();
    Tensor::new(&[p.height, p.width], data).expect("pixel count matches")
}

pub fn read_complex_pgm(dir: impl AsRef<Path>, stem: &str) -> Result<ComplexImage> {
    let dir = dir.as_ref();
    let re = Pgm::read(dir.join(format!("{stem}_re.pgm")))?;
    let im = Pgm::read(dir.join(format!("{stem}_im.pgm")))?;
    if (re.width, re.height) != (im.width, im.height) {
        return Err(NpgdError::Format(format!("{stem}: real and imaginary parts differ in size")));
    }
    ComplexImage::new(pgm_to_signed(&re), pgm_to_signed(&im))
}

/// Write `images` as `img0000_re.pgm`, `img0000_im.pgm`, ... into `dir`.
pub fn write_dataset(images: &[ComplexImage], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, x) in images.iter().enumerate() {
        write_complex_pgm(x, dir, &format!("img{i:04}"))?;
    }
    Ok(())
}

/// Stems of every `<stem>_re.pgm` in `dir`, sorted.
pub fn dataset_stems(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_re.pgm")).map(String::from))
        .collect();
    stems.sort();
    Ok(stems)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<ComplexImage>> {
    let dir = dir.as_ref();
    let stems = dataset_stems(dir)?;
    if stems.is_empty() {
        return Err(NpgdError::EmptyDataset(format!("no *_re.pgm images in {}", dir.display())));
    }
    stems.iter().map(|s| read_complex_pgm(dir, s)).collect()
}

/// Centre `size x size` crop of a grayscale image, scaled to `[0, 1]`.
pub fn ingest_grayscale(p: &Pgm, size: usize) -> Result<ComplexImage> {
    for (axis, n) in [("height", p.height), ("width", p.width)] {
        if n < size {
            return Err(NpgdError::Dimension {
                axis,
                size: n,
                requirement: "must be at least the configured image size",
            });
        }
    }
    let (top, left) = ((p.height - size) / 2, (p.width - size) / 2);
    let max = p.maxval.max(1) as f32;
    Ok(ComplexImage::from_fn(size, size, |i, j| {
        (p.pixels[(top + i) * p.width + left + j] as f32 / max, 0.0)
    }))
}

/// Every `.pgm` file directly inside `dir`, sorted by name, centre-cropped.
pub fn ingest_directory(dir: impl AsRef<Path>, size: usize) -> Result<Vec<ComplexImage>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(NpgdError::EmptyDataset(format!("no .pgm images in {}", dir.display())));
    }
    paths.iter().map(|p| ingest_grayscale(&Pgm::read(p)?, size)).collect()
}
