//! Variable-density Cartesian undersampling masks.
//!
//! Bits are stored in the native FFT layout (DC at index `(0, 0)`); radial
//! distances are measured on signed, centred frequency coordinates. The
//! PGM export shows the centred (fft-shifted) view; the raw bitmask file
//! keeps the native layout.

use std::fs;
use std::path::Path;

use crate::error::{NpgdError, Result};
use crate::pgm::Pgm;
use crate::rng::XorShift64Star;

pub const DEFAULT_RATE: f64 = 0.2;
pub const DEFAULT_CENTER_FRACTION: f64 = 0.04;
pub const DEFAULT_DECAY: f64 = 3.0;

const BITMASK_MAGIC: &[u8; 8] = b"NPGDMASK";

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    rate: f64,
    center_fraction: f64,
    decay: f64,
    seed: u64,
}

/// Signed frequency for FFT index `i` on an axis of length `n`.
fn signed_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

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

/// Side length of the fully sampled low-frequency square.
pub fn center_side(height: usize, width: usize, center_fraction: f64) -> usize {
    ((center_fraction * (height * width) as f64).sqrt().round() as usize).min(height.min(width))
}

fn in_center(u: i64, side: usize) -> bool {
    let lo = -((side / 2) as i64);
    u >= lo && u < lo + side as i64
}

pub fn generate_vardens_mask(
    height: usize,
    width: usize,
    rate: f64,
    center_fraction: f64,
    decay: f64,
    seed: u64,
) -> Result<SamplingMask> {
    check_pow2("height", height)?;
    check_pow2("width", width)?;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(NpgdError::Parameter(format!("sampling rate must lie in (0, 1], got {rate}")));
    }
    if !(center_fraction >= 0.0 && center_fraction < rate) {
        return Err(NpgdError::Parameter(format!(
            "center fraction must lie in [0, rate), got {center_fraction} with rate {rate}"
        )));
    }
    if !(decay >= 0.0 && decay.is_finite()) {
        return Err(NpgdError::Parameter(format!("decay must be non-negative, got {decay}")));
    }
    let total = height * width;
    let quota = (rate * total as f64).round() as usize;
    let side = center_side(height, width, center_fraction);
    if side * side > quota {
        return Err(NpgdError::Parameter(format!(
            "center square of {} samples exceeds the quota of {quota}",
            side * side
        )));
    }

    let mut bits = vec![false; total];
    let r_max = (((height / 2).pow(2) + (width / 2).pow(2)) as f64).sqrt();
    let mut rng = XorShift64Star::new(seed);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(total);
    for i in 0..height {
        let u = signed_freq(i, height);
        for j in 0..width {
            let v = signed_freq(j, width);
            let idx = i * width + j;
            if in_center(u, side) && in_center(v, side) {
                bits[idx] = true;
                continue;
            }
            let draw = 1.0 - rng.next_f64();
            let r = (((u * u + v * v) as f64).sqrt() / r_max).min(1.0);
            let weight = (1.0 - r).powf(decay);
            // Efraimidis-Spirakis key: the k largest ln(U)/w form a weighted sample without replacement.
            let key = if weight > 0.0 { draw.ln() / weight } else { f64::NEG_INFINITY };
            candidates.push((key, idx));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, idx) in candidates.iter().take(quota - side * side) {
        bits[idx] = true;
    }
    Ok(SamplingMask {
        height,
        width,
        bits,
        rate,
        center_fraction,
        decay,
        seed,
    })
}

impl SamplingMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self::from_bits(height, width, vec![true; height * width]).expect("consistent")
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width || height == 0 || width == 0 {
            return Err(NpgdError::Shape(format!(
                "{} mask bits for a {height}x{width} grid",
                bits.len()
            )));
        }
        let rate = bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64;
        Ok(Self {
            height,
            width,
            bits,
            rate,
            center_fraction: 0.0,
            decay: 0.0,
            seed: 0,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn center_fraction(&self) -> f64 {
        self.center_fraction
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_sampled(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Whether native index `(row, col)` lies in the fully sampled centre square.
    pub fn in_center_square(&self, row: usize, col: usize) -> bool {
        let side = center_side(self.height, self.width, self.center_fraction);
        in_center(signed_freq(row, self.height), side) && in_center(signed_freq(col, self.width), side)
    }

    /// Centred view as an 8-bit graymap, 255 = sampled.
    pub fn to_pgm(&self) -> Pgm {
        let (h, w) = (self.height, self.width);
        let mut px = vec![0u16; h * w];
        for i in 0..h {
            for j in 0..w {
                if self.bits[i * w + j] {
                    px[((i + h / 2) % h) * w + (j + w / 2) % w] = 255;
                }
            }
        }
        Pgm::new(w, h, 255, px).expect("valid raster")
    }

    pub fn from_pgm(img: &Pgm) -> Result<Self> {
        let (h, w) = (img.height, img.width);
        let threshold = img.maxval / 2;
        let mut bits = vec![false; h * w];
        for i in 0..h {
            for j in 0..w {
                bits[((i + h - h / 2) % h) * w + (j + w - w / 2) % w] = img.pixels[i * w + j] > threshold;
            }
        }
        Self::from_bits(h, w, bits)
    }

    /// Raw bitmask: magic, `u32` height and width (little-endian), then row-major bits MSB-first.
    pub fn to_bitmask_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.bits.len().div_ceil(8));
        out.extend_from_slice(BITMASK_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for chunk in self.bits.chunks(8) {
            let mut byte = 0u8;
            for (k, &b) in chunk.iter().enumerate() {
                if b {
                    byte |= 0x80 >> k;
                }
            }
            out.push(byte);
        }
        out
    }

    pub fn from_bitmask_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != BITMASK_MAGIC {
            return Err(NpgdError::Format("missing NPGDMASK header".into()));
        }
        let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let n = h * w;
        let body = &bytes[16..];
        if body.len() != n.div_ceil(8) {
            return Err(NpgdError::Corruption(format!(
                "bitmask body has {} bytes, expected {}",
                body.len(),
                n.div_ceil(8)
            )));
        }
        let bits = (0..n).map(|k| body[k / 8] & (0x80 >> (k % 8)) != 0).collect();
        Self::from_bits(h, w, bits)
    }

    pub fn write_bitmask(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bitmask_bytes())?;
        Ok(())
    }

    pub fn read_bitmask(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bitmask_bytes(&fs::read(path)?)
    }
}
