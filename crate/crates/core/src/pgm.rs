//! Netpbm graymap (PGM) reading and writing, 8- and 16-bit, P2 and P5.

use std::fs;
use std::path::Path;

use crate::error::{NpgdError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl Pgm {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self> {
        if maxval == 0 || pixels.len() != width * height || pixels.iter().any(|&p| p > maxval) {
            return Err(NpgdError::Format("inconsistent PGM raster".into()));
        }
        Ok(Self {
            width,
            height,
            maxval,
            pixels,
        })
    }

    /// Binary (P5) encoding; samples above 255 use two big-endian bytes.
    pub fn to_p5_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.pixels.iter().map(|&p| p as u8));
        } else {
            for &p in &self.pixels {
                out.extend_from_slice(&p.to_be_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_p5_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let magic = next_token(bytes, &mut pos)?;
        let binary = match magic.as_str() {
            "P5" => true,
            "P2" => false,
            other => return Err(NpgdError::Format(format!("not a PGM file (magic {other:?})"))),
        };
        let width = parse_num(&next_token(bytes, &mut pos)?)?;
        let height = parse_num(&next_token(bytes, &mut pos)?)?;
        let maxval = parse_num(&next_token(bytes, &mut pos)?)?;
        if maxval == 0 || maxval > 65535 || width == 0 || height == 0 {
            return Err(NpgdError::Format("invalid PGM header".into()));
        }
        let n = width * height;
        let pixels = if binary {
            pos += 1;
            let wide = maxval > 255;
            let need = if wide { 2 * n } else { n };
            let raster = bytes
                .get(pos..pos + need)
                .ok_or_else(|| NpgdError::Format("truncated PGM raster".into()))?;
            if wide {
                raster.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
            } else {
                raster.iter().map(|&b| b as u16).collect()
            }
        } else {
            let mut px = Vec::with_capacity(n);
            for _ in 0..n {
                px.push(parse_num(&next_token(bytes, &mut pos)?)? as u16);
            }
            px
        };
        Self::new(width, height, maxval as u16, pixels)
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&c) = bytes.get(*pos) {
                    *pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(NpgdError::Format("unexpected end of PGM header".into())),
        }
    }
    let start = *pos;
    while let Some(c) = bytes.get(*pos) {
        if c.is_ascii_whitespace() {
            break;
        }
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num(tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| NpgdError::Format(format!("bad PGM number {tok:?}")))
}
