#![allow(dead_code)]

use npgd::rng::XorShift64Star;
use npgd::Tensor;

// Independent f64 reference implementations used as finite-difference oracles.

pub fn conv_ref(x: &[f64], xs: [usize; 3], k: &[f64], ks: [usize; 4], b: &[f64], pad: usize) -> Vec<f64> {
    let [ci, h, w] = xs;
    let [co, _, kh, _] = ks;
    let (ho, wo) = (h + 2 * pad - kh + 1, w + 2 * pad - kh + 1);
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for y in 0..ho {
            for xx in 0..wo {
                let mut s = b[o];
                for c in 0..ci {
                    for i in 0..kh {
                        for j in 0..kh {
                            let iy = (y + i) as isize - pad as isize;
                            let ix = (xx + j) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += x[(c * h + iy as usize) * w + ix as usize]
                                    * k[((o * ci + c) * kh + i) * kh + j];
                            }
                        }
                    }
                }
                out[(o * ho + y) * wo + xx] = s;
            }
        }
    }
    out
}

pub fn fd_grad(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(analytic: &Tensor, oracle: &[f64]) -> f64 {
    let num: f64 = analytic
        .data()
        .iter()
        .zip(oracle)
        .map(|(&a, &b)| (a as f64 - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = oracle.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    num / den
}

pub fn randn(rng: &mut XorShift64Star, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.normal() as f32).collect()
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}
