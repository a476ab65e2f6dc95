use npgd::sampling::*;
use npgd::NpgdError;

#[test]
fn full_rate_samples_everything() {
    let m = generate_vardens_mask(16, 16, 1.0, 0.1, 3.0, 1).unwrap();
    assert!(m.bits().iter().all(|&b| b));
}

#[test]
fn exact_cardinality_64() {
    let m = generate_vardens_mask(64, 64, 0.2, 0.04, 3.0, 7).unwrap();
    assert_eq!(m.popcount(), 819);
}

#[test]
fn cardinality_and_center_over_grid() {
    for &rate in &[0.05, 0.1, 0.2, 0.33, 0.5, 0.8, 1.0] {
        for &cf in &[0.0, 0.01, 0.04] {
            if cf >= rate {
                continue;
            }
            for &(h, w) in &[(32, 32), (16, 64), (64, 64)] {
                let m = generate_vardens_mask(h, w, rate, cf, 3.0, 11).unwrap();
                assert_eq!(m.popcount(), (rate * (h * w) as f64).round() as usize);
                for i in 0..h {
                    for j in 0..w {
                        if m.in_center_square(i, j) {
                            assert!(m.is_sampled(i, j));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn deterministic_per_seed() {
    let a = generate_vardens_mask(32, 32, 0.2, 0.04, 3.0, 5).unwrap();
    let b = generate_vardens_mask(32, 32, 0.2, 0.04, 3.0, 5).unwrap();
    let c = generate_vardens_mask(32, 32, 0.2, 0.04, 3.0, 6).unwrap();
    assert_eq!(a.to_bitmask_bytes(), b.to_bitmask_bytes());
    let differs_outside = (0..32)
        .flat_map(|i| (0..32).map(move |j| (i, j)))
        .any(|(i, j)| !a.in_center_square(i, j) && a.is_sampled(i, j) != c.is_sampled(i, j));
    assert!(differs_outside);
}

#[test]
fn parameter_errors() {
    assert!(matches!(generate_vardens_mask(16, 16, 0.0, 0.0, 3.0, 1), Err(NpgdError::Parameter(_))));
    assert!(matches!(generate_vardens_mask(16, 16, 1.5, 0.0, 3.0, 1), Err(NpgdError::Parameter(_))));
    assert!(matches!(generate_vardens_mask(16, 16, 0.2, 0.2, 3.0, 1), Err(NpgdError::Parameter(_))));
    assert!(matches!(generate_vardens_mask(24, 16, 0.2, 0.0, 3.0, 1), Err(NpgdError::Dimension { .. })));
}

#[test]
fn density_decreases_with_radius() {
    let (h, w) = (32usize, 32usize);
    let bands = 4;
    let mut hits = vec![0.0f64; bands];
    let mut counts = vec![0.0f64; bands];
    let r_max = ((16 * 16 + 16 * 16) as f64).sqrt();
    for seed in 0..200 {
        let m = generate_vardens_mask(h, w, 0.25, 0.02, 3.0, seed).unwrap();
        for i in 0..h {
            for j in 0..w {
                if m.in_center_square(i, j) {
                    continue;
                }
                let (u, v) = (signed_freq(i, h), signed_freq(j, w));
                let r = ((u * u + v * v) as f64).sqrt() / r_max;
                let b = ((r * bands as f64) as usize).min(bands - 1);
                counts[b] += 1.0;
                if m.is_sampled(i, j) {
                    hits[b] += 1.0;
                }
            }
        }
    }
    let freq: Vec<f64> = hits.iter().zip(&counts).map(|(h, c)| h / c).collect();
    for k in 1..bands {
        assert!(freq[k - 1] >= freq[k] + 0.01, "band densities {freq:?}");
    }
}

#[test]
fn file_round_trips() {
    let m = generate_vardens_mask(16, 32, 0.3, 0.04, 2.0, 9).unwrap();
    let back = SamplingMask::from_bitmask_bytes(&m.to_bitmask_bytes()).unwrap();
    assert_eq!(back.bits(), m.bits());
    let pgm = m.to_pgm();
    assert_eq!(pgm.pixels.iter().filter(|&&p| p == 255).count(), m.popcount());
    assert_eq!(SamplingMask::from_pgm(&pgm).unwrap().bits(), m.bits());
    // DC lands at the centre of the exported view.
    assert_eq!(pgm.pixels[8 * 32 + 16], 255);
}

#[test]
fn bitmask_layout_is_msb_first() {
    let mut bits = vec![false; 12];
    bits[0] = true;
    bits[9] = true;
    let m = SamplingMask::from_bits(3, 4, bits).unwrap();
    let bytes = m.to_bitmask_bytes();
    assert_eq!(&bytes[..8], b"NPGDMASK");
    assert_eq!(&bytes[8..16], &[3, 0, 0, 0, 4, 0, 0, 0]);
    assert_eq!(&bytes[16..], &[0x80, 0x40]);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(SamplingMask::from_bitmask_bytes(&bad), Err(NpgdError::Format(_))));
    assert!(matches!(
        SamplingMask::from_bitmask_bytes(&bytes[..17]),
        Err(NpgdError::Corruption(_))
    ));
}

/// Signed frequency index of FFT bin `i` out of `n`.
fn signed_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
