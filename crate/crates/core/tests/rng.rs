use npgd::rng::*;

#[test]
fn same_seed_same_stream() {
    let mut a = XorShift64Star::new(42);
    let mut b = XorShift64Star::new(42);
    for _ in 0..100 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    let mut c = XorShift64Star::new(43);
    assert_ne!(XorShift64Star::new(42).next_u64(), c.next_u64());
}

#[test]
fn uniform_in_unit_interval() {
    let mut r = XorShift64Star::new(0);
    let mean: f64 = (0..10_000).map(|_| r.next_f64()).sum::<f64>() / 10_000.0;
    assert!((mean - 0.5).abs() < 0.02);
}

#[test]
fn normal_moments() {
    let mut r = XorShift64Star::new(9);
    let xs: Vec<f64> = (0..20_000).map(|_| r.normal()).collect();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    assert!(m.abs() < 0.03);
    assert!((v - 1.0).abs() < 0.05);
}

#[test]
fn permutation_is_bijection() {
    let mut r = XorShift64Star::new(5);
    let mut p = r.permutation(50);
    p.sort_unstable();
    assert_eq!(p, (0..50).collect::<Vec<_>>());
}
