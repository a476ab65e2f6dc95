use npgd::data::*;
use npgd::pgm::Pgm;
use npgd::NpgdError;

#[test]
fn phantoms_are_deterministic_and_bounded() {
    let spec = PhantomSpec::default();
    let a = phantom(32, &spec, 7).unwrap();
    assert_eq!(a, phantom(32, &spec, 7).unwrap());
    assert_ne!(a, phantom(32, &spec, 8).unwrap());
    let mag = a.magnitude();
    assert!(mag.data().iter().all(|&m| (0.0..=1.0 + 1e-6).contains(&m)));
    assert!(mag.data().iter().any(|&m| m > 0.0));
    assert!(a.im().data().iter().all(|&v| v == 0.0));
}

#[test]
fn smooth_phase_keeps_magnitude_bounded() {
    let spec = PhantomSpec { smooth_phase: true, ..PhantomSpec::default() };
    let a = phantom(16, &spec, 3).unwrap();
    assert!(a.im().data().iter().any(|&v| v != 0.0));
    assert!(a.magnitude().data().iter().all(|&m| m <= 1.0 + 1e-5));
}

#[test]
fn empty_and_invalid_requests() {
    let spec = PhantomSpec::default();
    assert!(matches!(phantoms(0, 16, &spec, 1), Err(NpgdError::EmptyDataset(_))));
    assert_eq!(phantoms(3, 16, &spec, 1).unwrap().len(), 3);
    let bad = PhantomSpec { min_ellipses: 5, max_ellipses: 3, ..spec.clone() };
    assert!(phantom(16, &bad, 1).is_err());
    let bad = PhantomSpec { intensity: (0.0, 0.5), ..spec };
    assert!(phantom(16, &bad, 1).is_err());
}

#[test]
fn dataset_round_trip_is_quantized_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec { smooth_phase: true, ..PhantomSpec::default() };
    let imgs = phantoms(4, 16, &spec, 2).unwrap();
    write_dataset(&imgs, dir.path()).unwrap();
    assert_eq!(dataset_stems(dir.path()).unwrap(), vec!["img0000", "img0001", "img0002", "img0003"]);
    let back = read_dataset(dir.path()).unwrap();
    for (a, b) in imgs.iter().zip(&back) {
        assert_eq!(&quantize(a), b);
        assert!(a.max_abs_diff(b) <= 1.0 / 65535.0 + 1e-7);
    }
    assert_eq!(quantize(&back[0]), back[0]);
}

#[test]
fn gendata_twice_is_byte_identical() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let imgs = phantoms(10, 16, &PhantomSpec::default(), 7).unwrap();
    write_dataset(&imgs, d1.path()).unwrap();
    write_dataset(&phantoms(10, 16, &PhantomSpec::default(), 7).unwrap(), d2.path()).unwrap();
    for stem in dataset_stems(d1.path()).unwrap() {
        for part in ["re", "im"] {
            let name = format!("{stem}_{part}.pgm");
            assert_eq!(std::fs::read(d1.path().join(&name)).unwrap(), std::fs::read(d2.path().join(&name)).unwrap());
        }
    }
}

#[test]
fn empty_directory_is_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(NpgdError::EmptyDataset(_))));
    assert!(matches!(ingest_directory(dir.path(), 8), Err(NpgdError::EmptyDataset(_))));
}

#[test]
fn grayscale_ingestion_center_crops() {
    let px: Vec<u16> = (0..12 * 10).map(|i| (i % 256) as u16).collect();
    let p = Pgm::new(12, 10, 255, px).unwrap();
    let img = ingest_grayscale(&p, 8).unwrap();
    assert_eq!(img.dims(), (8, 8));
    // top = 1, left = 2
    assert_eq!(img.re().data()[0], (12 + 2) as f32 / 255.0);
    assert!(img.im().data().iter().all(|&v| v == 0.0));
    assert!(ingest_grayscale(&p, 16).is_err());

    let dir = tempfile::tempdir().unwrap();
    p.write(dir.path().join("a.pgm")).unwrap();
    assert_eq!(ingest_directory(dir.path(), 8).unwrap(), vec![img]);
}
