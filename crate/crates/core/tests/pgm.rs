use npgd::pgm::*;

#[test]
fn p5_round_trip_8_and_16_bit() {
    for maxval in [255u16, 65535] {
        let px: Vec<u16> = (0..12).map(|i| (i * 997 % (maxval as usize + 1)) as u16).collect();
        let img = Pgm::new(4, 3, maxval, px).unwrap();
        assert_eq!(Pgm::parse(&img.to_p5_bytes()).unwrap(), img);
    }
}

#[test]
fn parses_ascii_with_comments() {
    let text = b"P2\n# a comment\n2 2\n# another\n15\n0 5\n10 15\n";
    let img = Pgm::parse(text).unwrap();
    assert_eq!(img.pixels, vec![0, 5, 10, 15]);
    assert_eq!(img.maxval, 15);
}

#[test]
fn rejects_bad_input() {
    assert!(Pgm::parse(b"P6\n1 1\n255\n\0\0\0").is_err());
    assert!(Pgm::parse(b"P5\n4 4\n255\n\0\0").is_err());
}
