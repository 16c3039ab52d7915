use proptest::prelude::*;

use sfdqn_core::tactile_image::*;

/// Reference pipeline in floating point: per-pixel channel mean rounded half
/// up, then each 10×10 block mean of those rounded values, rounded half up.
fn reference_preprocess(raw: &RawImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(TACTILE_PIXELS);
    for by in 0..TACTILE_HEIGHT {
        for bx in 0..TACTILE_WIDTH {
            let mut sum = 0.0;
            for y in by * 10..by * 10 + 10 {
                for x in bx * 10..bx * 10 + 10 {
                    let [r, g, b] = raw.pixel(x, y);
                    sum += ((r as f64 + g as f64 + b as f64) / 3.0 + 0.5).floor();
                }
            }
            out.push((sum / 100.0 + 0.5).floor() as u8);
        }
    }
    out
}

fn raw_from(seed: u64, spread: u8) -> RawImage {
    // cheap deterministic texture: a linear congruential stream
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut raw = RawImage::filled(0);
    for v in raw.data_mut() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        *v = ((state >> 33) % (spread as u64 + 1)) as u8;
    }
    raw
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn preprocess_matches_reference(seed in any::<u64>(), spread in 1u8..=255) {
        let raw = raw_from(seed, spread);
        let img = preprocess(&raw).unwrap();
        prop_assert_eq!(img.pixels().to_vec(), reference_preprocess(&raw));
    }
}

proptest! {
    #[test]
    fn uniform_frames_stay_uniform(v in any::<u8>()) {
        let img = preprocess(&RawImage::filled(v)).unwrap();
        prop_assert!(img.pixels().iter().all(|&p| p == v));
    }

    #[test]
    fn threshold_is_symmetric_and_counts_exceedances(
        a in prop::collection::vec(any::<u8>(), TACTILE_PIXELS),
        b in prop::collection::vec(any::<u8>(), TACTILE_PIXELS),
        tau in any::<u8>(),
    ) {
        let ia = TactileImage::from_pixels(&a).unwrap();
        let ib = TactileImage::from_pixels(&b).unwrap();
        let m = subtract_and_threshold(&ia, &ib, tau);
        prop_assert_eq!(&m, &subtract_and_threshold(&ib, &ia, tau));
        let expected = a.iter().zip(&b).filter(|(x, y)| (**x as i16 - **y as i16).abs() > tau as i16).count();
        prop_assert_eq!(m.count(), expected);
        prop_assert_eq!(frame_contact_rate(&ia, &ib, tau), contact_rate(&m));
    }

    #[test]
    fn contact_rate_is_per_mille(count in 0usize..=TACTILE_PIXELS) {
        let bits: Vec<bool> = (0..TACTILE_PIXELS).map(|i| i < count).collect();
        let cr = contact_rate(&BinaryContactMask::from_bits(&bits).unwrap()).value();
        prop_assert_eq!(cr, 1000.0 * count as f64 / TACTILE_PIXELS as f64);
        prop_assert!((0.0..=1000.0).contains(&cr));
    }

    #[test]
    fn raising_tau_never_adds_contact(
        a in prop::collection::vec(any::<u8>(), TACTILE_PIXELS),
        tau in 0u8..255,
    ) {
        let img = TactileImage::from_pixels(&a).unwrap();
        let bg = TactileImage::filled(128);
        prop_assert!(frame_contact_rate(&img, &bg, tau + 1).value() <= frame_contact_rate(&img, &bg, tau).value());
    }
}

#[test]
fn wrong_raw_size_is_a_shape_error() {
    assert!(RawImage::new(640, 479, vec![0; 640 * 479 * 3]).is_ok());
    let raw = RawImage::new(640, 479, vec![0; 640 * 479 * 3]).unwrap();
    assert!(matches!(preprocess(&raw), Err(sfdqn_core::Error::Shape { .. })));
}

#[test]
fn identical_frame_has_no_contact() {
    let img = preprocess(&raw_from(3, 255)).unwrap();
    assert_eq!(frame_contact_rate(&img, &img, 0), ContactRate::ZERO);
}

#[test]
fn pgm_round_trip() {
    let img = preprocess(&raw_from(5, 200)).unwrap();
    let mut bytes = Vec::new();
    img.write_pgm(&mut bytes).unwrap();
    assert!(bytes.starts_with(b"P5\n64 48\n255\n"));
    assert_eq!(TactileImage::read_pgm(bytes.as_slice()).unwrap(), img);
}
