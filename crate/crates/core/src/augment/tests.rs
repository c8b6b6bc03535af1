use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::seed::rng_for;

fn noise(h: usize, w: usize, c: usize, key: u64) -> Image {
    let mut rng = rng_for(&[key]);
    Image::from_fn(h, w, c, |_, _, _| rng.gen()).unwrap()
}

fn smooth(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 1, |_, y, x| 0.5 + 0.3 * ((y as f64) / 5.0).sin() * ((x as f64) / 7.0).cos()).unwrap()
}

fn full_policy() -> AugmentPolicy {
    AugmentPolicy {
        crop: Some(CropParams::default()),
        color: Some(ColorParams { strength: 1.0 }),
        rotation: Some(RotationParams::default()),
        blur: Some(BlurParams { probability: 1.0, ..Default::default() }),
        equalize: true,
        elastic: Some(ElasticParams::default()),
        out_size: Some([12, 10]),
    }
}

#[test]
fn full_window_crop_is_identity() {
    let img = noise(9, 7, 3, 1);
    let mut rng = rng_for(&[2]);
    let out = random_crop_resize(&img, &mut rng, [1.0, 1.0], [1.0, 1.0], [9, 7]).unwrap();
    assert_eq!(out, img);
}

#[test]
fn checkerboard_corner_crop() {
    let img = Image::from_fn(4, 4, 1, |_, y, x| ((y + x) % 2) as f64).unwrap();
    let win = CropWindow { top: 0.0, left: 0.0, height: 0.5, width: 0.5 };
    let out = crop_resize(&img, win, 2, 2, false).unwrap();
    assert_eq!(out.pixels(), &[0.0, 1.0, 1.0, 0.0]);
    let flipped = crop_resize(&img, win, 2, 2, true).unwrap();
    assert_eq!(flipped.pixels(), &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn crop_rejects_empty_output() {
    let img = noise(4, 4, 1, 3);
    let mut rng = rng_for(&[4]);
    assert!(random_crop_resize(&img, &mut rng, [0.5, 1.0], [1.0, 1.0], [0, 4]).is_err());
    assert!(random_crop_resize(&img, &mut rng, [0.0, 1.0], [1.0, 1.0], [4, 4]).is_err());
}

#[test]
fn crop_area_mean_matches_midpoint() {
    for (k, range) in [[0.08, 1.0], [0.2, 0.6], [0.5, 1.0]].into_iter().enumerate() {
        let mut rng = rng_for(&[5, k as u64]);
        let n = 10_000;
        let mean = (0..n).map(|_| sample_crop_window(&mut rng, range, [0.75, 4.0 / 3.0]).area()).sum::<f64>() / n as f64;
        let mid = 0.5 * (range[0] + range[1]);
        assert!((mean - mid).abs() < 0.02, "{range:?}: {mean}");
    }
}

#[test]
fn crop_window_stays_inside() {
    let mut rng = rng_for(&[6]);
    for _ in 0..2000 {
        let w = sample_crop_window(&mut rng, [0.08, 1.0], [0.25, 4.0]);
        assert!(w.top >= 0.0 && w.left >= 0.0);
        assert!(w.top + w.height <= 1.0 + 1e-12 && w.left + w.width <= 1.0 + 1e-12);
    }
}

#[test]
fn color_identities() {
    let img = noise(5, 6, 3, 7);
    let mut rng = rng_for(&[8]);
    assert_eq!(color_distort(&img, &mut rng, 0.0), img);
    assert_eq!(adjust_brightness(&img, 0.0), img);
    assert_eq!(adjust_contrast(&img, 1.0), img);
    assert_eq!(adjust_saturation(&img, 1.0), img);
    assert_eq!(adjust_hue(&img, 0.0), img);
    let gray = noise(5, 6, 1, 9);
    assert_eq!(adjust_saturation(&gray, 0.3), gray);
    assert_eq!(adjust_hue(&gray, 0.3), gray);
}

#[test]
fn brightness_and_contrast_examples() {
    let img = Image::filled(3, 3, 1, 0.5).unwrap();
    assert!(adjust_brightness(&img, 0.1).pixels().iter().all(|p| (p - 0.6).abs() < 1e-15));
    let two = Image::new(1, 2, 1, vec![0.25, 0.75]).unwrap();
    assert_eq!(adjust_contrast(&two, 2.0).pixels(), &[0.0, 1.0]);
}

#[test]
fn hue_full_turn_is_identity_up_to_roundoff() {
    let img = noise(4, 4, 3, 10);
    let out = adjust_hue(&img, 1.0);
    for (a, b) in img.pixels().iter().zip(out.pixels()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn saturation_zero_gives_gray() {
    let img = noise(4, 4, 3, 11);
    let out = adjust_saturation(&img, 0.0);
    let n = 16;
    for i in 0..n {
        assert!((out.pixels()[i] - out.pixels()[n + i]).abs() < 1e-12);
        assert!((out.pixels()[i] - out.pixels()[2 * n + i]).abs() < 1e-12);
    }
}

#[test]
fn blur_preserves_constants_and_probability_zero() {
    let img = Image::filled(8, 9, 3, 0.37).unwrap();
    let mut rng = rng_for(&[12]);
    for _ in 0..5 {
        assert_eq!(gaussian_blur(&img, &mut rng, [0.1, 2.0], 0.5, 1.0).unwrap(), img);
    }
    let n = noise(8, 9, 1, 13);
    assert_eq!(gaussian_blur(&n, &mut rng, [0.1, 2.0], 0.5, 0.0).unwrap(), n);
}

#[test]
fn blur_impulse_response() {
    let img = Image::new(1, 5, 1, vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let out = blur_with(&img, 1.0, 3, 3).unwrap();
    let w1 = (-0.5f64).exp();
    let z = 1.0 + 2.0 * w1;
    let expect = [0.0, w1 / z, 1.0 / z, w1 / z, 0.0];
    for (a, b) in out.pixels().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
}

#[test]
fn kernel_side_rule() {
    assert_eq!(kernel_side(0.1, 32), 3);
    assert_eq!(kernel_side(0.1, 224), 23);
    assert_eq!(kernel_side(0.1, 40), 5);
    assert_eq!(kernel_side(0.01, 10), 1);
}

#[test]
fn rotation_examples() {
    let img = noise(6, 5, 3, 14);
    assert_eq!(rotate_by(&img, 0.0), img);
    assert_eq!(rotate_by(&img, 360.0), img);
    let mut rng = rng_for(&[15]);
    assert_eq!(rotate(&img, &mut rng, [0.0, 0.0]), img);

    let sq = Image::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    assert_eq!(rotate_by(&sq, 180.0).pixels(), &[0.4, 0.3, 0.2, 0.1]);

    let m = Image::new(3, 3, 1, (1..=9).map(|v| v as f64 / 10.0).collect()).unwrap();
    // Transpose, then mirror left to right.
    let mut expect = vec![0.0; 9];
    for y in 0..3 {
        for x in 0..3 {
            expect[y * 3 + x] = m.get(0, 2 - x, y);
        }
    }
    assert_eq!(rotate_by(&m, 90.0).pixels(), &expect[..]);
    assert_eq!(rotate_by(&rotate_by(&m, 90.0), 270.0), m);
}

#[test]
fn rotation_fills_corners_with_zero() {
    let img = Image::filled(9, 9, 1, 1.0).unwrap();
    let out = rotate_by(&img, 45.0);
    assert_eq!(out.get(0, 0, 0), 0.0);
    assert_eq!(out.get(0, 4, 4), 1.0);
}

#[test]
fn equalize_examples() {
    let c = Image::filled(4, 4, 1, 0.3).unwrap();
    assert_eq!(histogram_equalize(&c), c);
    let two = Image::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(histogram_equalize(&two), two);
    let rgb = Image::filled(3, 3, 3, 0.7).unwrap();
    assert_eq!(histogram_equalize(&rgb), rgb);
}

#[test]
fn elastic_identities() {
    let img = noise(8, 8, 3, 16);
    let mut rng = rng_for(&[17]);
    assert_eq!(elastic_deform(&img, &mut rng, 0.0, 2.0).unwrap(), img);
    let c = Image::filled(8, 8, 1, 0.42).unwrap();
    assert_eq!(elastic_deform(&c, &mut rng, 5.0, 2.0).unwrap(), c);
    assert!(elastic_deform(&c, &mut rng, -1.0, 2.0).is_err());
}

#[test]
fn elastic_preserves_mean_of_smooth_image() {
    let img = smooth(32, 32);
    let m0 = img.mean();
    for s in 0..100 {
        let mut rng = rng_for(&[18, s]);
        let out = elastic_deform(&img, &mut rng, 2.0, 3.0).unwrap();
        assert!((out.mean() - m0).abs() / m0 < 0.02);
    }
}

#[test]
fn disabled_policy_gives_identical_copies() {
    let img = noise(6, 6, 1, 19);
    let mut rng = rng_for(&[20]);
    let (a, b) = make_view_pair(std::slice::from_ref(&img), &AugmentPolicy::default(), &mut rng).unwrap();
    assert_eq!(a, img);
    assert_eq!(b, img);
}

#[test]
fn view_index_is_pinned() {
    let views: Vec<Image> = (0..4).map(|k| Image::filled(2, 2, 1, k as f64 / 4.0).unwrap()).collect();
    let (a, _) = make_view_pair(&views, &AugmentPolicy::default(), &mut rng_for(&[21])).unwrap();
    let idx = (a.get(0, 0, 0) * 4.0) as usize;
    assert_eq!(idx, 0);
    assert_eq!(select_view(4, &mut rng_for(&[21])), idx);
    assert!(make_view_pair(&[], &AugmentPolicy::default(), &mut rng_for(&[21])).is_err());
}

#[test]
fn crop_only_views_differ_with_output_shape() {
    let img = noise(16, 16, 1, 22);
    let policy = AugmentPolicy { crop: Some(CropParams::default()), out_size: Some([8, 10]), ..Default::default() };
    let (a, b) = make_view_pair(&[img], &policy, &mut rng_for(&[23])).unwrap();
    assert_ne!(a, b);
    assert_eq!((a.height(), a.width()), (8, 10));
    assert_eq!((b.height(), b.width()), (8, 10));
}

#[test]
fn view_pairs_are_deterministic_across_threads() {
    let img = noise(12, 12, 3, 24);
    let policy = full_policy();
    let reference = make_view_pair(std::slice::from_ref(&img), &policy, &mut rng_for(&[25])).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (img, policy) = (img.clone(), policy.clone());
            std::thread::spawn(move || make_view_pair(&[img], &policy, &mut rng_for(&[25])).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), reference);
    }
}

#[test]
fn policy_validation() {
    assert!(full_policy().validate().is_ok());
    let bad = AugmentPolicy { rotation: Some(RotationParams { range_degrees: [-10.0, 20.0] }), ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = AugmentPolicy { blur: Some(BlurParams { probability: 1.5, ..Default::default() }), ..Default::default() };
    assert!(bad.validate().is_err());
    let parsed: AugmentPolicy = toml::from_str("equalize = true\n[crop]\narea_range = [0.5, 1.0]\n").unwrap();
    assert!(parsed.equalize);
    assert_eq!(parsed.crop.unwrap().flip_probability, 0.5);
    assert!(toml::from_str::<AugmentPolicy>("sharpen = true").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_in_unit_range(seed in any::<u64>(), c in prop::sample::select(vec![1usize, 3])) {
        let img = noise(10, 11, c, seed);
        let out = full_policy().apply(&img, &mut rng_for(&[seed, 1])).unwrap();
        prop_assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn equalized_cdf_is_near_uniform(seed in any::<u64>(), levels in 2usize..40) {
        let mut rng = rng_for(&[seed]);
        let img = Image::from_fn(9, 9, 1, |_, _, _| rng.gen_range(0..levels) as f64 / levels as f64).unwrap();
        let out = histogram_equalize(&img);
        let n = img.pixels().len() as f64;
        let mut counts = vec![0usize; EQ_BINS];
        for &v in img.pixels() {
            counts[eq_bin(v)] += 1;
        }
        let max_mass = *counts.iter().max().unwrap() as f64 / n;
        for &level in out.pixels() {
            let f = out.pixels().iter().filter(|&&v| v <= level).count() as f64 / n;
            prop_assert!((f - level).abs() <= max_mass + 1e-12);
        }
    }

    #[test]
    fn neutral_policy_is_exact(seed in any::<u64>()) {
        let img = noise(7, 9, 3, seed);
        let neutral = AugmentPolicy {
            crop: Some(CropParams { area_range: [1.0, 1.0], aspect_range: [1.0, 1.0], flip_probability: 0.0 }),
            color: Some(ColorParams { strength: 0.0 }),
            rotation: Some(RotationParams { range_degrees: [0.0, 0.0] }),
            blur: Some(BlurParams { probability: 0.0, ..Default::default() }),
            equalize: false,
            elastic: Some(ElasticParams { alpha: 0.0, sigma: 1.0 }),
            out_size: None,
        };
        prop_assert_eq!(neutral.apply(&img, &mut rng_for(&[seed])).unwrap(), img);
    }
}
