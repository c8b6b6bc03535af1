use proptest::prelude::*;
use rand::seq::SliceRandom;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::*;
use crate::augment::Image;
use crate::seed::rng_for;

fn small_base() -> BaseSpec {
    BaseSpec {
        image_size: 12,
        sizes: SplitSizes {
            unlabeled: 20,
            in_train: 60,
            in_val: 10,
            in_test: 20,
            out_train: 60,
            out_val: 10,
            out_test: 20,
            upstream_train: 30,
            upstream_val: 10,
            upstream_test: 10,
        },
        ..Default::default()
    }
}

fn moment_base(n: usize) -> BaseSpec {
    let mut b = small_base();
    b.sizes.in_train = n;
    b.sizes.out_train = n;
    b
}

fn fake_records(labels: &[usize]) -> Vec<Record> {
    let img = Image::filled(2, 2, 1, 0.5).unwrap();
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| Record { id: i as u64, label: l, clean_label: l, subgroup: 0, views: vec![img.clone()] })
        .collect()
}

fn train_mean(ds: &Dataset) -> f64 {
    fingerprint(ds, "").unwrap().splits["train"].pixel_mean
}

#[test]
fn identity_shift_matches_moments() {
    let b = generate_task(1, &moment_base(2000), &ShiftSpec::identity(), None).unwrap();
    assert!((train_mean(&b.d_out) - train_mean(&b.d_in)).abs() < 0.01);
}

#[test]
fn intensity_shift_moves_mean() {
    let mut shift = ShiftSpec::identity();
    shift.technology.intensity = 0.2;
    let b = generate_task(2, &moment_base(2000), &shift, None).unwrap();
    let d = train_mean(&b.d_out) - train_mean(&b.d_in);
    assert!((d - 0.2).abs() < 0.01, "{d}");
    let max = b.d_out.train.iter().flat_map(|r| r.views[0].pixels().iter().copied()).fold(0.0, f64::max);
    assert!(max < 1.0, "shifted pixels reached the clamp");
}

#[test]
fn prevalence_shift_within_binomial_band() {
    let mut base = small_base();
    base.sizes.out_test = 1000;
    let mut shift = ShiftSpec::identity();
    shift.population.prevalence = Some(vec![0.9, 0.1]);
    base.classes = 2;
    let b = generate_task(3, &base, &shift, None).unwrap();
    let zeros = b.d_out.test.iter().filter(|r| r.clean_label == 0).count() as u64;
    let binom = Binomial::new(0.9, 1000).unwrap();
    let (lo, hi) = (binom.inverse_cdf(0.005), binom.inverse_cdf(0.995));
    assert!((lo..=hi).contains(&zeros), "{zeros} outside [{lo}, {hi}]");
}

#[test]
fn single_class_is_rejected() {
    let mut base = small_base();
    base.classes = 1;
    assert!(generate_task(4, &base, &ShiftSpec::identity(), None).is_err());
    let mut shift = ShiftSpec::identity();
    shift.population.prevalence = Some(vec![0.5, 0.6, -0.1]);
    assert!(generate_task(4, &small_base(), &shift, None).is_err());
    shift = ShiftSpec::identity();
    shift.behavior.label_noise = 0.5;
    assert!(generate_task(4, &small_base(), &shift, None).is_err());
}

#[test]
fn stratified_subsample_arithmetic() {
    let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 70)).collect();
    let recs = fake_records(&labels);
    let picked = subsample_fraction(&recs, 0.1, 5).unwrap();
    assert_eq!(picked.iter().filter(|&&i| recs[i].label == 0).count(), 7);
    assert_eq!(picked.iter().filter(|&&i| recs[i].label == 1).count(), 3);
    assert_eq!(subsample_fraction(&recs, 1.0, 5).unwrap(), (0..100).collect::<Vec<_>>());
    assert!(subsample_fraction(&recs, 0.0, 5).unwrap().is_empty());
    assert!(subsample_fraction(&recs, 1.5, 5).is_err());
    assert!(subsample_fraction(&[], 0.5, 5).is_err());
    let tiny = fake_records(&[0, 0, 0, 1]);
    let picked = subsample_fraction(&tiny, 0.1, 5).unwrap();
    assert_eq!(picked.len(), 2, "each class keeps at least one record");
}

#[test]
fn fingerprint_counts_and_order_invariance() {
    let base = small_base();
    let b = generate_task(6, &base, &ShiftSpec::identity(), None).unwrap();
    let fp = fingerprint(&b.d_in, "x").unwrap();
    assert_eq!(fp.splits["train"].count, base.sizes.in_train);
    assert_eq!(fp.splits["val"].count, base.sizes.in_val);
    assert_eq!(fp.splits["test"].count, base.sizes.in_test);
    assert_eq!(fp.splits["train"].class_histogram.iter().sum::<usize>(), base.sizes.in_train);

    let mut shuffled = b.d_in.clone();
    shuffled.train.shuffle(&mut rng_for(&[7]));
    assert_eq!(fingerprint(&shuffled, "x").unwrap().hash(), fp.hash());

    let again = generate_task(6, &base, &ShiftSpec::identity(), None).unwrap();
    assert_eq!(fingerprint(&again.d_in, "x").unwrap(), fp);
    let other = generate_task(7, &base, &ShiftSpec::identity(), None).unwrap();
    assert_ne!(fingerprint(&other.d_in, "x").unwrap().hash(), fp.hash());
}

#[test]
fn splits_disjoint_and_label_spaces_match() {
    let b = generate_task(8, &small_base(), &ShiftSpec::identity(), None).unwrap();
    let mut ids: Vec<u64> = b.unlabeled.iter().map(|r| r.id).collect();
    for ds in b.datasets() {
        for k in SplitKind::ALL {
            ids.extend(ds.split(k).iter().map(|r| r.id));
        }
    }
    let n = ids.len();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert_eq!(b.d_in.label_space(), b.d_out.label_space());
}

#[test]
fn behavior_noise_flips_exact_count() {
    let base = small_base();
    let clean = generate_task(9, &base, &ShiftSpec::identity(), None).unwrap();
    let mut shift = ShiftSpec::identity();
    shift.behavior.label_noise = 0.15;
    let noisy = generate_task(9, &base, &shift, None).unwrap();
    for k in SplitKind::ALL {
        let (a, b) = (clean.d_out.split(k), noisy.d_out.split(k));
        assert_eq!(a.len(), b.len());
        let flips = a.iter().zip(b).filter(|(x, y)| x.label != y.label).count();
        assert_eq!(flips, (0.15 * a.len() as f64).round() as usize, "{k:?}");
        assert!(a.iter().zip(b).all(|(x, y)| x.views == y.views));
    }
    assert_eq!(clean.d_in, noisy.d_in);
}

#[test]
fn planted_subgroup_noise_count() {
    let mut base = small_base();
    base.subgroup_label_noise = vec![0.0, 0.2];
    let b = generate_task(10, &base, &ShiftSpec::identity(), None).unwrap();
    let train = &b.d_in.train;
    let g1 = train.iter().filter(|r| r.subgroup == 1).count();
    let noisy: Vec<_> = train.iter().filter(|r| r.label != r.clean_label).collect();
    assert_eq!(noisy.len(), (0.2 * g1 as f64).round() as usize);
    assert!(noisy.iter().all(|r| r.subgroup == 1));
}

#[test]
fn multi_view_records() {
    let mut base = small_base();
    base.views_per_record = 4;
    let b = generate_task(11, &base, &ShiftSpec::identity(), None).unwrap();
    assert!(b.d_in.train.iter().all(|r| r.views.len() == 4));
    assert_ne!(b.d_in.train[0].views[0], b.d_in.train[0].views[1]);
}

#[test]
fn bundle_round_trip() {
    let mut shift = ShiftSpec::identity();
    shift.technology.blur_sigma = 1.0;
    shift.technology.noise = 0.05;
    let mut second = ShiftSpec::identity();
    second.technology.contrast = 0.5;
    let b = generate_task(12, &small_base(), &shift, Some(&second)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&b, dir.path()).unwrap();
    let back = load_bundle(dir.path()).unwrap();
    assert_eq!(back, b);
    assert!(dir.path().join("fingerprint.json").exists());
}

#[test]
fn patterns_stay_in_range() {
    for f in 0..PATTERN_FAMILIES {
        for k in 0..400 {
            let (u, v) = ((k % 20) as f64 / 10.0 - 1.0, (k / 20) as f64 / 10.0 - 1.0);
            let p = render_pattern(f, u, v, 0.1, -0.1, 0.35, 0.7);
            assert!((0.0..=1.0).contains(&p), "family {f}: {p}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subsample_is_nested(seed in any::<u64>(), n in 5usize..200, k in 2usize..5) {
        let mut rng = rng_for(&[seed]);
        let labels: Vec<usize> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..k)).collect();
        let recs = fake_records(&labels);
        let mut prev: Vec<usize> = Vec::new();
        for f in [0.1, 0.2, 0.5, 1.0] {
            let cur = subsample_fraction(&recs, f, seed).unwrap();
            prop_assert!(prev.iter().all(|i| cur.binary_search(i).is_ok()));
            prev = cur;
        }
    }
}
