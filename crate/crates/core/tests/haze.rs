use dehaze::haze::{
    load_dataset, make_dataset, read_manifest, synthesize, transmission, write_dataset, HazeScene, SynthOptions, BETAS,
    MAX_DEPTH,
};
use dehaze::Image;
use proptest::prelude::*;

fn opts(seed: u64, nonhomogeneous: bool) -> SynthOptions {
    SynthOptions {
        count: 6,
        size: 24,
        seed,
        nonhomogeneous,
    }
}

fn range(img: &Image, c: usize) -> f32 {
    let plane = img.height() * img.width();
    let ch = &img.data()[c * plane..(c + 1) * plane];
    let hi = ch.iter().cloned().fold(f32::MIN, f32::max);
    let lo = ch.iter().cloned().fold(f32::MAX, f32::min);
    hi - lo
}

#[test]
fn same_seed_same_dataset() {
    for nh in [false, true] {
        let a = make_dataset(opts(3, nh)).unwrap();
        let b = make_dataset(opts(3, nh)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_dataset(opts(4, nh)).unwrap());
    }
}

#[test]
fn prefix_of_a_larger_dataset_is_unchanged() {
    let small = make_dataset(opts(5, false)).unwrap();
    let big = make_dataset(SynthOptions {
        count: 10,
        ..opts(5, false)
    })
    .unwrap();
    assert_eq!(&big[..6], &small[..]);
}

#[test]
fn every_pair_is_its_scene_rendered() {
    for nh in [false, true] {
        for pair in make_dataset(opts(11, nh)).unwrap() {
            assert_eq!(synthesize(&pair.scene).unwrap(), pair.hazy);
            assert_eq!(pair.clear, pair.scene.clear);
            assert!(BETAS.contains(&pair.beta));
            assert!(pair.scene.depth.iter().all(|d| (0.0..=MAX_DEPTH).contains(d)));
            assert!(pair.scene.airlight.iter().all(|a| (0.7..=1.0).contains(a)));
            assert_eq!(pair.scene.density.is_some(), nh);
            if let Some(f) = &pair.scene.density {
                assert!(f.iter().all(|v| (0.5..=1.5).contains(v)));
            }
        }
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = make_dataset(opts(2, false)).unwrap();
    write_dataset(dir.path(), &pairs).unwrap();
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.len(), pairs.len());
    let loaded = load_dataset(dir.path()).unwrap();
    for ((hazy, clear, beta), pair) in loaded.iter().zip(&pairs) {
        assert_eq!(*beta, pair.beta);
        // 8-bit storage quantizes
        for (a, b) in hazy.data().iter().zip(pair.hazy.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        for (a, b) in clear.data().iter().zip(pair.clear.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn opaque_haze_is_the_airlight() {
    let clear = Image::filled(3, 2, 2, 0.1).unwrap();
    let scene = HazeScene {
        clear,
        depth: vec![1e6; 4],
        beta: 0.02,
        airlight: [0.9, 0.8, 0.7],
        density: None,
    };
    let hazy = synthesize(&scene).unwrap();
    for c in 0..3 {
        assert!((hazy.get(c, 1, 1) as f64 - scene.airlight[c]).abs() < 1e-6);
    }
}

#[test]
fn varying_depth_can_add_range_to_a_flat_scene() {
    // the range bound needs a constant transmission: a flat dark scene in
    // front of a depth ramp gains range from the haze alone
    let clear = Image::filled(3, 1, 2, 0.0).unwrap();
    let scene = HazeScene {
        clear: clear.clone(),
        depth: vec![0.0, 400.0],
        beta: 0.01,
        airlight: [1.0; 3],
        density: None,
    };
    let hazy = synthesize(&scene).unwrap();
    assert!(range(&hazy, 0) > range(&clear, 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_transmission_shrinks_range(seed in any::<u64>(), depth in 0.0f64..500.0, bi in 0usize..9) {
        let pair = &make_dataset(SynthOptions { count: 1, size: 12, seed, nonhomogeneous: false }).unwrap()[0];
        let scene = HazeScene {
            depth: vec![depth; 144],
            beta: BETAS[bi],
            ..pair.scene.clone()
        };
        let hazy = synthesize(&scene).unwrap();
        for c in 0..3 {
            prop_assert!(range(&hazy, c) <= range(&scene.clear, c) + 1e-6);
        }
    }

    #[test]
    fn transmission_decreases_in_beta_and_depth(d1 in 0.0f64..500.0, dd in 0.0f64..500.0, b1 in 0.0f64..0.02, db in 0.0f64..0.02) {
        let t = |d: f64, b: f64| transmission(&[d], b).unwrap()[0];
        prop_assert!(t(d1 + dd, b1) <= t(d1, b1));
        prop_assert!(t(d1, b1 + db) <= t(d1, b1));
        prop_assert!(t(d1, b1) > 0.0 && t(d1, b1) <= 1.0);
    }
}
