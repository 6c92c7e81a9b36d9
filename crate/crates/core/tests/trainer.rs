use dehaze::haze::{make_dataset, SynthOptions};
use dehaze::train::{batch_gradients, epoch_order, train, LogLine};
use dehaze::{DehazeNet, Error, Image, NetConfig, ParamStore, TrainConfig};
use proptest::prelude::*;

fn pairs(count: usize) -> Vec<(Image, Image)> {
    make_dataset(SynthOptions {
        count,
        size: 20,
        seed: 9,
        nonhomogeneous: true,
    })
    .unwrap()
    .into_iter()
    .map(|p| (p.hazy, p.clear))
    .collect()
}

fn tiny_run(cfg: &TrainConfig, data: &[(Image, Image)]) -> (Result<Vec<LogLine>, Error>, ParamStore<f32>) {
    let (net, mut store) = DehazeNet::new::<f32>(NetConfig {
        seed: 2,
        ..NetConfig::tiny()
    })
    .unwrap();
    let log = train(&net, &mut store, data, cfg, |_| {});
    (log, store)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        crop: 16,
        max_steps: Some(5),
        seed: 4,
        ..TrainConfig::default()
    }
}

fn bits(store: &ParamStore<f32>) -> Vec<u32> {
    store
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let data = pairs(4);
    let (a, sa) = tiny_run(&small_cfg(), &data);
    let (b, sb) = tiny_run(&small_cfg(), &data);
    assert_eq!(a.unwrap(), b.unwrap());
    assert_eq!(bits(&sa), bits(&sb));
    let (_, sc) = tiny_run(&TrainConfig { seed: 5, ..small_cfg() }, &data);
    assert_ne!(bits(&sa), bits(&sc));
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = pairs(2);
    let (_, init) = DehazeNet::new::<f32>(NetConfig {
        seed: 2,
        ..NetConfig::tiny()
    })
    .unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        max_steps: Some(1),
        ..small_cfg()
    };
    let (log, after) = tiny_run(&cfg, &data);
    assert_eq!(log.unwrap().len(), 1);
    assert_eq!(bits(&init), bits(&after));
}

#[test]
fn training_changes_parameters_and_logs_finite_losses() {
    let data = pairs(3);
    let (log, after) = tiny_run(&small_cfg(), &data);
    let (_, init) = DehazeNet::new::<f32>(NetConfig {
        seed: 2,
        ..NetConfig::tiny()
    })
    .unwrap();
    let log = log.unwrap();
    assert_eq!(log.len(), 5);
    assert!(log
        .iter()
        .all(|l| l.l_c.is_finite() && l.l_ssim.is_finite() && l.l_total.is_finite()));
    assert_eq!(log.iter().map(|l| l.step).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert_ne!(bits(&init), bits(&after));
}

#[test]
fn epochs_cover_every_sample_without_dropping_the_tail() {
    // 5 samples in batches of 2: three steps per epoch, the last one short
    let data = pairs(5);
    let cfg = TrainConfig {
        max_steps: None,
        epochs: 2,
        lr_decay_every: 1,
        ..small_cfg()
    };
    let log = tiny_run(&cfg, &data).0.unwrap();
    let epochs: Vec<usize> = log.iter().map(|l| l.epoch).collect();
    assert_eq!(epochs, vec![0, 0, 0, 1, 1, 1]);
    assert_eq!(log[3].lr, 0.5 * log[0].lr);
    for e in 0..4 {
        let mut order = epoch_order(5, 4, e);
        order.sort();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }
}

#[test]
fn learning_rate_halves_after_the_decay_interval() {
    let data = pairs(2);
    let cfg = TrainConfig {
        max_steps: Some(7),
        batch: 1,
        lr_decay_every: 2,
        ..small_cfg()
    };
    let log = tiny_run(&cfg, &data).0.unwrap();
    // two steps per epoch, decay every two epochs
    let lrs: Vec<f64> = log.iter().map(|l| l.lr / cfg.lr).collect();
    assert_eq!(lrs, vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5]);
}

#[test]
fn batch_gradient_is_the_mean_of_item_gradients() {
    let data: Vec<(Image, Image)> = pairs(2)
        .into_iter()
        .map(|(h, c)| (h.crop(0, 0, 16, 16).unwrap(), c.crop(0, 0, 16, 16).unwrap()))
        .collect();
    let (net, store) = DehazeNet::new::<f32>(NetConfig::tiny()).unwrap();
    let loss = Default::default();
    let both = batch_gradients(&net, &store, &data, &loss).unwrap();
    let a = batch_gradients(&net, &store, &data[..1], &loss).unwrap();
    let b = batch_gradients(&net, &store, &data[1..], &loss).unwrap();
    assert!((both.l_total - 0.5 * (a.l_total + b.l_total)).abs() < 1e-6);
    for ((g, ga), gb) in both.grads.iter().zip(&a.grads).zip(&b.grads) {
        for ((x, y), z) in g.iter().zip(ga).zip(gb) {
            assert!((x - 0.5 * (y + z)).abs() <= 1e-6 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn divergence_stops_with_the_last_finite_parameters() {
    let data = pairs(2);
    let cfg = TrainConfig {
        lr: 1e30,
        max_steps: Some(10),
        ..small_cfg()
    };
    let (log, store) = tiny_run(&cfg, &data);
    match log {
        Err(Error::Diverged { step, .. }) => assert!(step >= 2, "step {step}"),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(store.iter().all(|(_, t)| t.all_finite()));
}

#[test]
fn rejects_crops_larger_than_the_images() {
    let data = pairs(2);
    let cfg = TrainConfig {
        crop: 32,
        ..small_cfg()
    };
    assert!(tiny_run(&cfg, &data).0.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn epoch_order_is_a_seeded_permutation(count in 1usize..40, seed in any::<u64>(), epoch in 0usize..50) {
        let order = epoch_order(count, seed, epoch);
        prop_assert_eq!(&order, &epoch_order(count, seed, epoch));
        let mut sorted = order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..count).collect::<Vec<_>>());
    }
}
