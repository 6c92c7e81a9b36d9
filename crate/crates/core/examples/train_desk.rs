//! Overfits the desk network on eight synthetic pairs and reports the loss
//! drop and the PSNR gain over the hazy input.
//!
//! cargo run --release --example train_desk -- [steps] [lr]

use std::time::Instant;

use dehaze::haze::{make_dataset, SynthOptions};
use dehaze::metrics::psnr;
use dehaze::train::{mean_loss, train};
use dehaze::{DehazeNet, NetConfig, TrainConfig};

fn main() -> Result<(), dehaze::Error> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(300, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().expect("lr"));

    let pairs = make_dataset(SynthOptions {
        count: 8,
        size: 64,
        seed: 7,
        nonhomogeneous: false,
    })?;
    let data: Vec<_> = pairs.iter().map(|p| (p.hazy.clone(), p.clear.clone())).collect();
    let (net, mut store) = DehazeNet::new::<f32>(NetConfig {
        seed: 7,
        ..NetConfig::desk()
    })?;
    let cfg = TrainConfig {
        lr,
        max_steps: Some(steps),
        seed: 7,
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let initial = mean_loss(&net, &store, &data, &cfg.loss)?;
    train(&net, &mut store, &data, &cfg, |l| {
        if l.step % 25 == 0 || l.step == 1 {
            println!("{l}");
        }
    })?;
    let last = mean_loss(&net, &store, &data, &cfg.loss)?;

    let (mut before, mut after) = (0.0, 0.0);
    for (hazy, clear) in &data {
        before += psnr(hazy, clear)?;
        after += psnr(&net.dehaze(&store, hazy)?, clear)?;
    }
    let n = data.len() as f64;
    println!(
        "loss {initial:.5} -> {last:.5} (ratio {:.3}); PSNR {:.2} -> {:.2} dB; {:.1}s",
        last / initial,
        before / n,
        after / n,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
