//! Builds a stack of artificial exposures from one hazy image and writes
//! each shot next to it.
//!
//! cargo run --release --example ams_shots -- [out_dir]

use std::path::PathBuf;

use dehaze::ams::{build_stack, ShotParams};
use dehaze::haze::{make_dataset, SynthOptions};
use dehaze::{Image, Tensor};

fn mean(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64
}

fn main() -> Result<(), dehaze::Error> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "ams_shots".into()).into();
    std::fs::create_dir_all(&out).map_err(|e| dehaze::Error::Config(e.to_string()))?;

    let pair = make_dataset(SynthOptions {
        count: 1,
        size: 64,
        seed: 3,
        nonhomogeneous: true,
    })?
    .remove(0);
    let hazy = pair.hazy.to_tensor::<f32>();
    pair.hazy.save(out.join("hazy.ppm"))?;
    println!("input mean {:.4}", mean(&hazy));

    // equal steps, each pulling mid-tones down a little further
    let params = ShotParams::uniform(4, 0.6, 0.8)?;
    let stack = build_stack(&hazy, &params)?;
    for k in 1..=params.shots() {
        let shot = stack.shot(k);
        Image::from_tensor(&shot)?.save(out.join(format!("shot_{k}.ppm")))?;
        println!("shot {k} mean {:.4}", mean(&shot));
    }
    Ok(())
}
