//! Trains the tiny network briefly, saves it, reloads the checkpoint and
//! dehazes an image of arbitrary size.
//!
//! cargo run --release --example dehaze_image -- [out_dir]

use std::path::PathBuf;

use dehaze::commands::{dehaze_file, synth, train_to, Model};
use dehaze::haze::SynthOptions;
use dehaze::metrics::psnr;
use dehaze::{Image, RunConfig};

fn main() -> Result<(), dehaze::Error> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "dehaze_image".into()).into();
    let data = out.join("data");
    synth(
        &data,
        SynthOptions {
            count: 6,
            size: 36,
            seed: 2,
            nonhomogeneous: false,
        },
    )?;
    let cfg: RunConfig = "preset = tiny\ncrop = 32\nmax_steps = 150\nbatch = 2\nseed = 2\n".parse()?;
    let ckpt = out.join("tiny.ckpt");
    let summary = train_to(&cfg, &data, &ckpt, |_| {})?;
    let (first, last) = (&summary.log[0], summary.log.last().unwrap());
    println!(
        "loss {:.4} -> {:.4} over {} steps",
        first.l_total, last.l_total, last.step
    );

    // the config sidecar written next to the checkpoint is picked up here
    let model = Model::load(&ckpt, None)?;
    let hazy = data.join("hazy_0000.ppm");
    let clean = out.join("dehazed_0000.ppm");
    dehaze_file(&model, &hazy, &clean)?;
    let reference = Image::load(data.join("clear_0000.ppm"))?;
    println!(
        "psnr {:.2} dB -> {:.2} dB, wrote {}",
        psnr(&Image::load(&hazy)?, &reference)?,
        psnr(&Image::load(&clean)?, &reference)?,
        clean.display()
    );
    Ok(())
}
