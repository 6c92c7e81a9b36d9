//! PSNR, SSIM and the training loss on a few hand-made degradations of one
//! synthetic scene.
//!
//! cargo run --release --example metrics

use dehaze::haze::{make_dataset, SynthOptions};
use dehaze::metrics::{loss_total, psnr, ssim, LossConfig};
use dehaze::Image;

fn map(img: &Image, f: impl Fn(f32) -> f32) -> Image {
    Image::new(
        img.channels(),
        img.height(),
        img.width(),
        img.data().iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
    )
    .unwrap()
}

fn main() -> Result<(), dehaze::Error> {
    let pair = make_dataset(SynthOptions {
        count: 1,
        size: 48,
        seed: 5,
        nonhomogeneous: false,
    })?
    .remove(0);
    let clear = &pair.clear;
    let cfg = LossConfig::default();
    let cases = [
        ("identical", clear.clone()),
        ("brighter by 0.1", map(clear, |v| v + 0.1)),
        ("contrast halved", map(clear, |v| 0.5 * v + 0.25)),
        ("inverted", map(clear, |v| 1.0 - v)),
        ("synthetic haze", pair.hazy.clone()),
    ];
    println!("{:<16} {:>9} {:>8} {:>8}", "case", "psnr", "ssim", "loss");
    for (name, img) in &cases {
        let (_, _, total) = loss_total(img, clear, &cfg)?;
        println!(
            "{name:<16} {:>9.3} {:>8.4} {:>8.5}",
            psnr(img, clear)?,
            ssim(img, clear, &cfg)?,
            total
        );
    }
    Ok(())
}
