//! Writes a small synthetic dataset and reports how much contrast the haze
//! removed from each pair.
//!
//! cargo run --release --example synth_haze -- [out_dir] [count] [--nonhomogeneous]

use std::path::PathBuf;

use dehaze::haze::{make_dataset, write_dataset, SynthOptions};
use dehaze::metrics::psnr;
use dehaze::Image;

fn std_dev(img: &Image) -> f64 {
    let n = img.data().len() as f64;
    let m = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    (img.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn main() -> Result<(), dehaze::Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let nonhomogeneous = args.iter().any(|a| a == "--nonhomogeneous");
    let mut pos = args.iter().filter(|a| !a.starts_with("--"));
    let out: PathBuf = pos.next().map_or("synth_haze".into(), PathBuf::from);
    let count: usize = pos.next().map_or(6, |s| s.parse().expect("count"));

    let pairs = make_dataset(SynthOptions {
        count,
        size: 64,
        seed: 1,
        nonhomogeneous,
    })?;
    write_dataset(&out, &pairs)?;
    for (i, p) in pairs.iter().enumerate() {
        println!(
            "{i}: beta {:.3} airlight [{:.2} {:.2} {:.2}] contrast {:.3} -> {:.3} psnr {:.2} dB",
            p.beta,
            p.scene.airlight[0],
            p.scene.airlight[1],
            p.scene.airlight[2],
            std_dev(&p.clear),
            std_dev(&p.hazy),
            psnr(&p.hazy, &p.clear)?
        );
    }
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}
