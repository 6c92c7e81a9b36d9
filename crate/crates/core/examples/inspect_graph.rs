//! Dumps the spatial projection and adjacency of one node and the channel
//! adjacency of one channel node as heatmaps.
//!
//! cargo run --release --example inspect_graph -- [out_dir] [node] [channel]

use std::path::PathBuf;

use dehaze::commands::{inspect, synth, train_to, write_inspection, Model};
use dehaze::haze::SynthOptions;
use dehaze::{Image, RunConfig};

fn main() -> Result<(), dehaze::Error> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().unwrap_or_else(|| "inspect_graph".into()).into();
    let node: usize = args.next().map_or(5, |s| s.parse().expect("node"));
    let channel: usize = args.next().map_or(0, |s| s.parse().expect("channel"));

    let data = out.join("data");
    synth(
        &data,
        SynthOptions {
            count: 4,
            size: 64,
            seed: 9,
            nonhomogeneous: true,
        },
    )?;
    let cfg: RunConfig = "preset = desk\ncrop = 64\nmax_steps = 20\nseed = 9\n".parse()?;
    let ckpt = out.join("desk.ckpt");
    train_to(&cfg, &data, &ckpt, |_| {})?;
    let model = Model::load(&ckpt, None)?;

    let ins = inspect(&model, &Image::load(data.join("hazy_0000.ppm"))?, node, channel)?;
    println!("reasoning grid {}x{}", ins.feature.0, ins.feature.1);
    if let Some(s) = &ins.spatial {
        println!("node {node}: strongest partner {}, weakest {}", s.strongest, s.weakest);
    }
    if let Some(c) = &ins.channel {
        let row: Vec<String> = c.adjacency.iter().map(|v| format!("{v:.3}")).collect();
        println!("channel node {channel}: {}", row.join(" "));
    }
    for f in write_inspection(&ins, &out.join("views"))? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
