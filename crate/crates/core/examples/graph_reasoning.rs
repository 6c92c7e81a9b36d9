//! Runs spatial and channel graph reasoning on a random feature map and
//! prints the projection, the adjacency rows and how far the residual moved
//! the input.
//!
//! cargo run --release --example graph_reasoning

use dehaze::cgr::ChannelGraphReasoning;
use dehaze::sgr::SpatialGraphReasoning;
use dehaze::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn print_rows(name: &str, t: &Tensor<f64>) {
    println!("{name} {:?}", t.shape());
    for i in 0..t.shape()[0] {
        let row = t.row(i).unwrap();
        let cells: Vec<String> = row.data().iter().map(|v| format!("{v:.3}")).collect();
        println!("  {}  (sum {:.6})", cells.join(" "), row.sum());
    }
}

fn main() -> Result<(), dehaze::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, h, w) = (6, 8, 8);
    let x = Tensor::new(
        vec![c, h, w],
        (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    let mut store = ParamStore::<f64>::new();
    let sgr = SpatialGraphReasoning::new(&mut store, "sgr", c, 2, &mut rng)?;
    let cgr = ChannelGraphReasoning::new(&mut store, "cgr", c, 4, 2, &mut rng)?;
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.constant(x.clone());

    let s = sgr.forward(&mut g, &p, xv)?;
    let b = g.value(s.projection);
    let col: f64 = (0..sgr.nodes()).map(|n| b.get(&[n, 0])).sum();
    println!(
        "spatial: {} nodes over {} pixels, first column sums to {col:.6}",
        sgr.nodes(),
        b.shape()[1]
    );
    print_rows("spatial adjacency", g.value(s.adjacency));

    let ch = cgr.forward(&mut g, &p, xv)?;
    print_rows("channel adjacency", g.value(ch.adjacency));

    for (name, v, out) in [("spatial", s.reasoned, s.output), ("channel", ch.reasoned, ch.output)] {
        let active = g.value(v).data().iter().filter(|&&e| e > 0.0).count();
        println!(
            "{name} reasoning: {active} of {} node features active",
            g.value(v).len()
        );
        let moved = g
            .value(out)
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{name} residual: max change {moved:.4}");
    }
    Ok(())
}
