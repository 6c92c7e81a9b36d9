mod common;

use common::naive::{self, Map};
use common::{check_module, random_tensor, weighted_sum};
use dehaze::cgr::{channel_response, ChannelGraphReasoning};
use dehaze::graph_conv::adjacency;
use dehaze::sgr::{self, SpatialGraphReasoning};
use dehaze::tensor::{Graph, Tensor};
use dehaze::ParamStore;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sgr_module(c: usize, q: usize, seed: u64) -> (SpatialGraphReasoning, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let m = SpatialGraphReasoning::new(&mut store, "sgr", c, q, &mut rng(seed)).unwrap();
    (m, store)
}

fn cgr_module(c: usize, n: usize, m: usize, seed: u64) -> (ChannelGraphReasoning, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let module = ChannelGraphReasoning::new(&mut store, "cgr", c, n, m, &mut rng(seed)).unwrap();
    (module, store)
}

fn as_map(t: &Tensor<f64>) -> Map {
    let s = t.shape();
    Map {
        c: s[0],
        h: s[1],
        w: s[2],
        v: t.data().to_vec(),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.concat()
}

#[test]
fn sgr_matches_brute_force() {
    for (c, h, w, q, seed) in [(3, 2, 2, 2, 1), (3, 4, 4, 2, 2), (2, 4, 4, 1, 3), (4, 4, 2, 2, 4)] {
        let (m, store) = sgr_module(c, q, seed);
        let x = random_tensor(&[c, h, w], -1.0, 1.0, &mut rng(seed + 100));
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.constant(x.clone());
        let trace = m.forward(&mut g, &p, xv).unwrap();
        let want = naive::sgr(&store, "sgr", &as_map(&x), q);
        assert!(max_diff(g.value(trace.projection).data(), &flat(&want.b)) < 1e-12);
        assert!(max_diff(g.value(trace.nodes).data(), &flat(&want.z)) < 1e-12);
        assert!(max_diff(g.value(trace.adjacency).data(), &flat(&want.a)) < 1e-12);
        assert!(max_diff(g.value(trace.reasoned).data(), &flat(&want.v)) < 1e-12);
        let d = max_diff(g.value(trace.output).data(), &want.out);
        assert!(d < 1e-6, "output differs by {d:e} for {c}x{h}x{w}, q={q}");
    }
}

#[test]
fn cgr_matches_brute_force() {
    for (c, h, w, n, mp, seed) in [
        (4, 4, 4, 4, 2, 1),
        (3, 4, 4, 2, 1, 2),
        (2, 2, 2, 3, 2, 3),
        (3, 4, 2, 4, 2, 4),
    ] {
        let (m, store) = cgr_module(c, n, mp, seed);
        let x = random_tensor(&[c, h, w], -1.0, 1.0, &mut rng(seed + 200));
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.constant(x.clone());
        let trace = m.forward(&mut g, &p, xv).unwrap();
        let want = naive::cgr(&store, "cgr", &as_map(&x), n, mp);
        assert!(max_diff(g.value(trace.nodes).data(), &flat(&want.z)) < 1e-12);
        assert!(max_diff(g.value(trace.adjacency).data(), &flat(&want.a)) < 1e-12);
        assert!(max_diff(g.value(trace.reasoned).data(), &flat(&want.v)) < 1e-12);
        let d = max_diff(g.value(trace.output).data(), &want.out);
        assert!(d < 1e-6, "output differs by {d:e}");
    }
}

#[test]
fn channel_response_hand_case() {
    // v = [[1,2],[0,-1]], d rows (s=0) [1,0,2,1] and (s=1) [0,1,1,-1]
    // node 0: 1·d0 + 2·d1 = [1,2,4,-1]; node 1: −d1 = [0,-1,-1,1]
    let mut g = Graph::<f64>::new();
    let v = g.constant(Tensor::from_f64([2, 2], &[1.0, 2.0, 0.0, -1.0]).unwrap());
    let d = g.constant(Tensor::from_f64([2, 2, 2], &[1.0, 0.0, 2.0, 1.0, 0.0, 1.0, 1.0, -1.0]).unwrap());
    let y = channel_response(&mut g, v, d).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 4.0, -1.0, 0.0, -1.0, -1.0, 1.0]);
}

#[test]
fn sgr_two_by_two_hand_embeddings() {
    // Identity φ and ψ, q = 2 on a 1-channel 2×2 map: each pixel is its own
    // anchor, so B[n,l] = softmax_n(x_n·x_l).
    let (m, mut store) = sgr_module(1, 2, 9);
    for name in ["sgr.phi.weight", "sgr.psi.weight"] {
        let id = store.id_of(name).unwrap();
        store.get_mut(id).data_mut()[0] = 1.0;
    }
    let xs = [0.5, -1.0, 2.0, 0.0];
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::from_f64([1, 2, 2], &xs).unwrap());
    let (z, b) = m.project(&mut g, &p, x).unwrap();
    for l in 0..4 {
        let logits: Vec<f64> = xs.iter().map(|a| a * xs[l]).collect();
        let norm: f64 = logits.iter().map(|v| v.exp()).sum();
        for (n, logit) in logits.iter().enumerate() {
            let got = g.value(b).get(&[n, l]);
            assert!((got - logit.exp() / norm).abs() < 1e-15);
        }
    }
    for n in 0..4 {
        let want: f64 = (0..4).map(|l| g.value(b).get(&[n, l]) * xs[l]).sum();
        assert!((g.value(z).data()[n] - want).abs() < 1e-15);
    }
}

#[test]
fn identical_pixels_give_uniform_projection() {
    let (m, store) = sgr_module(3, 2, 5);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::full([3, 4, 4], 0.4));
    let (z, b) = m.project(&mut g, &p, x).unwrap();
    for &v in g.value(b).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let z = g.value(z);
    for n in 1..4 {
        assert_eq!(z.row(n).unwrap(), z.row(0).unwrap());
    }
}

#[test]
fn zero_nodes_reproject_to_the_input() {
    let x = random_tensor(&[4, 4, 4], -1.0, 1.0, &mut rng(8));
    let (m, store) = cgr_module(4, 4, 2, 8);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.constant(x.clone());
    let v = g.constant(Tensor::zeros([4, 4]));
    let out = m.reproject_channels(&mut g, &p, v, xv).unwrap();
    assert_eq!(g.value(out), &x);

    let b = g.constant(random_tensor(&[4, 16], 0.0, 1.0, &mut rng(9)));
    let v = g.constant(Tensor::zeros([4, 4]));
    let out = sgr::reproject(&mut g, v, b, xv).unwrap();
    assert_eq!(g.value(out), &x);
}

#[test]
fn padding_handles_indivisible_grids() {
    let (m, store) = sgr_module(2, 4, 1);
    let x = random_tensor(&[2, 6, 5], 0.0, 1.0, &mut rng(4));
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.constant(x.clone());
    assert!(m.project(&mut g, &p, xv).is_err());
    let trace = m.forward(&mut g, &p, xv).unwrap();
    assert_eq!(g.shape(trace.output), &[2, 6, 5]);
    assert_eq!(trace.grid, (8, 8));

    let (c, store) = cgr_module(2, 3, 4, 2);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.constant(x);
    assert!(c.project_channels(&mut g, &p, xv).is_err());
    let trace = c.forward(&mut g, &p, xv).unwrap();
    assert_eq!(g.shape(trace.output), &[2, 6, 5]);
}

#[test]
fn anchor_permutation_is_equivariant() {
    let x = random_tensor(&[3, 4, 4], -1.0, 1.0, &mut rng(21));
    let (m, store) = sgr_module(3, 2, 21);
    let perm = [2usize, 0, 3, 1];
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.constant(x);
    let emb = m.phi.forward(&mut g, &p, xv).unwrap();
    let k = m.psi.forward(&mut g, &p, xv).unwrap();
    let anchors = sgr::anchors(&mut g, emb, 2).unwrap();
    let at = g.value(anchors).clone();
    let mut permuted = at.clone();
    for (dst, &src) in perm.iter().enumerate() {
        for c in 0..3 {
            permuted.set(&[dst, c], at.get(&[src, c]));
        }
    }
    let permuted = g.constant(permuted);

    let run = |g: &mut Graph<f64>, anchors| {
        let b = sgr::projection_matrix(g, anchors, emb).unwrap();
        let z = sgr::node_features(g, b, k).unwrap();
        let a = m.adjacency(g, &p, z).unwrap();
        let v = m.reason(g, &p, z, a).unwrap();
        let out = sgr::reproject(g, v, b, xv).unwrap();
        (b, z, a, out)
    };
    let (b0, z0, a0, o0) = run(&mut g, anchors);
    let (b1, z1, a1, o1) = run(&mut g, permuted);
    for (dst, &src) in perm.iter().enumerate() {
        let rows = |v| (g.value(v).row(dst).unwrap(), g.value(v).row(src).unwrap());
        let ((b1d, _), (_, b0s)) = (rows(b1), rows(b0));
        assert!(max_diff(b1d.data(), b0s.data()) < 1e-14);
        let ((z1d, _), (_, z0s)) = (rows(z1), rows(z0));
        assert!(max_diff(z1d.data(), z0s.data()) < 1e-14);
        for (dj, &sj) in perm.iter().enumerate() {
            let d = g.value(a1).get(&[dst, dj]) - g.value(a0).get(&[src, sj]);
            assert!(d.abs() < 1e-14);
        }
    }
    assert!(max_diff(g.value(o1).data(), g.value(o0).data()) < 1e-12);
}

#[test]
fn channel_permutation_is_equivariant() {
    let x = random_tensor(&[3, 4, 4], -1.0, 1.0, &mut rng(31));
    let (m, store) = cgr_module(3, 4, 2, 31);
    let perm = [1usize, 3, 0, 2];
    let mut permuted = store.clone();
    let w = store.by_name("cgr.node_conv.weight").unwrap().clone();
    let b = store.by_name("cgr.node_conv.bias").unwrap().clone();
    let xi = store.by_name("cgr.xi.weight").unwrap().clone();
    {
        let id = permuted.id_of("cgr.node_conv.weight").unwrap();
        let t = permuted.get_mut(id);
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..3 {
                t.set(&[dst, c, 0, 0], w.get(&[src, c, 0, 0]));
            }
        }
        let id = permuted.id_of("cgr.node_conv.bias").unwrap();
        let t = permuted.get_mut(id);
        for (dst, &src) in perm.iter().enumerate() {
            t.set(&[dst], b.get(&[src]));
        }
        let id = permuted.id_of("cgr.xi.weight").unwrap();
        let t = permuted.get_mut(id);
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..3 {
                t.set(&[c, dst, 0, 0], xi.get(&[c, src, 0, 0]));
            }
        }
    }
    let run = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let xv = g.constant(x.clone());
        let t = m.forward(&mut g, &p, xv).unwrap();
        (
            g.value(t.nodes).clone(),
            g.value(t.adjacency).clone(),
            g.value(t.output).clone(),
        )
    };
    let (z0, a0, o0) = run(&store);
    let (z1, a1, o1) = run(&permuted);
    for (dst, &src) in perm.iter().enumerate() {
        assert!(max_diff(z1.row(dst).unwrap().data(), z0.row(src).unwrap().data()) < 1e-14);
        for (dj, &sj) in perm.iter().enumerate() {
            assert!((a1.get(&[dst, dj]) - a0.get(&[src, sj])).abs() < 1e-14);
        }
    }
    assert!(max_diff(o1.data(), o0.data()) < 1e-12);
}

#[test]
fn sgr_gradients() {
    let (m, store) = sgr_module(3, 2, 41);
    let x = random_tensor(&[3, 4, 4], -1.0, 1.0, &mut rng(42));
    let report = check_module(
        &store,
        &[x],
        |g, p, v| {
            let t = m.forward(g, p, v[0])?;
            Ok::<_, dehaze::Error>(weighted_sum(g, t.output, 1)?)
        },
        43,
        40,
    );
    assert!(report.passes(1e-4), "worst {:e}", report.worst);
}

#[test]
fn cgr_gradients() {
    let (m, store) = cgr_module(4, 4, 2, 51);
    let x = random_tensor(&[4, 4, 4], -1.0, 1.0, &mut rng(52));
    let report = check_module(
        &store,
        &[x],
        |g, p, v| {
            let t = m.forward(g, p, v[0])?;
            Ok::<_, dehaze::Error>(weighted_sum(g, t.output, 2)?)
        },
        53,
        40,
    );
    assert!(report.passes(1e-4), "worst {:e}", report.worst);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn projection_columns_and_adjacency_rows_are_stochastic(seed in any::<u64>(), scale in 0.1f64..4.0) {
        let mut r = rng(seed);
        let x = random_tensor(&[3, 4, 4], -scale, scale, &mut r);
        let (m, store) = sgr_module(3, 2, seed);
        let (c, cstore) = cgr_module(3, 4, 2, seed);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.constant(x.clone());
        let t = m.forward(&mut g, &p, xv).unwrap();
        let b = g.value(t.projection);
        for l in 0..16 {
            let s: f64 = (0..4).map(|n| b.get(&[n, l])).sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
        let a = g.value(t.adjacency);
        for i in 0..4 {
            prop_assert!((a.row(i).unwrap().sum() - 1.0).abs() < 1e-5);
        }
        let mut g = Graph::new();
        let p = cstore.bind(&mut g);
        let xv = g.constant(x);
        let t = c.forward(&mut g, &p, xv).unwrap();
        let a = g.value(t.adjacency);
        for i in 0..4 {
            prop_assert!((a.row(i).unwrap().sum() - 1.0).abs() < 1e-5);
            prop_assert!(a.row(i).unwrap().data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn reasoning_output_is_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut g = Graph::new();
        let z = g.constant(random_tensor(&[3, 4], -2.0, 2.0, &mut r));
        let th = g.constant(random_tensor(&[4, 4], -1.0, 1.0, &mut r));
        let w = g.constant(random_tensor(&[4, 4], -1.0, 1.0, &mut r));
        let a = adjacency(&mut g, z, th, th).unwrap();
        let v = dehaze::graph_conv::graph_convolution(&mut g, z, a, w).unwrap();
        let nonneg = g.value(v).data().iter().all(|&v| v >= 0.0);
        prop_assert!(nonneg);
    }
}
