//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod naive;

use std::fmt::Debug;

use dehaze::params::{Bound, ParamStore};
use dehaze::tensor::{Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst < tol
    }
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Reduces `y` to a scalar through a fixed pseudo-random weighting so every
/// output element contributes a distinct amount.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = random_tensor(g.shape(y), -1.0, 1.0, &mut rng);
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    g.sum(p)
}

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` receives the graph and one leaf per input and must return a scalar.
/// At least `min_coords` coordinates (or all of them, when fewer exist) are
/// sampled across the inputs. Error metric: |analytic − numeric| / max(1, |analytic|).
pub fn check_gradients<F, E>(inputs: &[Tensor<f64>], build: F, seed: u64, min_coords: usize) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
    E: Debug,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars).expect("forward");
        g.value(out).data()[0]
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars).expect("forward");
    let grads = g.backward(out).expect("backward");
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let total: usize = inputs.iter().map(|t| t.len()).sum();
    let coords: Vec<(usize, usize)> = if total <= min_coords {
        inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..min_coords)
            .map(|_| {
                let mut flat = rng.gen_range(0..total);
                let mut which = 0;
                while flat >= inputs[which].len() {
                    flat -= inputs[which].len();
                    which += 1;
                }
                (which, flat)
            })
            .collect()
    };

    let mut worst = 0.0f64;
    for &(i, j) in &coords {
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[j] += STEP;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[j] -= STEP;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        let a = analytic[i].data()[j];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    GradReport {
        checked: coords.len(),
        worst,
    }
}

/// [`check_gradients`] over every parameter of `store` followed by `inputs`.
/// `build` gets the parameters bound in store order and the input leaves.
pub fn check_module<F, E>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    build: F,
    seed: u64,
    min_coords: usize,
) -> GradReport
where
    F: Fn(&mut Graph<f64>, &Bound, &[Var]) -> Result<Var, E>,
    E: Debug,
{
    let n = store.len();
    let mut all: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    all.extend_from_slice(inputs);
    check_gradients(
        &all,
        |g, v| build(g, &Bound::from_vars(v[..n].to_vec()), &v[n..]),
        seed,
        min_coords,
    )
}
