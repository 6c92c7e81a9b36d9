//! Artificial multiple shots: iterated gamma-style high-frequency
//! compensation of the hazy input, with per-image parameters.
//!
//! Shot `i` is computed from shot `i−1` (shot 0 being the input) as
//!
//! ```text
//! S_i = S_{i-1} + α_i · (S_{i-1}^(1+γ_i) − S_{i-1})
//! ```
//!
//! with one `(α_i, γ_i)` pair per level shared by every pixel and channel.
//! The pairs come from a small predictor: two 3×3 convolutions with a ReLU
//! between them, global average pooling, and a sigmoid, giving `2m` values
//! (`α_1..α_m` then `γ_1..γ_m`).

use rand::Rng;

use crate::error::{config, Result};
use crate::params::{Bound, Conv, ParamStore};
use crate::tensor::{Graph, Real, Result as TensorResult, Tensor, Var};

pub const DEFAULT_SHOTS: usize = 4;
pub const MAX_SHOTS: usize = 8;
pub const PREDICTOR_WIDTH: usize = 16;

/// Enhancement parameters for each shot level, all in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotParams {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl ShotParams {
    pub fn new(alpha: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if alpha.len() != gamma.len() {
            return Err(config(format!("{} alphas but {} gammas", alpha.len(), gamma.len())));
        }
        if alpha.iter().chain(&gamma).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(config("shot parameters must lie in [0,1]"));
        }
        Ok(Self { alpha, gamma })
    }

    /// Same `(alpha, gamma)` for all `m` levels.
    pub fn uniform(m: usize, alpha: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![alpha; m], vec![gamma; m])
    }

    pub fn shots(&self) -> usize {
        self.alpha.len()
    }
}

/// Graph handles for predicted shot parameters; each is a one-element tensor.
#[derive(Clone, Debug)]
pub struct ShotVars {
    pub alpha: Vec<Var>,
    pub gamma: Vec<Var>,
}

impl ShotVars {
    pub fn values<T: Real>(&self, g: &Graph<T>) -> ShotParams {
        let read = |vs: &[Var]| vs.iter().map(|&v| g.value(v).data()[0].to_f64().unwrap()).collect();
        ShotParams {
            alpha: read(&self.alpha),
            gamma: read(&self.gamma),
        }
    }
}

/// Shots `S_1..S_m` concatenated along channels (`[3m,H,W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ShotStack<T: Real = f32> {
    pub shots: Tensor<T>,
    pub m: usize,
}

impl<T: Real> ShotStack<T> {
    /// Shot `k` (1-based) as a `[3,H,W]` tensor.
    pub fn shot(&self, k: usize) -> Tensor<T> {
        assert!((1..=self.m).contains(&k), "shot index {k} out of 1..={}", self.m);
        let per = self.shots.len() / self.m;
        let s = &self.shots.shape()[1..];
        Tensor::new([3, s[0], s[1]], self.shots.data()[(k - 1) * per..k * per].to_vec()).unwrap()
    }
}

/// One shot level: `s + α·(s^(1+γ) − s)`.
pub fn apply_shot<T: Real>(g: &mut Graph<T>, s_prev: Var, alpha: Var, gamma: Var) -> TensorResult<Var> {
    let exponent = g.add_scalar(gamma, T::one())?;
    let powered = g.pow(s_prev, exponent)?;
    let delta = g.sub(powered, s_prev)?;
    let step = g.mul_scalar(delta, alpha)?;
    g.add(s_prev, step)
}

/// Iterates [`apply_shot`] and concatenates `S_1..S_m` channel-wise.
pub fn build_stack_vars<T: Real>(g: &mut Graph<T>, image: Var, params: &ShotVars) -> Result<Var> {
    let m = params.alpha.len();
    if m == 0 || params.gamma.len() != m {
        return Err(config("artificial shot count must be at least 1"));
    }
    let mut shots = Vec::with_capacity(m);
    let mut current = image;
    for (&a, &gm) in params.alpha.iter().zip(&params.gamma) {
        current = apply_shot(g, current, a, gm)?;
        shots.push(current);
    }
    Ok(g.concat(&shots)?)
}

/// Builds the shot stack for a `[3,H,W]` image with fixed parameters.
pub fn build_stack<T: Real>(image: &Tensor<T>, params: &ShotParams) -> Result<ShotStack<T>> {
    if params.shots() == 0 {
        return Err(config("artificial shot count must be at least 1"));
    }
    if image.shape().first() != Some(&3) || image.rank() != 3 {
        return Err(config(format!("shots need a [3,H,W] image, got {:?}", image.shape())));
    }
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let vars = ShotVars {
        alpha: params
            .alpha
            .iter()
            .map(|&a| g.constant(Tensor::scalar(T::from_f64_lossy(a))))
            .collect(),
        gamma: params
            .gamma
            .iter()
            .map(|&v| g.constant(Tensor::scalar(T::from_f64_lossy(v))))
            .collect(),
    };
    let stack = build_stack_vars(&mut g, x, &vars)?;
    Ok(ShotStack {
        shots: g.value(stack).clone(),
        m: params.shots(),
    })
}

/// Predicts `(α, γ)` for every shot level from the input image.
#[derive(Clone, Debug)]
pub struct AmsPredictor {
    pub conv1: Conv,
    pub conv2: Conv,
    pub shots: usize,
}

impl AmsPredictor {
    /// `3 → width` and `width → 2·shots` 3×3 convolutions. The final bias
    /// starts at zero.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shots: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(1..=MAX_SHOTS).contains(&shots) {
            return Err(config(format!("artificial shot count {shots} outside 1..={MAX_SHOTS}")));
        }
        Ok(Self {
            conv1: Conv::new(store, &format!("{prefix}.conv1"), 3, width, 3, rng)?,
            conv2: Conv::new(store, &format!("{prefix}.conv2"), width, 2 * shots, 3, rng)?,
            shots,
        })
    }

    pub fn predict_vars<T: Real>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> TensorResult<ShotVars> {
        let h = self.conv1.forward(g, p, image)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, p, h)?;
        let (height, width) = (g.shape(h)[1], g.shape(h)[2]);
        let pooled = g.avg_pool2d(h, height, width)?;
        let flat = g.reshape(pooled, [2 * self.shots])?;
        let params = g.sigmoid(flat)?;
        let mut alpha = Vec::with_capacity(self.shots);
        let mut gamma = Vec::with_capacity(self.shots);
        for i in 0..self.shots {
            alpha.push(g.slice(params, i, 1)?);
        }
        for i in 0..self.shots {
            gamma.push(g.slice(params, self.shots + i, 1)?);
        }
        Ok(ShotVars { alpha, gamma })
    }

    /// Predicted parameters for one `[3,H,W]` image.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, image: &Tensor<T>) -> Result<ShotParams> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(image.clone());
        let vars = self.predict_vars(&mut g, &p, x)?;
        Ok(vars.values(&g))
    }

    /// Predicts parameters and builds the `[3m,H,W]` stack in one graph.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<(Var, ShotVars)> {
        let vars = self.predict_vars(g, p, image)?;
        let stack = build_stack_vars(g, image, &vars)?;
        Ok((stack, vars))
    }
}
