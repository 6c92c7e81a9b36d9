//! Adam training loop.
//!
//! Each epoch visits the dataset in a seeded random order, in batches whose
//! last one may be short. Every batch item gets an independent random crop
//! (the same window for the hazy and clear image), its own forward/backward
//! graph, and contributes `1/batch` of its gradient; items are reduced in
//! batch order, so runs are bitwise reproducible. The learning rate is
//! multiplied by `lr_decay_factor` every `lr_decay_every` epochs.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Error, Result};
use crate::imaging::{crop_offsets, Image};
use crate::metrics::{loss_vars, LossConfig};
use crate::net::DehazeNet;
use crate::params::ParamStore;
use crate::tensor::Graph;

/// Learning rate of the full-size recipe. Desk runs default to
/// [`DESK_LR`] instead: a few hundred steps from scratch at 1e-4 barely move.
pub const FULL_LR: f64 = 1e-4;
pub const DESK_LR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    /// Square crop side; 0 trains on whole images.
    pub crop: usize,
    pub epochs: usize,
    /// Stops after this many steps regardless of `epochs`.
    pub max_steps: Option<usize>,
    pub lr_decay_factor: f64,
    /// Epochs between decays; 0 disables decay.
    pub lr_decay_every: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DESK_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 2,
            crop: 64,
            epochs: 100,
            max_steps: None,
            lr_decay_factor: 0.5,
            lr_decay_every: 40,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config(format!(
                "learning rate {} must be finite and nonnegative",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config("Adam betas must lie in [0,1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.lr_decay_factor.is_nan() || self.lr_decay_factor <= 0.0 {
            return Err(config("eps and decay factor must be positive"));
        }
        if self.batch == 0 {
            return Err(config("batch size must be positive"));
        }
        self.loss.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_every {
            0 => self.lr,
            every => self.lr * self.lr_decay_factor.powi((epoch / every) as i32),
        }
    }
}

/// First and second moment estimates, one entry per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr`. Gradients are
/// checked for finiteness before anything is modified.
pub fn adam_step(
    store: &mut ParamStore<f32>,
    grads: &[Vec<f32>],
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(config("gradient count does not match the parameters"));
    }
    for ((name, t), g) in store.iter().zip(grads) {
        if g.len() != t.len() {
            return Err(config(format!("gradient for `{name}` has the wrong size")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: state.t as usize + 1,
                detail: format!("non-finite gradient for `{name}`"),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, param) in store.values_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in param.data_mut().iter_mut().enumerate() {
            let g = grads[i][j] as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            *p = (*p as f64 - update) as f32;
        }
    }
    Ok(())
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLine {
    /// 1-based.
    pub step: usize,
    /// 0-based.
    pub epoch: usize,
    pub lr: f64,
    pub l_c: f64,
    pub l_ssim: f64,
    pub l_total: f64,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:e} {:.8} {:.8} {:.8}",
            self.step, self.epoch, self.lr, self.l_c, self.l_ssim, self.l_total
        )
    }
}

/// Mean loss and summed-then-scaled gradients of one batch.
pub struct BatchResult {
    pub grads: Vec<Vec<f32>>,
    pub l_c: f64,
    pub l_ssim: f64,
    pub l_total: f64,
}

/// Forward and backward over `(hazy, clear)` pairs of equal size.
pub fn batch_gradients(
    net: &DehazeNet,
    store: &ParamStore<f32>,
    batch: &[(Image, Image)],
    loss: &LossConfig,
) -> Result<BatchResult> {
    let mut grads: Vec<Vec<f32>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let scale = 1.0 / batch.len() as f32;
    let (mut l_c, mut l_ssim, mut l_total) = (0.0, 0.0, 0.0);
    for (hazy, clear) in batch {
        let mut g = Graph::<f32>::new();
        let p = store.bind(&mut g);
        let x = g.constant(hazy.to_tensor());
        let y = g.constant(clear.to_tensor());
        let trace = net.forward(&mut g, &p, x)?;
        let l = loss_vars(&mut g, trace.output, y, loss)?;
        let read = |v| g.value(v).data()[0] as f64;
        l_c += read(l.l_c);
        l_ssim += read(l.l_ssim);
        l_total += read(l.l_total);
        let back = g.backward(l.l_total)?;
        for (acc, &var) in grads.iter_mut().zip(p.vars()) {
            if let Some(gr) = back.get(var) {
                for (a, &v) in acc.iter_mut().zip(gr.data()) {
                    *a += v * scale;
                }
            }
        }
    }
    let n = batch.len() as f64;
    Ok(BatchResult {
        grads,
        l_c: l_c / n,
        l_ssim: l_ssim / n,
        l_total: l_total / n,
    })
}

/// Seeded visiting order for one epoch.
pub fn epoch_order(count: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Trains `store` in place on `(hazy, clear)` pairs and returns the loss log.
/// `on_step` sees every log line as it is produced. A non-finite loss or
/// gradient stops training with [`Error::Diverged`], leaving `store` at the
/// last finite parameters.
pub fn train(
    net: &DehazeNet,
    store: &mut ParamStore<f32>,
    data: &[(Image, Image)],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogLine),
) -> Result<Vec<LogLine>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(config("training set is empty"));
    }
    for (hazy, clear) in data {
        if !hazy.same_shape(clear) {
            return Err(config("hazy and clear images differ in shape"));
        }
    }
    let per_epoch = data.len().div_ceil(cfg.batch);
    let limit = cfg.max_steps.unwrap_or(cfg.epochs * per_epoch);
    let mut crop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    crop_rng.set_stream(u64::MAX);
    let mut state = AdamState::new(store);
    let mut log = Vec::with_capacity(limit);
    let mut step = 0;
    let mut epoch = 0;
    while step < limit {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let lr = cfg.lr_at(epoch);
        for idx in order.chunks(cfg.batch) {
            if step >= limit {
                break;
            }
            step += 1;
            let mut batch = Vec::with_capacity(idx.len());
            for &i in idx {
                let (hazy, clear) = &data[i];
                let seed = crop_rng.next_u64();
                batch.push(if cfg.crop == 0 {
                    (hazy.clone(), clear.clone())
                } else {
                    let (top, left) = crop_offsets(hazy.height(), hazy.width(), cfg.crop, seed)?;
                    (
                        hazy.crop(top, left, cfg.crop, cfg.crop)?,
                        clear.crop(top, left, cfg.crop, cfg.crop)?,
                    )
                });
            }
            let result = batch_gradients(net, store, &batch, &cfg.loss).map_err(|e| match e.non_finite_op() {
                Some(op) => Error::Diverged {
                    step,
                    detail: format!("non-finite value in {op}"),
                },
                None => e,
            })?;
            if !result.l_total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "non-finite loss".into(),
                });
            }
            let line = LogLine {
                step,
                epoch,
                lr,
                l_c: result.l_c,
                l_ssim: result.l_ssim,
                l_total: result.l_total,
            };
            on_step(&line);
            log.push(line);
            adam_step(store, &result.grads, &mut state, cfg, lr).map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { step, detail },
                other => other,
            })?;
        }
        epoch += 1;
    }
    Ok(log)
}

/// Mean `l_total` of the network over whole images.
pub fn mean_loss(net: &DehazeNet, store: &ParamStore<f32>, data: &[(Image, Image)], loss: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for (hazy, clear) in data {
        let mut g = Graph::<f32>::new();
        let p = store.bind(&mut g);
        let x = g.constant(hazy.to_tensor());
        let y = g.constant(clear.to_tensor());
        let trace = net.forward(&mut g, &p, x)?;
        let l = loss_vars(&mut g, trace.output, y, loss)?;
        total += g.value(l.l_total).data()[0] as f64;
    }
    Ok(total / data.len() as f64)
}

/// Converts the loss log to text, one line per step.
pub fn format_log(log: &[LogLine]) -> String {
    let mut s = String::from("# step epoch lr l_c l_ssim l_total\n");
    for line in log {
        s.push_str(&line.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::new([2], vec![0.5, -1.0]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store();
        let before = s.clone();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![0.0, 0.0]], &mut st, &TrainConfig::default(), 1e-3).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store();
        let mut st = AdamState::new(&s);
        let cfg = TrainConfig::default();
        adam_step(&mut s, &[vec![0.3, -2.0]], &mut st, &cfg, 1e-3).unwrap();
        let d = s.by_name("a").unwrap().data();
        assert!((d[0] - (0.5 - 1e-3)).abs() < 1e-6);
        assert!((d[1] - (-1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut s = store();
        let mut st = AdamState::new(&s);
        let err = adam_step(&mut s, &[vec![f32::NAN, 0.0]], &mut st, &TrainConfig::default(), 1e-3).unwrap_err();
        assert!(err.to_string().contains("`a`"), "{err}");
        assert_eq!(st.t, 0);
    }

    #[test]
    fn schedule_halves() {
        let cfg = TrainConfig {
            lr: 1e-4,
            lr_decay_every: 3,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(2), 1e-4);
        assert_eq!(cfg.lr_at(3), 0.5e-4);
        assert_eq!(cfg.lr_at(6), 0.25e-4);
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut o = epoch_order(7, 3, 1);
        assert_eq!(o, epoch_order(7, 3, 1));
        o.sort();
        assert_eq!(o, (0..7).collect::<Vec<_>>());
    }
}
