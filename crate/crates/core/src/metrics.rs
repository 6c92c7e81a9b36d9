//! Image quality metrics and the training loss.
//!
//! PSNR pools the squared error over every pixel and channel before taking
//! the log (not a per-channel average). SSIM uses Gaussian-weighted local
//! statistics over fully overlapping windows only, computed per channel and
//! averaged. Both run on the autodiff graph so the same code serves as the
//! evaluation metric and as the differentiable loss term.

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::tensor::{Graph, Real, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the SSIM term.
    pub lambda: f64,
    /// Side of the square SSIM window; odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel values.
    pub range: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config("loss weight must be nonnegative".into()));
        }
        if self.window.is_multiple_of(2)
            || self.sigma.is_nan()
            || self.sigma <= 0.0
            || self.range.is_nan()
            || self.range <= 0.0
        {
            return Err(Error::Config(
                "SSIM window must be odd with positive sigma and range".into(),
            ));
        }
        Ok(())
    }

    /// Normalized `window × window` Gaussian.
    pub fn kernel<T: Real>(&self) -> Tensor<T> {
        let k = self.window;
        let c = (k / 2) as f64;
        let g: Vec<f64> = (0..k)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        let values: Vec<f64> = (0..k * k).map(|i| g[i / k] * g[i % k] / (total * total)).collect();
        Tensor::from_f64([k, k], &values).expect("kernel shape")
    }
}

/// `10·log10(1/MSE)` over all values; infinite for identical inputs.
pub fn psnr(pred: &Image, reference: &Image) -> Result<f64> {
    if !pred.same_shape(reference) {
        return Err(shape_error("psnr", pred, reference));
    }
    let sq: f64 = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let mse = sq / pred.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

pub fn ssim(pred: &Image, reference: &Image, cfg: &LossConfig) -> Result<f64> {
    if !pred.same_shape(reference) {
        return Err(shape_error("ssim", pred, reference));
    }
    let mut g = Graph::<f64>::new();
    let a = g.constant(pred.to_tensor());
    let b = g.constant(reference.to_tensor());
    let s = ssim_var(&mut g, a, b, cfg)?;
    Ok(g.value(s).data()[0])
}

/// Mean SSIM of two `[C,H,W]` graph values as a scalar node.
pub fn ssim_var<T: Real>(g: &mut Graph<T>, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape != g.shape(y) {
        return Err(TensorError::ShapeMismatch {
            op: "ssim",
            lhs: shape,
            rhs: g.shape(y).to_vec(),
        }
        .into());
    }
    if shape.len() != 3 || shape[1] < cfg.window || shape[2] < cfg.window {
        return Err(TensorError::InvalidShape {
            op: "ssim",
            message: format!("image {shape:?} is smaller than the {0}x{0} window", cfg.window),
        }
        .into());
    }
    let kernel = cfg.kernel::<T>();
    let c1 = T::from_f64_lossy((cfg.k1 * cfg.range).powi(2));
    let c2 = T::from_f64_lossy((cfg.k2 * cfg.range).powi(2));
    let two = T::from_f64_lossy(2.0);

    let mu_x = g.depthwise_filter(x, &kernel)?;
    let mu_y = g.depthwise_filter(y, &kernel)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.depthwise_filter(xx, &kernel)?;
    let e_yy = g.depthwise_filter(yy, &kernel)?;
    let e_xy = g.depthwise_filter(xy, &kernel)?;
    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mu_xx)?;
    let var_y = g.sub(e_yy, mu_yy)?;
    let cov = g.sub(e_xy, mu_xy)?;

    let lum_num = g.scale(mu_xy, two)?;
    let lum_num = g.add_scalar(lum_num, c1)?;
    let cs_num = g.scale(cov, two)?;
    let cs_num = g.add_scalar(cs_num, c2)?;
    let lum_den = g.add(mu_xx, mu_yy)?;
    let lum_den = g.add_scalar(lum_den, c1)?;
    let cs_den = g.add(var_x, var_y)?;
    let cs_den = g.add_scalar(cs_den, c2)?;

    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map)?)
}

/// Graph handles for the three loss values.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_c: Var,
    pub l_ssim: Var,
    pub l_total: Var,
}

/// `l_c = MSE`, `l_ssim = 1 − SSIM`, `l_total = l_c + λ·l_ssim`.
pub fn loss_vars<T: Real>(g: &mut Graph<T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<LossVars> {
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    let l_c = g.mean(sq)?;
    let s = ssim_var(g, pred, target, cfg)?;
    let neg = g.scale(s, -T::one())?;
    let l_ssim = g.add_scalar(neg, T::one())?;
    let weighted = g.scale(l_ssim, T::from_f64_lossy(cfg.lambda))?;
    let l_total = g.add(l_c, weighted)?;
    Ok(LossVars { l_c, l_ssim, l_total })
}

/// `(l_c, l_ssim, l_total)` for two images.
pub fn loss_total(pred: &Image, reference: &Image, cfg: &LossConfig) -> Result<(f64, f64, f64)> {
    if !pred.same_shape(reference) {
        return Err(shape_error("loss", pred, reference));
    }
    let mut g = Graph::<f64>::new();
    let a = g.constant(pred.to_tensor());
    let b = g.constant(reference.to_tensor());
    let l = loss_vars(&mut g, a, b, cfg)?;
    let v = |var: Var| g.value(var).data()[0];
    Ok((v(l.l_c), v(l.l_ssim), v(l.l_total)))
}

fn shape_error(op: &'static str, a: &Image, b: &Image) -> Error {
    TensorError::ShapeMismatch {
        op,
        lhs: vec![a.channels(), a.height(), a.width()],
        rhs: vec![b.channels(), b.height(), b.width()],
    }
    .into()
}
