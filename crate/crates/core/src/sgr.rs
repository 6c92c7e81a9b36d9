//! Spatial graph reasoning.
//!
//! Pixels of a `[C,H,W]` feature map are soft-assigned to `N = q²` region
//! nodes. Each node has an anchor: the average of the `φ`-embedded features
//! over one cell of a uniform `q × q` grid. The assignment matrix
//! `B: [N,L]` (`L = H·W`) is the softmax, over nodes, of anchor·pixel
//! similarities, so every pixel column sums to one. Node features are
//! `Z = B × K` with `K` the `ψ`-embedded pixels. One graph convolution over a
//! per-image adjacency updates the nodes, and `Bᵀ` carries them back to the
//! pixels as a residual.
//!
//! Anchors are numbered row-major over the grid.

use rand::Rng;

use crate::error::{config, Result};
use crate::graph_conv;
use crate::params::{linear, Bound, Conv, ParamId, ParamStore};
use crate::tensor::{Graph, Real, Result as TensorResult, TensorError, Var};

/// Graph handles produced by one pass of the module, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct SgrTrace {
    /// `B: [N,L]`, over the (possibly padded) grid.
    pub projection: Var,
    /// `Z: [N,C]`.
    pub nodes: Var,
    /// `A: [N,N]`.
    pub adjacency: Var,
    /// `V: [N,C]`.
    pub reasoned: Var,
    /// Residual output, same shape as the input.
    pub output: Var,
    /// Extents of the grid `B` was computed on.
    pub grid: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct SpatialGraphReasoning {
    pub psi: Conv,
    pub phi: Conv,
    pub theta: ParamId,
    pub theta_prime: ParamId,
    pub weight: ParamId,
    pub q: usize,
    pub channels: usize,
}

impl SpatialGraphReasoning {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        q: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if q == 0 {
            return Err(config("spatial grid side must be positive"));
        }
        Ok(Self {
            psi: Conv::new(store, &format!("{prefix}.psi"), channels, channels, 1, rng)?,
            phi: Conv::new(store, &format!("{prefix}.phi"), channels, channels, 1, rng)?,
            theta: linear(store, &format!("{prefix}.theta"), channels, rng)?,
            theta_prime: linear(store, &format!("{prefix}.theta_prime"), channels, rng)?,
            weight: linear(store, &format!("{prefix}.weight"), channels, rng)?,
            q,
            channels,
        })
    }

    pub fn nodes(&self) -> usize {
        self.q * self.q
    }

    /// Node features `Z` and projection `B` for `x: [C,H,W]`; `H` and `W`
    /// must be divisible by `q`.
    pub fn project<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> TensorResult<(Var, Var)> {
        let embedded = self.phi.forward(g, p, x)?;
        let anchors = anchors(g, embedded, self.q)?;
        let b = projection_matrix(g, anchors, embedded)?;
        let k = self.psi.forward(g, p, x)?;
        let z = node_features(g, b, k)?;
        Ok((z, b))
    }

    pub fn adjacency<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> TensorResult<Var> {
        graph_conv::adjacency(g, z, p.var(self.theta), p.var(self.theta_prime))
    }

    pub fn reason<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var, a: Var) -> TensorResult<Var> {
        graph_conv::graph_convolution(g, z, a, p.var(self.weight))
    }

    /// Project, reason, reproject, add the residual. Inputs whose extents are
    /// not multiples of `q` are edge-replicated at the bottom/right first and
    /// the padding is cropped from the result.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<SgrTrace> {
        let shape = g.shape(x).to_vec();
        let [c, h, w] = shape[..] else {
            return Err(config(format!("spatial reasoning needs [C,H,W], got {shape:?}")));
        };
        if c != self.channels {
            return Err(config(format!(
                "spatial reasoning expects {} channels, got {c}",
                self.channels
            )));
        }
        let (ph, pw) = (h.div_ceil(self.q) * self.q, w.div_ceil(self.q) * self.q);
        let padded = if (ph, pw) == (h, w) {
            x
        } else {
            g.pad_replicate(x, ph - h, pw - w)?
        };
        let (z, b) = self.project(g, p, padded)?;
        let a = self.adjacency(g, p, z)?;
        let v = self.reason(g, p, z, a)?;
        let out = reproject(g, v, b, padded)?;
        let output = if (ph, pw) == (h, w) { out } else { g.crop(out, h, w)? };
        Ok(SgrTrace {
            projection: b,
            nodes: z,
            adjacency: a,
            reasoned: v,
            output,
            grid: (ph, pw),
        })
    }
}

/// Anchor features `P: [N,C]`: `q × q` average pooling of `embedded: [C,H,W]`,
/// flattened row-major over the grid.
pub fn anchors<T: Real>(g: &mut Graph<T>, embedded: Var, q: usize) -> TensorResult<Var> {
    let &[c, h, w] = g.shape(embedded) else {
        return Err(TensorError::InvalidShape {
            op: "sgr anchors",
            message: format!("expected [C,H,W], got {:?}", g.shape(embedded)),
        });
    };
    if q == 0 || h % q != 0 || w % q != 0 {
        return Err(TensorError::InvalidShape {
            op: "sgr anchors",
            message: format!("{h}x{w} map is not divisible into a {q}x{q} grid"),
        });
    }
    let pooled = g.avg_pool2d(embedded, h / q, w / q)?;
    let flat = g.reshape(pooled, [c, q * q])?;
    g.transpose(flat)
}

/// `B = softmax_over_nodes(P × T)` with `T` the `[C,L]` pixel features.
pub fn projection_matrix<T: Real>(g: &mut Graph<T>, anchors: Var, embedded: Var) -> TensorResult<Var> {
    let &[c, h, w] = g.shape(embedded) else {
        unreachable!("checked by anchors")
    };
    let pixels = g.reshape(embedded, [c, h * w])?;
    let logits = g.matmul(anchors, pixels)?;
    g.softmax(logits, 0)
}

/// `Z = B × K` with `K` the `[L,C]` pixel embedding.
pub fn node_features<T: Real>(g: &mut Graph<T>, b: Var, k: Var) -> TensorResult<Var> {
    let shape = g.shape(k).to_vec();
    let k = g.reshape(k, [shape[0], shape[1] * shape[2]])?;
    let k = g.transpose(k)?;
    g.matmul(b, k)
}

/// `x + reshape(Bᵀ × V)`.
pub fn reproject<T: Real>(g: &mut Graph<T>, v: Var, b: Var, x: Var) -> TensorResult<Var> {
    let shape = g.shape(x).to_vec();
    let bt = g.transpose(b)?;
    let y = g.matmul(bt, v)?;
    let y = g.transpose(y)?;
    let y = g.reshape(y, shape)?;
    g.add(x, y)
}
