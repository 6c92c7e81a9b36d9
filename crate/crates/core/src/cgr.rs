//! Channel graph reasoning.
//!
//! A 1×1 convolution maps the `C` input channels to `N` node channels, each
//! average-pooled to an `M × M` map and flattened, giving node features
//! `Z: [N,S]` with `S = M²`. After one graph convolution the nodes are
//! carried back to the pixels through a separately learned embedding
//! `δ: C → S`: every pixel gets an `S`-vector `d_l`, and node `n` at pixel
//! `l` reads `d_l · v_n`. A final 1×1 convolution `ξ: N → C` (bias starting at
//! zero) restores the channel count before the residual add.

use rand::Rng;

use crate::error::{config, Result};
use crate::graph_conv;
use crate::params::{linear, Bound, Conv, ParamId, ParamStore};
use crate::tensor::{Graph, Real, Result as TensorResult, TensorError, Var};

/// Shrinks the initial output projection so the residual starts near the
/// identity. At full fan-in scale the branch output is several times larger
/// than its input and the ReLUs after it die before training gets going.
pub const XI_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct CgrTrace {
    /// Node-channel maps `[N,H',W']` before pooling, over the padded grid.
    pub node_maps: Var,
    /// `Z_c: [N,S]`.
    pub nodes: Var,
    /// `A_c: [N,N]`.
    pub adjacency: Var,
    /// `V_c: [N,S]`.
    pub reasoned: Var,
    pub output: Var,
    pub grid: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct ChannelGraphReasoning {
    pub node_conv: Conv,
    pub theta: ParamId,
    pub theta_prime: ParamId,
    pub weight: ParamId,
    pub delta: Conv,
    pub xi: Conv,
    pub channels: usize,
    pub n: usize,
    pub m_pool: usize,
}

impl ChannelGraphReasoning {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        n: usize,
        m_pool: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n == 0 || m_pool == 0 {
            return Err(config("channel node count and pooled side must be positive"));
        }
        let s = m_pool * m_pool;
        let node_conv = Conv::new(store, &format!("{prefix}.node_conv"), channels, n, 1, rng)?;
        let theta = linear(store, &format!("{prefix}.theta"), s, rng)?;
        let theta_prime = linear(store, &format!("{prefix}.theta_prime"), s, rng)?;
        let weight = linear(store, &format!("{prefix}.weight"), s, rng)?;
        let delta = Conv::new(store, &format!("{prefix}.delta"), channels, s, 1, rng)?;
        let xi = Conv::new(store, &format!("{prefix}.xi"), n, channels, 1, rng)?;
        let scale = T::from_f64_lossy(XI_INIT_SCALE);
        for v in store.get_mut(xi.weight).data_mut() {
            *v *= scale;
        }
        Ok(Self {
            node_conv,
            theta,
            theta_prime,
            weight,
            delta,
            xi,
            channels,
            n,
            m_pool,
        })
    }

    /// Node features `Z_c: [N,S]` and the unpooled node maps.
    pub fn project_channels<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> TensorResult<(Var, Var)> {
        let maps = self.node_conv.forward(g, p, x)?;
        Ok((pool_nodes(g, maps, self.m_pool)?, maps))
    }

    pub fn adjacency_channels<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> TensorResult<Var> {
        graph_conv::adjacency(g, z, p.var(self.theta), p.var(self.theta_prime))
    }

    pub fn reason_channels<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var, a: Var) -> TensorResult<Var> {
        graph_conv::graph_convolution(g, z, a, p.var(self.weight))
    }

    pub fn reproject_channels<T: Real>(&self, g: &mut Graph<T>, p: &Bound, v: Var, x: Var) -> TensorResult<Var> {
        let d = self.delta.forward(g, p, x)?;
        let y = channel_response(g, v, d)?;
        let y = self.xi.forward(g, p, y)?;
        g.add(x, y)
    }

    /// Full module. Extents that are not multiples of `M` are edge-replicated
    /// at the bottom/right and cropped afterwards.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<CgrTrace> {
        let shape = g.shape(x).to_vec();
        let [c, h, w] = shape[..] else {
            return Err(config(format!("channel reasoning needs [C,H,W], got {shape:?}")));
        };
        if c != self.channels {
            return Err(config(format!(
                "channel reasoning expects {} channels, got {c}",
                self.channels
            )));
        }
        let m = self.m_pool;
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = if (ph, pw) == (h, w) {
            x
        } else {
            g.pad_replicate(x, ph - h, pw - w)?
        };
        let (z, maps) = self.project_channels(g, p, padded)?;
        let a = self.adjacency_channels(g, p, z)?;
        let v = self.reason_channels(g, p, z, a)?;
        let out = self.reproject_channels(g, p, v, padded)?;
        let output = if (ph, pw) == (h, w) { out } else { g.crop(out, h, w)? };
        Ok(CgrTrace {
            node_maps: maps,
            nodes: z,
            adjacency: a,
            reasoned: v,
            output,
            grid: (ph, pw),
        })
    }
}

/// Average-pools `[N,H,W]` node maps to `M × M` and flattens to `[N,M²]`.
pub fn pool_nodes<T: Real>(g: &mut Graph<T>, maps: Var, m: usize) -> TensorResult<Var> {
    let &[n, h, w] = g.shape(maps) else {
        return Err(TensorError::InvalidShape {
            op: "cgr pooling",
            message: format!("expected [N,H,W], got {:?}", g.shape(maps)),
        });
    };
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(TensorError::InvalidShape {
            op: "cgr pooling",
            message: format!("{h}x{w} map does not pool evenly to {m}x{m}"),
        });
    }
    let pooled = g.avg_pool2d(maps, h / m, w / m)?;
    g.reshape(pooled, [n, m * m])
}

/// `Y[n,l] = Σ_s d[s,l] · v[n,s]`, returned as `[N,H,W]`.
pub fn channel_response<T: Real>(g: &mut Graph<T>, v: Var, d: Var) -> TensorResult<Var> {
    let &[s, h, w] = g.shape(d) else {
        return Err(TensorError::InvalidShape {
            op: "cgr reprojection",
            message: format!("expected [S,H,W], got {:?}", g.shape(d)),
        });
    };
    let n = g.shape(v)[0];
    let d = g.reshape(d, [s, h * w])?;
    let y = g.matmul(v, d)?;
    g.reshape(y, [n, h, w])
}
