//! Gated fusion of shot-stack features with hazy-input features.
//!
//! Both inputs go through their own two-layer 3×3 conv+ReLU stack. The gate
//! sees the two feature maps concatenated and emits two single-channel maps
//! through independent sigmoids; they are not renormalized, so
//! `w_ams + w_hazy` is generally not 1.

use rand::Rng;

use crate::error::{config, Result};
use crate::params::{Bound, Conv, ParamStore};
use crate::tensor::{Graph, Real, Result as TensorResult, Var};

/// Two 3×3 conv+ReLU layers.
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub conv1: Conv,
    pub conv2: Conv,
    pub inputs: usize,
}

impl ConvStack {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        inputs: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(store, &format!("{prefix}.conv1"), inputs, width, 3, rng)?,
            conv2: Conv::new(store, &format!("{prefix}.conv2"), width, width, 3, rng)?,
            inputs,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = g.shape(x)[0];
        if c != self.inputs {
            return Err(config(format!(
                "feature stack expects {} channels, got {c}",
                self.inputs
            )));
        }
        let h = self.conv1.forward(g, p, x)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, p, h)?;
        Ok(g.relu(h)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Hazy,
    Ams,
}

/// The two importance maps, each `[1,H,W]` with values in `(0,1)`.
#[derive(Clone, Copy, Debug)]
pub struct GateWeights {
    pub w_ams: Var,
    pub w_hazy: Var,
}

#[derive(Clone, Debug)]
pub struct GatedFusion {
    pub hazy: ConvStack,
    pub ams: ConvStack,
    pub gate1: Conv,
    pub gate2: Conv,
}

impl GatedFusion {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shots: usize,
        width: usize,
        gate_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            hazy: ConvStack::new(store, &format!("{prefix}.hazy"), 3, width, rng)?,
            ams: ConvStack::new(store, &format!("{prefix}.ams"), 3 * shots, width, rng)?,
            gate1: Conv::new(store, &format!("{prefix}.gate1"), 2 * width, gate_width, 3, rng)?,
            gate2: Conv::new(store, &format!("{prefix}.gate2"), gate_width, 2, 3, rng)?,
        })
    }

    /// `Convs(I)` for the hazy branch (3 channels) or `Convs(I_ams)` for the
    /// shot stack (3m channels).
    pub fn extract_features<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, which: Branch) -> Result<Var> {
        match which {
            Branch::Hazy => self.hazy.forward(g, p, x),
            Branch::Ams => self.ams.forward(g, p, x),
        }
    }

    pub fn gate<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f_ams: Var, f_hazy: Var) -> TensorResult<GateWeights> {
        let both = g.concat(&[f_ams, f_hazy])?;
        let h = self.gate1.forward(g, p, both)?;
        let h = g.relu(h)?;
        let h = self.gate2.forward(g, p, h)?;
        let w = g.sigmoid(h)?;
        Ok(GateWeights {
            w_ams: g.slice(w, 0, 1)?,
            w_hazy: g.slice(w, 1, 1)?,
        })
    }

    /// Full module: features of both inputs, gate, fuse.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, hazy: Var, stack: Var) -> Result<(Var, GateWeights)> {
        let f_hazy = self.extract_features(g, p, hazy, Branch::Hazy)?;
        let f_ams = self.extract_features(g, p, stack, Branch::Ams)?;
        let w = self.gate(g, p, f_ams, f_hazy)?;
        Ok((fuse(g, f_ams, f_hazy, w)?, w))
    }
}

/// `w_ams · f_ams + w_hazy · f_hazy`, the maps broadcast over channels.
pub fn fuse<T: Real>(g: &mut Graph<T>, f_ams: Var, f_hazy: Var, w: GateWeights) -> TensorResult<Var> {
    let a = g.mul_map(f_ams, w.w_ams)?;
    let b = g.mul_map(f_hazy, w.w_hazy)?;
    g.add(a, b)
}
