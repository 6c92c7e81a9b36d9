//! The full dehazing network.
//!
//! ```text
//! hazy ─┬─ AMS predictor ── shot stack ─┐
//!       └───────────────────────────────┴─ front end (gated fusion │ merge │ plain)
//!   → encoder stages 1..3 → (SGR ∥ CGR, mean) → encoder stage 4
//!   → one 4×4/2 deconvolution per downsampling step → 3×3 conv
//!   → (+ logit of the hazy input) → sigmoid
//! ```
//!
//! Each encoder stage halves the resolution as many times as its `downsample`
//! entry says (2×2 average pools, then a stride-2 entry conv), applies the
//! 3×3 conv+ReLU and one residual block. With `input_residual` the head
//! predicts a correction in logit space on top of the hazy image rather than
//! the clear image itself; without it a randomly initialized decoder has to
//! rebuild every edge through the bottleneck and tends to settle on flat gray. The four switches of [`NetConfig`] remove components for
//! ablation; with AMS on and gated fusion off, the hazy image and its shot
//! stack are concatenated and sent through a plain conv stack.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ams::{AmsPredictor, ShotVars, DEFAULT_SHOTS, PREDICTOR_WIDTH};
use crate::cgr::{CgrTrace, ChannelGraphReasoning};
use crate::error::{config, Result, StageContext};
use crate::fusion::{ConvStack, GateWeights, GatedFusion};
use crate::imaging::Image;
use crate::params::{Bound, Conv, Deconv, ParamStore};
use crate::sgr::{SgrTrace, SpatialGraphReasoning};
use crate::tensor::{Graph, Real, Result as TensorResult, Tensor, Var};

/// Index of the encoder stage after which the reasoning branches run.
pub const REASONING_STAGE: usize = 2;

/// Clamp applied to the input before taking its logit.
pub const RESIDUAL_EPS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub enable_ams: bool,
    pub enable_gf: bool,
    pub enable_sgr: bool,
    pub enable_cgr: bool,
    /// Output channels of the four encoder stages.
    pub widths: Vec<usize>,
    /// Number of 2× downsamplings at the start of each stage.
    pub downsample: Vec<usize>,
    /// Width of the front-end feature stacks.
    pub fusion_width: usize,
    pub gate_width: usize,
    pub predictor_width: usize,
    /// SGR grid side; `q²` nodes.
    pub q: usize,
    pub n_cgr: usize,
    pub m_pool: usize,
    /// Number of artificial shots.
    pub shots: usize,
    /// Add the logit of the input to the head output before the sigmoid.
    pub input_residual: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    pub fn desk() -> Self {
        Self {
            enable_ams: true,
            enable_gf: true,
            enable_sgr: true,
            enable_cgr: true,
            widths: vec![16, 32, 64, 64],
            downsample: vec![1, 1, 1, 1],
            fusion_width: 32,
            gate_width: 16,
            predictor_width: PREDICTOR_WIDTH,
            q: 8,
            n_cgr: 32,
            m_pool: 4,
            shots: DEFAULT_SHOTS,
            input_residual: true,
            seed: 0,
        }
    }

    /// Small enough for finite-difference checks on 16×16 inputs.
    pub fn tiny() -> Self {
        Self {
            widths: vec![8; 4],
            downsample: vec![0, 1, 1, 0],
            fusion_width: 8,
            gate_width: 4,
            predictor_width: 4,
            q: 2,
            n_cgr: 4,
            m_pool: 2,
            shots: 2,
            ..Self::desk()
        }
    }

    /// Nominal full-size layout: 1/32 resolution at the bottleneck, five
    /// deconvolutions, 256 spatial and 512 channel nodes.
    pub fn full_scale() -> Self {
        Self {
            widths: vec![256, 512, 1024, 2048],
            downsample: vec![2, 1, 1, 1],
            fusion_width: 64,
            gate_width: 32,
            q: 16,
            n_cgr: 512,
            m_pool: 8,
            ..Self::desk()
        }
    }

    /// The four component switches as `(ams, gf, sgr, cgr)`.
    pub fn with_switches(mut self, ams: bool, gf: bool, sgr: bool, cgr: bool) -> Self {
        self.enable_ams = ams;
        self.enable_gf = gf;
        self.enable_sgr = sgr;
        self.enable_cgr = cgr;
        self
    }

    /// Input extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.halvings()
    }

    pub fn halvings(&self) -> usize {
        self.downsample.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.downsample.len() != 4 {
            return Err(config("encoder needs exactly four stages"));
        }
        let positive = [
            self.fusion_width,
            self.gate_width,
            self.predictor_width,
            self.q,
            self.n_cgr,
            self.m_pool,
        ];
        if self.widths.iter().chain(&positive).any(|&w| w == 0) {
            return Err(config("all widths and node counts must be positive"));
        }
        if self.enable_gf && !self.enable_ams {
            return Err(config("gated fusion needs the artificial-shot branch"));
        }
        if self.halvings() > 16 {
            return Err(config("too many downsampling steps"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    downsample: usize,
    conv: Conv,
    res_a: Conv,
    res_b: Conv,
}

impl EncoderStage {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, mut x: Var) -> TensorResult<Var> {
        // Halvings beyond the first are average pools; the last one is the
        // stride of the entry conv.
        for _ in 1..self.downsample {
            x = g.avg_pool2d(x, 2, 2)?;
        }
        let h = self.conv.forward(g, p, x)?;
        let h = g.relu(h)?;
        let r = self.res_a.forward(g, p, h)?;
        let r = g.relu(r)?;
        let r = self.res_b.forward(g, p, r)?;
        let sum = g.add(h, r)?;
        g.relu(sum)
    }
}

#[derive(Clone, Debug)]
enum FrontEnd {
    Gated(GatedFusion),
    Merge(ConvStack),
    Plain(ConvStack),
}

/// Everything one forward pass exposes besides the output.
#[derive(Clone, Debug)]
pub struct NetTrace {
    pub shots: Option<(Var, ShotVars)>,
    pub gate: Option<GateWeights>,
    pub sgr: Option<SgrTrace>,
    pub cgr: Option<CgrTrace>,
    /// Feature map the reasoning branches consumed.
    pub reasoning_input: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct DehazeNet {
    pub config: NetConfig,
    ams: Option<AmsPredictor>,
    front: FrontEnd,
    encoder: Vec<EncoderStage>,
    sgr: Option<SpatialGraphReasoning>,
    cgr: Option<ChannelGraphReasoning>,
    decoder: Vec<Deconv>,
    head: Conv,
}

impl DehazeNet {
    /// Builds the network and a freshly initialized parameter store from
    /// `config.seed`.
    pub fn new<T: Real>(config: NetConfig) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let ams = if c.enable_ams {
            Some(AmsPredictor::new(
                &mut store,
                "ams",
                c.shots,
                c.predictor_width,
                &mut rng,
            )?)
        } else {
            None
        };
        let front = match (c.enable_ams, c.enable_gf) {
            (true, true) => FrontEnd::Gated(GatedFusion::new(
                &mut store,
                "fusion",
                c.shots,
                c.fusion_width,
                c.gate_width,
                &mut rng,
            )?),
            (true, false) => FrontEnd::Merge(ConvStack::new(
                &mut store,
                "merge",
                3 + 3 * c.shots,
                c.fusion_width,
                &mut rng,
            )?),
            _ => FrontEnd::Plain(ConvStack::new(&mut store, "stem", 3, c.fusion_width, &mut rng)?),
        };
        let mut encoder = Vec::with_capacity(4);
        let mut width = c.fusion_width;
        for (i, (&out, &down)) in c.widths.iter().zip(&c.downsample).enumerate() {
            let prefix = format!("encoder.{i}");
            encoder.push(EncoderStage {
                downsample: down,
                conv: Conv {
                    stride: if down > 0 { 2 } else { 1 },
                    ..Conv::new(&mut store, &format!("{prefix}.conv"), width, out, 3, &mut rng)?
                },
                res_a: Conv::new(&mut store, &format!("{prefix}.res_a"), out, out, 3, &mut rng)?,
                res_b: Conv::new(&mut store, &format!("{prefix}.res_b"), out, out, 3, &mut rng)?,
            });
            width = out;
        }
        let mid = c.widths[REASONING_STAGE];
        let sgr = if c.enable_sgr {
            Some(SpatialGraphReasoning::new(&mut store, "sgr", mid, c.q, &mut rng)?)
        } else {
            None
        };
        let cgr = if c.enable_cgr {
            Some(ChannelGraphReasoning::new(
                &mut store, "cgr", mid, c.n_cgr, c.m_pool, &mut rng,
            )?)
        } else {
            None
        };
        let steps = c.halvings();
        let mut decoder = Vec::with_capacity(steps);
        for k in 0..steps {
            // Walk the encoder widths back down, bottoming out at the first.
            let out = c.widths[2usize.saturating_sub(k)];
            decoder.push(Deconv::new(&mut store, &format!("decoder.{k}"), width, out, &mut rng)?);
            width = out;
        }
        let head = Conv::new(&mut store, "head", width, 3, 3, &mut rng)?;
        let net = Self {
            config,
            ams,
            front,
            encoder,
            sgr,
            cgr,
            decoder,
            head,
        };
        Ok((net, store))
    }

    /// Runs the pipeline on `image: [3,H,W]`; `H` and `W` must be multiples of
    /// [`NetConfig::size_multiple`].
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<NetTrace> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(config(format!("network input must be [3,H,W], got {shape:?}")));
        }
        let k = self.config.size_multiple();
        if !shape[1].is_multiple_of(k) || !shape[2].is_multiple_of(k) {
            return Err(config(format!(
                "input {}x{} is not a multiple of {k} required by the encoder",
                shape[1], shape[2]
            )));
        }
        let shots = match &self.ams {
            Some(ams) => Some(ams.forward(g, p, image)?),
            None => None,
        };
        let mut gate = None;
        let mut x = match (&self.front, &shots) {
            (FrontEnd::Gated(gf), Some((stack, _))) => {
                let (fused, w) = gf.forward(g, p, image, *stack)?;
                gate = Some(w);
                fused
            }
            (FrontEnd::Merge(m), Some((stack, _))) => {
                let both = g.concat(&[image, *stack]).stage(|| "front end".into())?;
                m.forward(g, p, both)?
            }
            (FrontEnd::Plain(s), _) => s.forward(g, p, image)?,
            _ => unreachable!("front end matches the shot branch"),
        };
        let mut reasoning_input = x;
        let (mut sgr, mut cgr) = (None, None);
        for (i, stage) in self.encoder.iter().enumerate() {
            x = stage.forward(g, p, x).stage(|| format!("encoder stage {}", i + 1))?;
            if i == REASONING_STAGE {
                reasoning_input = x;
                sgr = self.sgr.as_ref().map(|m| m.forward(g, p, x)).transpose()?;
                cgr = self.cgr.as_ref().map(|m| m.forward(g, p, x)).transpose()?;
                x = branch_merge(g, sgr.map(|t| t.output), cgr.map(|t| t.output), x)
                    .stage(|| "reasoning merge".into())?;
            }
        }
        for (i, deconv) in self.decoder.iter().enumerate() {
            let y = deconv.forward(g, p, x).stage(|| format!("decoder layer {}", i + 1))?;
            x = g.relu(y)?;
        }
        let mut y = self.head.forward(g, p, x).stage(|| "output head".into())?;
        if self.config.input_residual {
            let base = g.logit(image, T::from_f64_lossy(RESIDUAL_EPS))?;
            y = g.add(y, base)?;
        }
        let output = g.sigmoid(y)?;
        Ok(NetTrace {
            shots,
            gate,
            sgr,
            cgr,
            reasoning_input,
            output,
        })
    }

    /// Dehazes an image of any size: edge-replicates up to the next
    /// compatible size, runs the network and crops back.
    pub fn dehaze<T: Real>(&self, store: &ParamStore<T>, image: &Image) -> Result<Image> {
        if image.channels() != 3 {
            return Err(config("dehazing needs a color image"));
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (h, w) = (image.height(), image.width());
        let k = self.config.size_multiple();
        let x = g.constant(image.to_tensor::<T>());
        let padded = g.pad_replicate(x, h.div_ceil(k) * k - h, w.div_ceil(k) * k - w)?;
        let trace = self.forward(&mut g, &p, padded)?;
        let out = g.crop(trace.output, h, w)?;
        Ok(Image::from_tensor(g.value(out))?)
    }

    /// Number of decoder deconvolutions.
    pub fn decoder_depth(&self) -> usize {
        self.decoder.len()
    }
}

/// Combines the two reasoning branches: the mean when both ran, the one that
/// ran otherwise, `fallback` when neither did.
pub fn branch_merge<T: Real>(g: &mut Graph<T>, xs: Option<Var>, xc: Option<Var>, fallback: Var) -> TensorResult<Var> {
    match (xs, xc) {
        (Some(s), Some(c)) => {
            let sum = g.add(s, c)?;
            g.scale(sum, T::from_f64_lossy(0.5))
        }
        (Some(v), None) | (None, Some(v)) => Ok(v),
        (None, None) => Ok(fallback),
    }
}

/// Convenience for tests and examples: runs [`DehazeNet::forward`] on a
/// tensor and returns the output value.
pub fn infer<T: Real>(net: &DehazeNet, store: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(image.clone());
    let trace = net.forward(&mut g, &p, x)?;
    Ok(g.value(trace.output).clone())
}
