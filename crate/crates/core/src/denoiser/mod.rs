//! Conditional noise-prediction network `ε_θ(l_t, t, I_obj)`.
//!
//! Architecture: a two-layer strided 3×3 convolution encoder over the
//! three conditioning planes, flattened into a dense feature vector; a
//! sinusoidal time embedding; and a SiLU MLP trunk over
//! `[l_t ‖ time ‖ condition]` that outputs the 5-dim noise estimate.
//! All parameters live in one flat `f64` buffer in declaration order.

mod checkpoint;
mod layers;
pub mod loss;

use rand::Rng;

use crate::diffusion::{normal_vec, standard_normal, NoisePredictor};
use crate::error::{Error, Result};
use crate::geometry::{blend_condition, guard_layout, splat, LayoutMask, LayoutVec, TemplateSpec, LAYOUT_DIM};
use crate::grid::Grid;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
use layers::{conv_backward, conv_forward, dense_backward, dense_forward, ConvShape};
pub use layers::{silu, silu_grad};
pub use loss::{loss_mask, loss_para, total_loss, LossBreakdown, LossConfig, TrainingItem};

const N_PLANES: usize = 3;

/// What the condition encoder sees besides the object image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Object, splat of the current noisy layout, and their blend.
    MaskStack,
    /// Object only; the mask planes are zero and the layout enters as a vector.
    VectorOnly,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::MaskStack => "mask-stack",
            Conditioning::VectorOnly => "vector",
        }
    }
}

impl std::str::FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask-stack" => Ok(Conditioning::MaskStack),
            "vector" => Ok(Conditioning::VectorOnly),
            other => Err(Error::Config(format!("unknown conditioning {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    /// Side of the square conditioning grid; divisible by 4.
    pub grid: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub conditioning: Conditioning,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            conv1_channels: 8,
            conv2_channels: 8,
            cond_dim: 32,
            time_dim: 16,
            hidden: 128,
            depth: 3,
            conditioning: Conditioning::MaskStack,
        }
    }
}

impl DenoiserConfig {
    /// A few-hundred-parameter network for gradient checks.
    pub fn tiny() -> Self {
        Self {
            grid: 8,
            conv1_channels: 2,
            conv2_channels: 2,
            cond_dim: 4,
            time_dim: 4,
            hidden: 6,
            depth: 2,
            conditioning: Conditioning::MaskStack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 || self.grid % 4 != 0 {
            return Err(Error::Config(format!(
                "grid must be a multiple of 4 and >= 8, got {}",
                self.grid
            )));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::OddEmbeddingDim(self.time_dim));
        }
        let counts = [
            self.conv1_channels,
            self.conv2_channels,
            self.cond_dim,
            self.time_dim,
            self.hidden,
            self.depth,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    fn conv1(&self) -> ConvShape {
        ConvShape {
            c_in: N_PLANES,
            c_out: self.conv1_channels,
            size_in: self.grid,
        }
    }

    fn conv2(&self) -> ConvShape {
        ConvShape {
            c_in: self.conv1_channels,
            c_out: self.conv2_channels,
            size_in: self.grid / 2,
        }
    }

    fn flat_len(&self) -> usize {
        self.conv2().out_len()
    }

    fn trunk_in(&self) -> usize {
        LAYOUT_DIM + self.time_dim + self.cond_dim
    }

    /// `(name, shape)` of every tensor in declaration order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = vec![
            ("conv1.weight".into(), vec![self.conv1_channels, N_PLANES, 3, 3]),
            ("conv1.bias".into(), vec![self.conv1_channels]),
            (
                "conv2.weight".into(),
                vec![self.conv2_channels, self.conv1_channels, 3, 3],
            ),
            ("conv2.bias".into(), vec![self.conv2_channels]),
            ("cond.weight".into(), vec![self.cond_dim, self.flat_len()]),
            ("cond.bias".into(), vec![self.cond_dim]),
        ];
        let mut fan_in = self.trunk_in();
        for k in 0..self.depth {
            v.push((format!("trunk.{k}.weight"), vec![self.hidden, fan_in]));
            v.push((format!("trunk.{k}.bias"), vec![self.hidden]));
            fan_in = self.hidden;
        }
        v.push(("out.weight".into(), vec![LAYOUT_DIM, self.hidden]));
        v.push(("out.bias".into(), vec![LAYOUT_DIM]));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// `key value` pairs echoed into checkpoints and run records.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            ("grid", self.grid.to_string()),
            ("conv1_channels", self.conv1_channels.to_string()),
            ("conv2_channels", self.conv2_channels.to_string()),
            ("cond_dim", self.cond_dim.to_string()),
            ("time_dim", self.time_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("depth", self.depth.to_string()),
            ("conditioning", self.conditioning.name().to_string()),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    conv1: Span,
    conv2: Span,
    cond: Span,
    trunk: Vec<Span>,
    out: Span,
}

impl Offsets {
    fn new(cfg: &DenoiserConfig) -> Self {
        let mut at = 0;
        let mut take = |w_len: usize, b_len: usize| {
            let span = Span { w: at, b: at + w_len };
            at += w_len + b_len;
            span
        };
        let conv1 = take(cfg.conv1().weight_len(), cfg.conv1_channels);
        let conv2 = take(cfg.conv2().weight_len(), cfg.conv2_channels);
        let cond = take(cfg.cond_dim * cfg.flat_len(), cfg.cond_dim);
        let mut fan_in = cfg.trunk_in();
        let mut trunk = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            trunk.push(take(cfg.hidden * fan_in, cfg.hidden));
            fan_in = cfg.hidden;
        }
        let out = take(LAYOUT_DIM * cfg.hidden, LAYOUT_DIM);
        Self {
            conv1,
            conv2,
            cond,
            trunk,
            out,
        }
    }
}

/// Network weights: config plus one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    values: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub values: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(params: &DenoiserParams) -> Self {
        Self {
            values: vec![0.0; params.values.len()],
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Fixed-length feature vector summarizing the conditioning planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEncoding {
    pub features: Vec<f64>,
}

/// Activations kept for the encoder backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    zc: Vec<f64>,
}

/// Activations kept for the trunk backward pass.
#[derive(Debug, Clone)]
pub struct TrunkTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    last: Vec<f64>,
}

/// Interleaved sinusoidal embedding,
/// `e[2k] = sin(t·ω_k)`, `e[2k+1] = cos(t·ω_k)`, `ω_k = 10000^(−2k/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::OddEmbeddingDim(dim));
    }
    let mut e = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let omega = 10000f64.powf(-((2 * k) as f64) / dim as f64);
        let phase = t as f64 * omega;
        e.push(phase.sin());
        e.push(phase.cos());
    }
    Ok(e)
}

impl DenoiserParams {
    /// Gaussian init with std `1/√fan_in`, zero biases.
    pub fn init<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut values = Vec::with_capacity(config.param_count());
        for (name, shape) in config.tensor_shapes() {
            let len: usize = shape.iter().product();
            if name.ends_with(".bias") {
                values.extend(std::iter::repeat(0.0).take(len));
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let std = 1.0 / (fan_in as f64).sqrt();
                values.extend((0..len).map(|_| std * standard_normal(rng)));
            }
        }
        Ok(Self { config, values })
    }

    pub fn from_values(config: DenoiserConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for an architecture with {}",
                values.len(),
                config.param_count()
            )));
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn offsets(&self) -> Offsets {
        Offsets::new(&self.config)
    }

    /// Builds the conditioning planes for `object` and an optional mask.
    pub fn condition_input(&self, object: &Grid, mask_context: Option<&LayoutMask>) -> Result<Vec<f64>> {
        let g = self.config.grid;
        if object.width() != g || object.height() != g {
            return Err(Error::DimensionMismatch {
                want_w: g,
                want_h: g,
                found_w: object.width(),
                found_h: object.height(),
            });
        }
        let zeros;
        let mask = match mask_context {
            Some(m) => m,
            None => {
                zeros = Grid::zeros(g, g);
                &zeros
            }
        };
        let stack = blend_condition(mask, object)?;
        let mut input = Vec::with_capacity(N_PLANES * g * g);
        for plane in stack.planes() {
            input.extend_from_slice(plane.values());
        }
        Ok(input)
    }

    pub fn encode_condition(&self, object: &Grid, mask_context: Option<&LayoutMask>) -> Result<ConditionEncoding> {
        Ok(self.encode_traced(object, mask_context)?.0)
    }

    pub fn encode_traced(
        &self,
        object: &Grid,
        mask_context: Option<&LayoutMask>,
    ) -> Result<(ConditionEncoding, EncoderTrace)> {
        let input = self.condition_input(object, mask_context)?;
        let cfg = &self.config;
        let off = self.offsets();
        let p = &self.values;

        let s1 = cfg.conv1();
        let mut z1 = vec![0.0; s1.out_len()];
        conv_forward(
            s1,
            &input,
            &p[off.conv1.w..off.conv1.b],
            &p[off.conv1.b..off.conv1.b + s1.c_out],
            &mut z1,
        );
        let a1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();

        let s2 = cfg.conv2();
        let mut z2 = vec![0.0; s2.out_len()];
        conv_forward(
            s2,
            &a1,
            &p[off.conv2.w..off.conv2.b],
            &p[off.conv2.b..off.conv2.b + s2.c_out],
            &mut z2,
        );
        let a2: Vec<f64> = z2.iter().map(|&z| silu(z)).collect();

        let mut zc = vec![0.0; cfg.cond_dim];
        dense_forward(
            &a2,
            &p[off.cond.w..off.cond.b],
            &p[off.cond.b..off.cond.b + cfg.cond_dim],
            &mut zc,
        );
        let features = zc.iter().map(|&z| silu(z)).collect();
        Ok((
            ConditionEncoding { features },
            EncoderTrace {
                input,
                z1,
                a1,
                z2,
                a2,
                zc,
            },
        ))
    }

    fn check_encoding(&self, cond: &ConditionEncoding) -> Result<()> {
        if cond.features.len() != self.config.cond_dim {
            return Err(Error::ShapeMismatch(format!(
                "condition encoding has {} features, expected {}",
                cond.features.len(),
                self.config.cond_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, l_t: &LayoutVec, t: usize, cond: &ConditionEncoding) -> Result<LayoutVec> {
        Ok(self.forward_traced(l_t, t, cond)?.0)
    }

    pub fn forward_traced(
        &self,
        l_t: &LayoutVec,
        t: usize,
        cond: &ConditionEncoding,
    ) -> Result<(LayoutVec, TrunkTrace)> {
        self.check_encoding(cond)?;
        let cfg = &self.config;
        let off = self.offsets();
        let p = &self.values;

        let mut x = Vec::with_capacity(cfg.trunk_in());
        x.extend_from_slice(l_t);
        x.extend(time_embedding(t, cfg.time_dim)?);
        x.extend_from_slice(&cond.features);

        let mut inputs = Vec::with_capacity(cfg.depth);
        let mut pre = Vec::with_capacity(cfg.depth);
        for span in &off.trunk {
            let mut z = vec![0.0; cfg.hidden];
            dense_forward(&x, &p[span.w..span.b], &p[span.b..span.b + cfg.hidden], &mut z);
            let a = z.iter().map(|&v| silu(v)).collect();
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        let mut eps = [0.0; LAYOUT_DIM];
        dense_forward(
            &x,
            &p[off.out.w..off.out.b],
            &p[off.out.b..off.out.b + LAYOUT_DIM],
            &mut eps,
        );
        Ok((eps, TrunkTrace { inputs, pre, last: x }))
    }

    /// Backpropagates `d_eps` through trunk and encoder into `grads`.
    pub fn backward(&self, enc: &EncoderTrace, trunk: &TrunkTrace, d_eps: &LayoutVec, grads: &mut GradientBundle) {
        let cfg = &self.config;
        let off = self.offsets();
        let p = &self.values;
        let g = &mut grads.values;

        let mut dx = vec![0.0; cfg.hidden];
        {
            let (dw, db) = split_grad(g, off.out, LAYOUT_DIM);
            dense_backward(&trunk.last, &p[off.out.w..off.out.b], d_eps, dw, db, Some(&mut dx));
        }
        for k in (0..cfg.depth).rev() {
            let span = off.trunk[k];
            let dz: Vec<f64> = dx.iter().zip(&trunk.pre[k]).map(|(d, &z)| d * silu_grad(z)).collect();
            let x_in = &trunk.inputs[k];
            let mut dx_in = vec![0.0; x_in.len()];
            let (dw, db) = split_grad(g, span, cfg.hidden);
            dense_backward(x_in, &p[span.w..span.b], &dz, dw, db, Some(&mut dx_in));
            dx = dx_in;
        }

        // dx now holds the gradient of the trunk input [l_t ‖ time ‖ cond]
        let cond_start = LAYOUT_DIM + cfg.time_dim;
        let dzc: Vec<f64> = dx[cond_start..]
            .iter()
            .zip(&enc.zc)
            .map(|(d, &z)| d * silu_grad(z))
            .collect();
        let mut da2 = vec![0.0; enc.a2.len()];
        {
            let (dw, db) = split_grad(g, off.cond, cfg.cond_dim);
            dense_backward(&enc.a2, &p[off.cond.w..off.cond.b], &dzc, dw, db, Some(&mut da2));
        }
        let dz2: Vec<f64> = da2.iter().zip(&enc.z2).map(|(d, &z)| d * silu_grad(z)).collect();
        let mut da1 = vec![0.0; enc.a1.len()];
        {
            let s2 = cfg.conv2();
            let (dw, db) = split_grad(g, off.conv2, s2.c_out);
            conv_backward(s2, &enc.a1, &p[off.conv2.w..off.conv2.b], &dz2, dw, db, Some(&mut da1));
        }
        let dz1: Vec<f64> = da1.iter().zip(&enc.z1).map(|(d, &z)| d * silu_grad(z)).collect();
        let s1 = cfg.conv1();
        let (dw, db) = split_grad(g, off.conv1, s1.c_out);
        conv_backward(s1, &enc.input, &p[off.conv1.w..off.conv1.b], &dz1, dw, db, None);
    }

    /// Binds an object image for sampling.
    pub fn conditioned<'a>(&'a self, object: &'a Grid, template: &'a TemplateSpec) -> ConditionedDenoiser<'a> {
        ConditionedDenoiser {
            params: self,
            object,
            template,
        }
    }
}

fn split_grad(g: &mut [f64], span: Span, b_len: usize) -> (&mut [f64], &mut [f64]) {
    let (w, rest) = g[span.w..span.b + b_len].split_at_mut(span.b - span.w);
    (w, rest)
}

/// Mask context fed to the encoder for a noisy layout.
pub fn mask_context(config: &DenoiserConfig, l_t: &LayoutVec, template: &TemplateSpec) -> Result<Option<LayoutMask>> {
    match config.conditioning {
        Conditioning::MaskStack => {
            let l = guard_layout(l_t);
            Ok(Some(splat(&l, config.grid, config.grid, template)?))
        }
        Conditioning::VectorOnly => Ok(None),
    }
}

/// Network plus a bound object image, usable as a [`NoisePredictor`].
#[derive(Debug, Clone, Copy)]
pub struct ConditionedDenoiser<'a> {
    pub params: &'a DenoiserParams,
    pub object: &'a Grid,
    pub template: &'a TemplateSpec,
}

impl NoisePredictor for ConditionedDenoiser<'_> {
    fn predict_noise(&self, x_t: &LayoutVec, t: usize) -> Result<LayoutVec> {
        let ctx = mask_context(self.params.config(), x_t, self.template)?;
        let cond = self.params.encode_condition(self.object, ctx.as_ref())?;
        self.params.forward(x_t, t, &cond)
    }
}

/// Random inputs for smoke tests and examples.
pub fn random_layout_vec<R: Rng + ?Sized>(rng: &mut R) -> LayoutVec {
    normal_vec(rng)
}
