//! The Invo-ResNet classifier and its all-convolution counterpart.
//!
//! Signals enter as `B x 2 x 1 x N` images (I and Q as channels, time along
//! the width). The network is
//!
//! ```text
//! stem: conv 1xk (2 -> stem) + BN + ReLU
//! bottleneck per pyramid stage
//! global average pooling
//! fully connected -> class logits
//! ```
//!
//! A bottleneck `C_in -> C_out` with `C_mid = ceil(mid_ratio * C_out)` runs
//! `1x1 conv + BN + ReLU`, optional `1x2` max pooling, the core operator
//! (involution `1xK`, or a `1xk` convolution) `+ BN + ReLU`, then
//! `1x1 conv + BN`. The shortcut is the identity when shapes allow, otherwise
//! max pooling (when downsampling) followed by `1x1 conv + BN`. The two paths
//! are added and passed through ReLU.

mod checkpoint;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load, save, Checkpoint, CheckpointMeta, TensorEntry, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::nn::{
    self, relu_backward, BatchNorm, BatchNormTape, Conv2d, ConvTape, GapTape, GlobalAvgPool,
    Involution, InvolutionTape, Layer, Linear, LinearTape, MaxPool, MaxPoolTape, Mode, Param,
};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Involution,
    Convolution,
}

impl Operator {
    pub fn name(self) -> &'static str {
        match self {
            Operator::Involution => "involution",
            Operator::Convolution => "convolution",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub channels: usize,
    pub downsample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub operator: Operator,
    pub in_channels: usize,
    pub stem_channels: usize,
    /// Stem kernel width along time.
    pub stem_kernel: usize,
    pub pyramid: Vec<Stage>,
    /// Involution kernel width along time.
    pub kernel: usize,
    pub groups: usize,
    pub reduction: usize,
    /// Core kernel width of the convolutional variant.
    pub conv_kernel: usize,
    pub num_classes: usize,
    pub mid_ratio: f64,
    /// Max-pool window (= stride) along time in downsampling bottlenecks.
    pub pool: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            operator: Operator::Involution,
            in_channels: 2,
            stem_channels: 32,
            stem_kernel: 3,
            pyramid: vec![
                Stage {
                    channels: 64,
                    downsample: true,
                },
                Stage {
                    channels: 128,
                    downsample: true,
                },
            ],
            kernel: 7,
            groups: 4,
            reduction: 4,
            conv_kernel: 3,
            num_classes: 6,
            mid_ratio: 0.5,
            pool: 2,
        }
    }
}

/// Per-bottleneck channel plan derived from a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPlan {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub downsample: bool,
}

impl ModelConfig {
    pub fn with_operator(&self, operator: Operator) -> Self {
        ModelConfig {
            operator,
            ..self.clone()
        }
    }

    pub fn blocks(&self) -> Vec<BlockPlan> {
        let mut c_in = self.stem_channels;
        self.pyramid
            .iter()
            .map(|s| {
                let plan = BlockPlan {
                    in_channels: c_in,
                    mid_channels: (self.mid_ratio * s.channels as f64).ceil() as usize,
                    out_channels: s.channels,
                    downsample: s.downsample,
                };
                c_in = s.channels;
                plan
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.in_channels == 0 || self.stem_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.pyramid.is_empty() {
            return bad("pyramid must have at least one stage".into());
        }
        if self
            .pyramid
            .windows(2)
            .any(|w| w[1].channels <= w[0].channels)
        {
            return bad("pyramid channel counts must be strictly increasing".into());
        }
        for (name, k) in [
            ("stem_kernel", self.stem_kernel),
            ("kernel", self.kernel),
            ("conv_kernel", self.conv_kernel),
        ] {
            if k == 0 || k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if !(self.mid_ratio > 0.0 && self.mid_ratio <= 1.0) {
            return bad(format!(
                "mid_ratio must be in (0, 1], got {}",
                self.mid_ratio
            ));
        }
        if self.pool < 2 && self.pyramid.iter().any(|s| s.downsample) {
            return bad("pool window must be at least 2".into());
        }
        for plan in self.blocks() {
            let c = plan.mid_channels;
            if self.operator == Operator::Involution {
                if self.groups == 0 || c % self.groups != 0 {
                    return bad(format!(
                        "mid channels {c} not divisible by groups {}",
                        self.groups
                    ));
                }
                if self.reduction == 0 || c % self.reduction != 0 {
                    return bad(format!(
                        "mid channels {c} not divisible by reduction {}",
                        self.reduction
                    ));
                }
            }
        }
        Ok(())
    }

    /// Shortest input length the network accepts.
    pub fn min_length(&self) -> usize {
        let shrink: usize = self
            .pyramid
            .iter()
            .filter(|s| s.downsample)
            .map(|_| self.pool)
            .product();
        4 * shrink
    }

    /// Closed-form count of learnable scalars (BN affine included, running
    /// statistics excluded).
    pub fn expected_param_count(&self) -> usize {
        let conv = |ci: usize, co: usize, k: usize| co * ci * k + co;
        let bn = |c: usize| 2 * c;
        let mut n =
            conv(self.in_channels, self.stem_channels, self.stem_kernel) + bn(self.stem_channels);
        for p in self.blocks() {
            n += conv(p.in_channels, p.mid_channels, 1) + bn(p.mid_channels);
            n += match self.operator {
                Operator::Involution => {
                    let cm = p.mid_channels;
                    Involution::<f64>::linear_param_count(
                        cm,
                        self.reduction,
                        self.kernel,
                        self.groups,
                    ) + bn(cm / self.reduction)
                }
                Operator::Convolution => conv(p.mid_channels, p.mid_channels, self.conv_kernel),
            };
            n += bn(p.mid_channels);
            n += conv(p.mid_channels, p.out_channels, 1) + bn(p.out_channels);
            if p.in_channels != p.out_channels || p.downsample {
                n += conv(p.in_channels, p.out_channels, 1) + bn(p.out_channels);
            }
        }
        let last = self
            .pyramid
            .last()
            .map_or(self.stem_channels, |s| s.channels);
        n + last * self.num_classes + self.num_classes
    }
}

#[derive(Debug, Clone)]
pub enum Core<T> {
    Involution(Involution<T>),
    Convolution(Conv2d<T>),
}

#[derive(Debug)]
pub enum CoreTape<T> {
    Involution(InvolutionTape<T>),
    Convolution(ConvTape<T>),
}

impl<T: Real> Layer<T> for Core<T> {
    type Tape = CoreTape<T>;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, CoreTape<T>)> {
        match self {
            Core::Involution(l) => l
                .forward(x, mode)
                .map(|(y, t)| (y, CoreTape::Involution(t))),
            Core::Convolution(l) => l
                .forward(x, mode)
                .map(|(y, t)| (y, CoreTape::Convolution(t))),
        }
    }

    fn backward(&mut self, tape: CoreTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, tape) {
            (Core::Involution(l), CoreTape::Involution(t)) => l.backward(t, grad_out),
            (Core::Convolution(l), CoreTape::Convolution(t)) => l.backward(t, grad_out),
            _ => Err(Error::StaleTape(
                "core: tape from a different operator".into(),
            )),
        }
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match self {
            Core::Involution(l) => l.visit_params(prefix, f),
            Core::Convolution(l) => l.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Core::Involution(l) => l.visit_params_mut(prefix, f),
            Core::Convolution(l) => l.visit_params_mut(prefix, f),
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Core::Involution(l) = self {
            l.visit_buffers(prefix, f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Core::Involution(l) = self {
            l.visit_buffers_mut(prefix, f);
        }
    }
}

/// 1x1 convolution followed by batch norm.
#[derive(Debug, Clone)]
pub struct Projection<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Real> Projection<T> {
    fn new(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Projection {
            conv: Conv2d::new(c_in, c_out, (1, 1), (1, 1), (0, 0), true, rng)?,
            bn: BatchNorm::new(c_out)?,
        })
    }
}

#[derive(Debug)]
pub struct ProjectionTape<T>(ConvTape<T>, BatchNormTape<T>);

impl<T: Real> Layer<T> for Projection<T> {
    type Tape = ProjectionTape<T>;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ProjectionTape<T>)> {
        let (z, t0) = self.conv.forward(x, mode)?;
        let (y, t1) = self.bn.forward(&z, mode)?;
        Ok((y, ProjectionTape(t0, t1)))
    }

    fn backward(&mut self, tape: ProjectionTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.bn.backward(tape.1, grad_out)?;
        self.conv.backward(tape.0, &g)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit_params(&nn::join(prefix, "conv"), f);
        self.bn.visit_params(&nn::join(prefix, "bn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_params_mut(&nn::join(prefix, "conv"), f);
        self.bn.visit_params_mut(&nn::join(prefix, "bn"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.bn.visit_buffers(&nn::join(prefix, "bn"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.bn.visit_buffers_mut(&nn::join(prefix, "bn"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    pub plan: BlockPlan,
    pub project_in: Projection<T>,
    pub pool: Option<MaxPool>,
    pub core: Core<T>,
    pub core_bn: BatchNorm<T>,
    pub project_out: Projection<T>,
    pub shortcut: Option<Projection<T>>,
}

#[derive(Debug)]
pub struct BottleneckTape<T> {
    project_in: ProjectionTape<T>,
    act_in: Tensor<T>,
    pool: Option<MaxPoolTape>,
    core: CoreTape<T>,
    core_bn: BatchNormTape<T>,
    act_core: Tensor<T>,
    project_out: ProjectionTape<T>,
    shortcut_pool: Option<MaxPoolTape>,
    shortcut: Option<ProjectionTape<T>>,
    out: Tensor<T>,
}

impl<T: Real> Bottleneck<T> {
    pub fn new(plan: BlockPlan, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let cm = plan.mid_channels;
        let core = match cfg.operator {
            Operator::Involution => Core::Involution(Involution::new(
                cm,
                (1, cfg.kernel),
                cfg.groups,
                cfg.reduction,
                (1, 1),
                rng,
            )?),
            Operator::Convolution => Core::Convolution(Conv2d::new(
                cm,
                cm,
                (1, cfg.conv_kernel),
                (1, 1),
                (0, cfg.conv_kernel / 2),
                true,
                rng,
            )?),
        };
        let pool = plan
            .downsample
            .then(|| MaxPool::new((1, cfg.pool), (1, cfg.pool)));
        let needs_projection = plan.in_channels != plan.out_channels || plan.downsample;
        Ok(Bottleneck {
            plan,
            project_in: Projection::new(plan.in_channels, cm, rng)?,
            pool,
            core,
            core_bn: BatchNorm::new(cm)?,
            project_out: Projection::new(cm, plan.out_channels, rng)?,
            shortcut: if needs_projection {
                Some(Projection::new(plan.in_channels, plan.out_channels, rng)?)
            } else {
                None
            },
        })
    }
}

impl<T: Real> Layer<T> for Bottleneck<T> {
    type Tape = BottleneckTape<T>;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BottleneckTape<T>)> {
        let (h, project_in) = self.project_in.forward(x, mode)?;
        let act_in = h.relu();
        let (pooled, pool) = match &mut self.pool {
            Some(p) => {
                let (y, t) = p.forward(&act_in, mode)?;
                (Some(y), Some(t))
            }
            None => (None, None),
        };
        let (h, core) = self
            .core
            .forward(pooled.as_ref().unwrap_or(&act_in), mode)?;
        let (h, core_bn) = self.core_bn.forward(&h, mode)?;
        let act_core = h.relu();
        let (main, project_out) = self.project_out.forward(&act_core, mode)?;

        let (short, shortcut_pool, shortcut) = match &mut self.shortcut {
            Some(proj) => {
                let (src, sp) = match &mut self.pool {
                    Some(p) => {
                        let (y, t) = p.forward(x, mode)?;
                        (Some(y), Some(t))
                    }
                    None => (None, None),
                };
                let (y, t) = proj.forward(src.as_ref().unwrap_or(x), mode)?;
                (y, sp, Some(t))
            }
            None => (x.clone(), None, None),
        };
        let mut out = main.add(&short)?;
        out = out.relu();
        let tape = BottleneckTape {
            project_in,
            act_in,
            pool,
            core,
            core_bn,
            act_core,
            project_out,
            shortcut_pool,
            shortcut,
            out: out.clone(),
        };
        Ok((out, tape))
    }

    fn backward(&mut self, tape: BottleneckTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = relu_backward(&tape.out, grad_out)?;
        // main path
        let gm = self.project_out.backward(tape.project_out, &g)?;
        let gm = relu_backward(&tape.act_core, &gm)?;
        let gm = self.core_bn.backward(tape.core_bn, &gm)?;
        let gm = self.core.backward(tape.core, &gm)?;
        let gm = match (&mut self.pool, tape.pool) {
            (Some(p), Some(t)) => p.backward(t, &gm)?,
            (None, None) => gm,
            _ => return Err(Error::StaleTape("bottleneck: pooling mismatch".into())),
        };
        let gm = relu_backward(&tape.act_in, &gm)?;
        let mut dx = self.project_in.backward(tape.project_in, &gm)?;
        // shortcut
        let gs = match (&mut self.shortcut, tape.shortcut) {
            (Some(proj), Some(t)) => {
                let gs = proj.backward(t, &g)?;
                match (&mut self.pool, tape.shortcut_pool) {
                    (Some(p), Some(t)) => p.backward(t, &gs)?,
                    (None, None) => gs,
                    _ => return Err(Error::StaleTape("bottleneck: pooling mismatch".into())),
                }
            }
            (None, None) => g,
            _ => return Err(Error::StaleTape("bottleneck: shortcut mismatch".into())),
        };
        dx.add_assign(&gs)?;
        Ok(dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.project_in
            .visit_params(&nn::join(prefix, "project_in"), f);
        self.core.visit_params(&nn::join(prefix, "core"), f);
        self.core_bn.visit_params(&nn::join(prefix, "core_bn"), f);
        self.project_out
            .visit_params(&nn::join(prefix, "project_out"), f);
        if let Some(s) = &self.shortcut {
            s.visit_params(&nn::join(prefix, "shortcut"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.project_in
            .visit_params_mut(&nn::join(prefix, "project_in"), f);
        self.core.visit_params_mut(&nn::join(prefix, "core"), f);
        self.core_bn
            .visit_params_mut(&nn::join(prefix, "core_bn"), f);
        self.project_out
            .visit_params_mut(&nn::join(prefix, "project_out"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_params_mut(&nn::join(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.project_in
            .visit_buffers(&nn::join(prefix, "project_in"), f);
        self.core.visit_buffers(&nn::join(prefix, "core"), f);
        self.core_bn.visit_buffers(&nn::join(prefix, "core_bn"), f);
        self.project_out
            .visit_buffers(&nn::join(prefix, "project_out"), f);
        if let Some(s) = &self.shortcut {
            s.visit_buffers(&nn::join(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.project_in
            .visit_buffers_mut(&nn::join(prefix, "project_in"), f);
        self.core.visit_buffers_mut(&nn::join(prefix, "core"), f);
        self.core_bn
            .visit_buffers_mut(&nn::join(prefix, "core_bn"), f);
        self.project_out
            .visit_buffers_mut(&nn::join(prefix, "project_out"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_buffers_mut(&nn::join(prefix, "shortcut"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    pub stem: Projection<T>,
    pub blocks: Vec<Bottleneck<T>>,
    pub fc: Linear<T>,
}

#[derive(Debug)]
pub struct ModelTape<T> {
    stem: ProjectionTape<T>,
    stem_act: Tensor<T>,
    blocks: Vec<BottleneckTape<T>>,
    gap: GapTape,
    fc: LinearTape<T>,
}

impl<T: Real> Model<T> {
    pub fn build(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let stem = Projection {
            conv: Conv2d::new(
                config.in_channels,
                config.stem_channels,
                (1, config.stem_kernel),
                (1, 1),
                (0, config.stem_kernel / 2),
                true,
                rng,
            )?,
            bn: BatchNorm::new(config.stem_channels)?,
        };
        let blocks = config
            .blocks()
            .into_iter()
            .map(|plan| Bottleneck::new(plan, config, rng))
            .collect::<Result<Vec<_>>>()?;
        let last = blocks
            .last()
            .map_or(config.stem_channels, |b| b.plan.out_channels);
        let fc = Linear::new(last, config.num_classes, rng)?;
        Ok(Model {
            config: config.clone(),
            stem,
            blocks,
            fc,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.param_count()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, n) = nn::dims4(x, "model")?;
        if c != self.config.in_channels || h != 1 {
            return Err(Error::geometry(
                "model",
                format!(
                    "expected B x {} x 1 x N input, got {:?}",
                    self.config.in_channels,
                    x.dims()
                ),
            ));
        }
        if n < self.config.min_length() {
            return Err(Error::geometry(
                "model",
                format!(
                    "input length {n} shorter than minimum {}",
                    self.config.min_length()
                ),
            ));
        }
        Ok(())
    }

    /// Inference-mode logits.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x, Mode::Eval).map(|(y, _)| y)
    }

    /// Names and shapes of every stored tensor, parameters first, in
    /// checkpoint order.
    pub fn state_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |n, p| {
            out.push((n.to_string(), p.value.dims().to_vec()))
        });
        self.visit_buffers("", &mut |n, t| out.push((n.to_string(), t.dims().to_vec())));
        out
    }
}

impl<T: Real> Layer<T> for Model<T> {
    type Tape = ModelTape<T>;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ModelTape<T>)> {
        self.check_input(x)?;
        let (h, stem) = self.stem.forward(x, mode)?;
        let mut h = h.relu();
        let stem_act = h.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (y, t) = block.forward(&h, mode)?;
            blocks.push(t);
            h = y;
        }
        let (pooled, gap) = GlobalAvgPool.forward(&h, mode)?;
        let (logits, fc) = self.fc.forward(&pooled, mode)?;
        let tape = ModelTape {
            stem,
            stem_act,
            blocks,
            gap,
            fc,
        };
        Ok((logits, tape))
    }

    fn backward(&mut self, tape: ModelTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if tape.blocks.len() != self.blocks.len() {
            return Err(Error::StaleTape("model: block count mismatch".into()));
        }
        let g = self.fc.backward(tape.fc, grad_out)?;
        let mut g = GlobalAvgPool.backward(tape.gap, &g)?;
        for (block, t) in self.blocks.iter_mut().zip(tape.blocks).rev() {
            g = block.backward(t, &g)?;
        }
        let g = relu_backward(&tape.stem_act, &g)?;
        self.stem.backward(tape.stem, &g)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.stem.visit_params(&nn::join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&nn::join(prefix, &format!("block{i}")), f);
        }
        self.fc.visit_params(&nn::join(prefix, "fc"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit_params_mut(&nn::join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&nn::join(prefix, &format!("block{i}")), f);
        }
        self.fc.visit_params_mut(&nn::join(prefix, "fc"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stem.visit_buffers(&nn::join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_buffers(&nn::join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem.visit_buffers_mut(&nn::join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers_mut(&nn::join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Parameter totals of the involution model and its convolutional twin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamComparison {
    pub involution: usize,
    pub convolution: usize,
    /// `1 - involution / convolution`
    pub reduction_fraction: f64,
}

/// Build both variants of `config` and count their learnable scalars.
pub fn compare(config: &ModelConfig) -> Result<ParamComparison> {
    let mut rng = Rng::new(0);
    let invo = Model::<f32>::build(&config.with_operator(Operator::Involution), &mut rng)?
        .parameter_count();
    let conv = Model::<f32>::build(&config.with_operator(Operator::Convolution), &mut rng)?
        .parameter_count();
    Ok(ParamComparison {
        involution: invo,
        convolution: conv,
        reduction_fraction: 1.0 - invo as f64 / conv as f64,
    })
}
