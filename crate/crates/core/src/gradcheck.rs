//! Central finite-difference checks of every backward pass, in f64.
//!
//! A layer is reduced to the scalar `L = sum(r * y)` with a fixed random `r`,
//! so the analytic input and parameter gradients come from one backward call
//! with `grad_out = r`. Each coordinate is then nudged by `±h` and
//! `(L(+h) - L(-h)) / 2h` compared with the analytic value using
//! `|a - n| / max(1, |n|)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockPlan, Bottleneck, Model, ModelConfig, Operator};
use crate::nn::{
    involution_aggregate, involution_aggregate_backward, softmax_xent, AvgPool, BatchNorm, Conv2d,
    GlobalAvgPool, Involution, KernelTape, Layer, Linear, MaxPool, Mode, Param, Window,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const MAX_TOLERANCE: f64 = 1e-4;
pub const MEAN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub name: String,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel <= MAX_TOLERANCE && self.mean_rel <= MEAN_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Options {
    /// Check at most this many coordinates per tensor, evenly spaced.
    /// `None` checks all of them.
    pub max_per_tensor: Option<usize>,
}

fn coords(n: usize, opts: &Options) -> Vec<usize> {
    match opts.max_per_tensor {
        Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / n.abs().max(1.0)
}

#[derive(Default)]
struct Tally {
    max: f64,
    sum: f64,
    count: usize,
}

impl Tally {
    fn add(&mut self, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        // NaN must fail the check rather than vanish in max()
        self.max = if e.is_nan() {
            f64::INFINITY
        } else {
            self.max.max(e)
        };
        self.sum += e;
        self.count += 1;
    }

    fn report(self, name: &str) -> GradReport {
        GradReport {
            name: name.to_string(),
            max_rel: self.max,
            mean_rel: if self.count == 0 {
                0.0
            } else {
                self.sum / self.count as f64
            },
            checked: self.count,
        }
    }
}

fn projected<L: Layer<f64>>(layer: &mut L, x: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    let (y, _) = layer.forward(x, Mode::Train)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

fn set_param<L: Layer<f64>>(layer: &mut L, which: usize, idx: usize, value: f64) {
    let mut k = 0;
    layer.visit_params_mut("", &mut |_, p| {
        if k == which {
            p.value.data_mut()[idx] = value;
        }
        k += 1;
    });
}

/// Check input and parameter gradients of `layer` at `x`.
pub fn check_layer<L: Layer<f64>>(
    name: &str,
    layer: &mut L,
    x: &Tensor<f64>,
    rng: &mut Rng,
    opts: &Options,
) -> Result<GradReport> {
    layer.zero_grad();
    let (y, tape) = layer.forward(x, Mode::Train)?;
    let r: Tensor<f64> = rng.normal(y.dims(), 0.0, 1.0)?;
    let dx = layer.backward(tape, &r)?;
    let mut params: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    layer.visit_params("", &mut |_, p| {
        params.push((p.value.data().to_vec(), p.grad.data().to_vec()))
    });

    let mut tally = Tally::default();
    let mut xp = x.clone();
    for i in coords(x.numel(), opts) {
        let v = x.data()[i];
        xp.data_mut()[i] = v + STEP;
        let up = projected(layer, &xp, &r)?;
        xp.data_mut()[i] = v - STEP;
        let down = projected(layer, &xp, &r)?;
        xp.data_mut()[i] = v;
        tally.add(dx.data()[i], (up - down) / (2.0 * STEP));
    }
    for (which, (values, grads)) in params.iter().enumerate() {
        for i in coords(values.len(), opts) {
            let v = values[i];
            set_param(layer, which, i, v + STEP);
            let up = projected(layer, x, &r)?;
            set_param(layer, which, i, v - STEP);
            let down = projected(layer, x, &r)?;
            set_param(layer, which, i, v);
            tally.add(grads[i], (up - down) / (2.0 * STEP));
        }
    }
    Ok(tally.report(name))
}

/// Involution multiply-add with the kernel field held as a parameter, so its
/// gradient is checked alongside the input gradient.
struct Aggregate {
    kernel: Param<f64>,
    window: Window,
}

impl Layer<f64> for Aggregate {
    type Tape = Tensor<f64>;

    fn forward(&mut self, x: &Tensor<f64>, _mode: Mode) -> Result<(Tensor<f64>, Tensor<f64>)> {
        Ok((
            involution_aggregate(x, &self.kernel.value, &self.window)?,
            x.clone(),
        ))
    }

    fn backward(&mut self, x: Tensor<f64>, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (dx, dk) =
            involution_aggregate_backward(&x, &self.kernel.value, grad_out, &self.window)?;
        self.kernel.grad.add_assign(&dk)?;
        Ok(dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        f(prefix, &self.kernel);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        f(prefix, &mut self.kernel);
    }
}

/// Kernel generation alone, output flattened to the kernel field.
struct KernelGen(Involution<f64>);

impl Layer<f64> for KernelGen {
    type Tape = KernelTape<f64>;

    fn forward(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<(Tensor<f64>, KernelTape<f64>)> {
        self.0.generate_kernel(x, mode)
    }

    fn backward(&mut self, tape: KernelTape<f64>, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.0.generate_kernel_backward(tape, grad_out)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        self.0.visit_params(prefix, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        self.0.visit_params_mut(prefix, f);
    }
}

/// Mean cross-entropy over fixed labels, viewed as a layer with a 1-element
/// output.
struct Xent(Vec<usize>);

impl Layer<f64> for Xent {
    type Tape = Tensor<f64>;

    fn forward(&mut self, x: &Tensor<f64>, _mode: Mode) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let out = softmax_xent(x, &self.0)?;
        Ok((Tensor::from_vec(&[1], vec![out.loss])?, out.grad))
    }

    fn backward(&mut self, grad: Tensor<f64>, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(grad.scale(grad_out.data()[0]))
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<f64>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<f64>)) {}
}

fn randomize_bn(bn: &mut BatchNorm<f64>, rng: &mut Rng) -> Result<()> {
    let c = bn.channels();
    bn.gamma.value = rng.uniform(&[c], 0.5, 1.5)?;
    bn.beta.value = rng.uniform(&[c], -0.5, 0.5)?;
    Ok(())
}

/// Non-zero biases and BN affine parameters so every gradient path carries
/// signal.
fn perturb_all<L: Layer<f64>>(layer: &mut L, rng: &mut Rng) {
    layer.visit_params_mut("", &mut |name, p| {
        if !p.decay {
            let (lo, hi) = if name.ends_with("gamma") {
                (0.5, 1.5)
            } else {
                (-0.5, 0.5)
            };
            for v in p.value.data_mut() {
                *v = rng.uniform_scalar(lo, hi);
            }
        }
    });
}

/// The default model at batch 2, length 32.
pub fn model_config() -> ModelConfig {
    ModelConfig::default()
}

/// Names accepted by [`run`].
pub const LAYERS: &[&str] = &[
    "conv",
    "conv_strided",
    "batchnorm",
    "linear",
    "maxpool",
    "avgpool",
    "gap",
    "softmax_xent",
    "involution_aggregate",
    "involution_kernel",
    "involution",
    "involution_strided",
    "bottleneck_involution",
    "bottleneck_convolution",
    "model",
    "model_convolution",
];

/// Run one named check.
pub fn run(name: &str, seed: u64, opts: &Options) -> Result<GradReport> {
    let mut rng = Rng::new(seed).fork(&[name.len() as u64, name.bytes().map(u64::from).sum()]);
    let input = |dims: &[usize], rng: &mut Rng| rng.normal::<f64>(dims, 0.0, 1.0);
    match name {
        "conv" => {
            let mut l = Conv2d::new(3, 4, (3, 3), (1, 1), (1, 1), true, &mut rng)?;
            perturb_all(&mut l, &mut rng);
            let x = input(&[2, 3, 4, 5], &mut rng)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "conv_strided" => {
            let mut l = Conv2d::new(2, 3, (1, 3), (1, 2), (0, 1), true, &mut rng)?;
            perturb_all(&mut l, &mut rng);
            let x = input(&[2, 2, 1, 9], &mut rng)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "batchnorm" => {
            let mut l = BatchNorm::new(3)?;
            randomize_bn(&mut l, &mut rng)?;
            let x = rng.normal(&[3, 3, 1, 6], 0.5, 2.0)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "linear" => {
            let mut l = Linear::new(5, 4, &mut rng)?;
            perturb_all(&mut l, &mut rng);
            let x = input(&[3, 5], &mut rng)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "maxpool" => {
            let x = input(&[2, 3, 2, 8], &mut rng)?;
            check_layer(name, &mut MaxPool::new((1, 2), (1, 2)), &x, &mut rng, opts)
        }
        "avgpool" => {
            let x = input(&[2, 3, 2, 6], &mut rng)?;
            check_layer(name, &mut AvgPool { window: (2, 3) }, &x, &mut rng, opts)
        }
        "gap" => {
            let x = input(&[2, 3, 1, 7], &mut rng)?;
            check_layer(name, &mut GlobalAvgPool, &x, &mut rng, opts)
        }
        "softmax_xent" => {
            let x = rng.normal(&[4, 6], 0.0, 3.0)?;
            check_layer(name, &mut Xent(vec![0, 5, 2, 2]), &x, &mut rng, opts)
        }
        "involution_aggregate" => {
            let window = Window::same((1, 5), (1, 1));
            let kernel = input(&[2, 2, 5, 1, 9], &mut rng)?;
            let mut l = Aggregate {
                kernel: Param::new(kernel, false),
                window,
            };
            let x = input(&[2, 4, 1, 9], &mut rng)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "involution_kernel" => {
            let mut inv = Involution::new(8, (1, 5), 2, 2, (1, 1), &mut rng)?;
            perturb_all(&mut inv, &mut rng);
            let x = input(&[2, 8, 1, 10], &mut rng)?;
            check_layer(name, &mut KernelGen(inv), &x, &mut rng, opts)
        }
        "involution" => {
            let mut l = Involution::new(8, (1, 7), 4, 4, (1, 1), &mut rng)?;
            perturb_all(&mut l, &mut rng);
            let x = input(&[2, 8, 1, 12], &mut rng)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "involution_strided" => {
            let mut l = Involution::new(4, (3, 3), 2, 2, (2, 2), &mut rng)?;
            perturb_all(&mut l, &mut rng);
            let x = input(&[2, 4, 4, 6], &mut rng)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "bottleneck_involution" | "bottleneck_convolution" => {
            let op = if name.ends_with("involution") {
                Operator::Involution
            } else {
                Operator::Convolution
            };
            let cfg = ModelConfig {
                operator: op,
                kernel: 5,
                groups: 2,
                reduction: 2,
                ..ModelConfig::default()
            };
            let plan = BlockPlan {
                in_channels: 4,
                mid_channels: 4,
                out_channels: 8,
                downsample: true,
            };
            let mut l = Bottleneck::new(plan, &cfg, &mut rng)?;
            perturb_all(&mut l, &mut rng);
            let x = input(&[2, 4, 1, 16], &mut rng)?;
            check_layer(name, &mut l, &x, &mut rng, opts)
        }
        "model" | "model_convolution" => {
            let op = if name == "model" {
                Operator::Involution
            } else {
                Operator::Convolution
            };
            let mut m = Model::<f64>::build(&model_config().with_operator(op), &mut rng)?;
            perturb_all(&mut m, &mut rng);
            let x = input(&[2, 2, 1, 32], &mut rng)?;
            check_layer(name, &mut m, &x, &mut rng, opts)
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown gradcheck layer {other:?}; expected one of {}",
            LAYERS.join(", ")
        ))),
    }
}

/// Every check in [`LAYERS`].
pub fn run_all(seed: u64, opts: &Options) -> Result<Vec<GradReport>> {
    LAYERS.iter().map(|n| run(n, seed, opts)).collect()
}
