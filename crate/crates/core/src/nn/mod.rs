//! Layers with explicit forward and backward passes.
//!
//! Every layer works on `B x C x H x W` tensors (except [`Linear`] and the
//! loss, which take `B x D`). A forward call returns the output together with
//! a tape; passing that tape to `backward` consumes it, accumulates parameter
//! gradients into each [`Param::grad`] and returns the input gradient.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

mod batchnorm;
mod conv;
mod involution;
mod linear;
mod loss;
mod pool;

pub use batchnorm::{BatchNorm, BatchNormTape};
pub use conv::{fold, unfold, Conv2d, ConvTape};
pub use involution::{
    involution_aggregate, involution_aggregate_backward, Involution, InvolutionTape, KernelTape,
};
pub use linear::{Linear, LinearTape};
pub use loss::{softmax_xent, SoftmaxXent};
pub use pool::{avgpool, avgpool_backward, AvgPool, GapTape, GlobalAvgPool, MaxPool, MaxPoolTape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable array with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Whether weight decay applies (weights yes; biases and BN affine no).
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>, decay: bool) -> Self {
        let grad = value.zeros_like();
        Param { value, grad, decay }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Identifies a layer instance and the revision of its parameters, so a tape
/// can only be replayed against the exact state that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stamp {
    id: u64,
    version: u64,
}

static NEXT_LAYER_ID: AtomicU64 = AtomicU64::new(1);

impl Stamp {
    pub fn fresh() -> Self {
        Stamp {
            id: NEXT_LAYER_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn bump(&mut self) {
        self.version += 1;
    }

    pub fn check(&self, tape: Stamp, layer: &str) -> Result<()> {
        if self.id != tape.id {
            return Err(Error::StaleTape(format!(
                "{layer}: tape belongs to another layer"
            )));
        }
        if self.version != tape.version {
            return Err(Error::StaleTape(format!(
                "{layer}: parameters changed since forward"
            )));
        }
        Ok(())
    }
}

/// Common surface of every layer.
pub trait Layer<T: Real> {
    type Tape;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Self::Tape)>;

    fn backward(&mut self, tape: Self::Tape, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));

    /// Mutable access to the parameters. Invalidates outstanding tapes.
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    /// Non-learnable state (batch-norm running statistics).
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor<T>)) {}

    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.numel());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.grad.fill(T::zero()));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Neighbourhood offsets of a square `k x k` window centred on a pixel,
/// `[-k/2, k/2]²` in row-major order.
pub fn offsets(k: usize) -> Result<Vec<(isize, isize)>> {
    offsets_rect(k, k)
}

/// Offsets of a `kh x kw` window (both odd) centred on a pixel.
pub fn offsets_rect(kh: usize, kw: usize) -> Result<Vec<(isize, isize)>> {
    if kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd and positive, got {kh}x{kw}"
        )));
    }
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    Ok((-rh..=rh)
        .flat_map(|u| (-rw..=rw).map(move |v| (u, v)))
        .collect())
}

/// Sliding-window geometry shared by convolution, unfold and involution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Window {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Window {
            kernel,
            stride,
            padding,
        }
    }

    /// Odd kernel with `floor(k/2)` zero padding.
    pub fn same(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        Window::new(kernel, stride, (kernel.0 / 2, kernel.1 / 2))
    }

    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }

    pub fn output_size(&self, h: usize, w: usize, op: &'static str) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::geometry(op, format!("degenerate window {self:?}")));
        }
        let (hp, wp) = (h + 2 * self.padding.0, w + 2 * self.padding.1);
        if hp < kh || wp < kw {
            return Err(Error::geometry(
                op,
                format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}"),
            ));
        }
        Ok(((hp - kh) / sh + 1, (wp - kw) / sw + 1))
    }
}

pub(crate) fn dims4(
    x: &Tensor<impl Real>,
    op: &'static str,
) -> Result<(usize, usize, usize, usize)> {
    match *x.dims() {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref d => Err(Error::geometry(
            op,
            format!("expected a B x C x H x W tensor, got {d:?}"),
        )),
    }
}

/// Backward of ReLU given its forward output.
pub fn relu_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    y.check_same_shape(grad_out, "relu_backward")?;
    let mut g = grad_out.clone();
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        if yv <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

/// Fan-in scaled uniform initialisation, bound `sqrt(6 / fan_in)`.
pub(crate) fn init_uniform<T: Real>(
    rng: &mut crate::rng::Rng,
    dims: &[usize],
    fan_in: usize,
) -> Result<Tensor<T>> {
    let bound = (6.0 / fan_in as f64).sqrt();
    rng.uniform(dims, -bound, bound)
}
