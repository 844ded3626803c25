use super::{dims4, join, Layer, Mode, Param, Stamp};
use crate::error::{Error, Result};
use crate::tensor::{lane_dot, lane_sum_by, Real, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `B x C x H x W`.
///
/// Training mode normalizes with the batch mean and biased batch variance and
/// folds both into the running estimates:
/// `running = (1 - momentum) * running + momentum * batch`.
/// Inference mode uses the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    stamp: Stamp,
}

#[derive(Debug)]
pub struct BatchNormTape<T> {
    stamp: Stamp,
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: Param::new(Tensor::full(&[channels], T::one())?, false),
            beta: Param::new(Tensor::zeros(&[channels])?, false),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            stamp: Stamp::fresh(),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    type Tape = BatchNormTape<T>;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormTape<T>)> {
        let (b, c, h, w) = dims4(x, "batchnorm")?;
        if c != self.channels() {
            return Err(Error::geometry(
                "batchnorm",
                format!("expected {} channels, got {c}", self.channels()),
            ));
        }
        let hw = h * w;
        let count = b * hw;
        if mode == Mode::Train && count < 2 {
            return Err(Error::geometry(
                "batchnorm",
                "training mode needs at least two values per channel",
            ));
        }
        let eps = T::of(self.eps);
        let mut inv_std = vec![T::zero(); c];
        let mut shift = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let plane = |bi: usize| &x.data()[(bi * c + ch) * hw..][..hw];
                    let n = T::of(count as f64);
                    let mean = (0..b).map(|bi| lane_sum_by(plane(bi), |v| v)).sum::<T>() / n;
                    let var = (0..b)
                        .map(|bi| lane_sum_by(plane(bi), |v| (v - mean) * (v - mean)))
                        .sum::<T>()
                        / n;
                    let m = T::of(self.momentum);
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - m) * *rm + m * mean;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - m) * *rv + m * var;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            inv_std[ch] = T::one() / (var + eps).sqrt();
            shift[ch] = mean;
        }
        let mut xhat = x.clone();
        let mut y = x.clone();
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                let (g, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                let xs = &mut xhat.data_mut()[off..off + hw];
                for v in xs.iter_mut() {
                    *v = (*v - shift[ch]) * inv_std[ch];
                }
                for (yv, &xv) in y.data_mut()[off..off + hw]
                    .iter_mut()
                    .zip(&xhat.data()[off..off + hw])
                {
                    *yv = g * xv + bt;
                }
            }
        }
        let tape = BatchNormTape {
            stamp: self.stamp,
            mode,
            xhat,
            inv_std,
        };
        Ok((y, tape))
    }

    fn backward(&mut self, tape: BatchNormTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.stamp.check(tape.stamp, "batchnorm")?;
        if grad_out.dims() != tape.xhat.dims() {
            return Err(Error::StaleTape(format!(
                "batchnorm: grad {:?} does not match forward output {:?}",
                grad_out.dims(),
                tape.xhat.dims()
            )));
        }
        let (b, c, h, w) = dims4(grad_out, "batchnorm")?;
        let hw = h * w;
        let n = T::of((b * hw) as f64);
        let mut dx = grad_out.zeros_like();
        for ch in 0..c {
            let gamma = self.gamma.value.data()[ch];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                let g = &grad_out.data()[off..off + hw];
                sum_g += lane_sum_by(g, |v| v);
                sum_gx += lane_dot(g, &tape.xhat.data()[off..off + hw]);
            }
            self.gamma.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            let k = gamma * tape.inv_std[ch];
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                let g = &grad_out.data()[off..off + hw];
                let xh = &tape.xhat.data()[off..off + hw];
                let out = &mut dx.data_mut()[off..off + hw];
                match tape.mode {
                    Mode::Train => {
                        let (mg, mgx) = (sum_g / n, sum_gx / n);
                        for i in 0..hw {
                            out[i] = k * (g[i] - mg - xh[i] * mgx);
                        }
                    }
                    Mode::Eval => {
                        for i in 0..hw {
                            out[i] = k * g[i];
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stamp.bump();
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stamp.bump();
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
