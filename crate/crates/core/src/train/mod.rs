//! Minibatch SGD with momentum, and evaluation by SNR.

mod eval;
mod run;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use eval::{
    argmax, evaluate, pr_cc, predict, report_from_predictions, EvalReport, SnrAccuracy,
};
pub use run::{fit, init_model, run_experiment, TrainConfig};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{softmax_xent, Layer, Mode, Param};
use crate::rng::Rng;
use crate::signal::SignalFrame;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    None,
    /// Multiply the rate by `factor` at the start of each milestone epoch.
    Step {
        milestones: Vec<usize>,
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Rotate every training frame by a fresh uniform carrier phase each
    /// time it is drawn.
    pub phase_augment: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 50,
            batch_size: 64,
            lr_schedule: LrSchedule::Step {
                milestones: vec![30, 40],
                factor: 0.1,
            },
            seed: 0,
            phase_augment: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let LrSchedule::Step { factor, .. } = &self.lr_schedule {
            if !(*factor > 0.0 && factor.is_finite()) {
                return bad(format!("schedule factor must be positive, got {factor}"));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match &self.lr_schedule {
            LrSchedule::None => self.lr,
            LrSchedule::Step { milestones, factor } => {
                let hits = milestones.iter().filter(|&&m| m <= epoch).count();
                self.lr * factor.powi(hits as i32)
            }
        }
    }
}

/// One momentum step with weight decay folded into the gradient:
/// `g' = g + wd*p`, `v = momentum*v + g'`, `p = p - lr*v`.
pub fn sgd_step<T: Real>(
    param: &mut Param<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    param.value.check_same_shape(&param.grad, "sgd grad")?;
    param.value.check_same_shape(velocity, "sgd velocity")?;
    let wd = if param.decay {
        T::of(weight_decay)
    } else {
        T::zero()
    };
    let (lr, m) = (T::of(lr), T::of(momentum));
    let p = param.value.data_mut();
    for ((p, v), &g) in p.iter_mut().zip(velocity.data_mut()).zip(param.grad.data()) {
        *v = m * *v + (g + wd * *p);
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers for every parameter of a layer, in visitor order.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(layer: &impl Layer<T>) -> Self {
        let mut velocity = Vec::new();
        layer.visit_params("", &mut |_, p| velocity.push(p.value.zeros_like()));
        Sgd { velocity }
    }

    pub fn step(
        &mut self,
        layer: &mut impl Layer<T>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let mut slots = self.velocity.iter_mut();
        let mut result = Ok(());
        layer.visit_params_mut("", &mut |name, p| {
            if result.is_err() {
                return;
            }
            result = match slots.next() {
                Some(v) => sgd_step(p, v, lr, momentum, weight_decay),
                None => Err(Error::InvalidArgument(format!(
                    "sgd: no velocity for {name}"
                ))),
            };
        });
        result
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

const PHASE_TAG: u64 = 0x7068617365;

/// Stack frames `idx` into a `B x 2 x 1 x N` batch.
pub fn batch<T: Real>(frames: &[SignalFrame], idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
    let first = frames
        .get(
            *idx.first()
                .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?,
        )
        .ok_or_else(|| Error::InvalidArgument("batch index out of range".into()))?;
    let n = first.len();
    let mut data = Vec::with_capacity(idx.len() * 2 * n);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let f = frames
            .get(i)
            .ok_or_else(|| Error::InvalidArgument("batch index out of range".into()))?;
        if f.len() != n {
            return Err(Error::InvalidArgument(format!(
                "frames of length {} and {n} in one batch",
                f.len()
            )));
        }
        data.extend(f.iq.data().iter().map(|&v| T::of(v as f64)));
        labels.push(f.label);
    }
    Ok((Tensor::from_vec(&[idx.len(), 2, 1, n], data)?, labels))
}

/// Multiply each frame of a `B x 2 x 1 x N` batch by `e^{j theta}`, one
/// uniform angle per frame.
pub fn rotate_phase<T: Real>(x: &mut Tensor<T>, rng: &mut Rng) {
    let n = x.dims()[3];
    for f in x.data_mut().chunks_exact_mut(2 * n) {
        let theta = rng.uniform_scalar(0.0, std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let (i, q) = f.split_at_mut(n);
        for (a, b) in i.iter_mut().zip(q) {
            let (re, im) = (a.to_f64(), b.to_f64());
            *a = T::of(re * c - im * s);
            *b = T::of(re * s + im * c);
        }
    }
}

/// Train `model` in place; returns the per-epoch loss history.
pub fn train<T: Real>(
    model: &mut Model<T>,
    frames: &[SignalFrame],
    cfg: &SgdConfig,
) -> Result<Vec<EpochLog>> {
    train_with(model, frames, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Real>(
    model: &mut Model<T>,
    frames: &[SignalFrame],
    cfg: &SgdConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch_size > frames.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds training set of {}",
            cfg.batch_size,
            frames.len()
        )));
    }
    let classes = model.config().num_classes;
    if let Some(f) = frames.iter().find(|f| f.label >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {classes} classes",
            f.label
        )));
    }
    let rng = Rng::new(cfg.seed);
    let mut opt = Sgd::new(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        rng.fork(&[epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        let mut phase_rng = rng.fork(&[epoch as u64, PHASE_TAG]);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, labels) = batch::<T>(frames, idx)?;
            if cfg.phase_augment {
                rotate_phase(&mut x, &mut phase_rng);
            }
            model.zero_grad();
            let (logits, tape) = model.forward(&x, Mode::Train)?;
            let out = softmax_xent(&logits, &labels)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss: out.loss,
                });
            }
            model.backward(tape, &out.grad)?;
            opt.step(model, lr, cfg.momentum, cfg.weight_decay)?;
            total += out.loss;
            batches += 1;
        }
        let log = EpochLog {
            epoch,
            mean_loss: total / batches as f64,
            lr,
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok(history)
}

pub fn write_loss_log(path: impl AsRef<Path>, history: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "epoch,mean_loss,lr").expect("write to vec");
    for h in history {
        writeln!(out, "{},{},{}", h.epoch, h.mean_loss, h.lr).expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
