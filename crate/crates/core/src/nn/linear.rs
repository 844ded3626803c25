use super::{init_uniform, join, Layer, Mode, Param, Stamp};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Real, Tensor};

/// Fully connected layer `y = x W + b` with `W: D x M`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    stamp: Stamp,
}

#[derive(Debug)]
pub struct LinearTape<T> {
    stamp: Stamp,
    x: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        let w = init_uniform(rng, &[in_features, out_features], in_features)?;
        Self::from_weights(w, Tensor::zeros(&[out_features])?)
    }

    pub fn from_weights(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[_, m] = weight.dims() else {
            return Err(Error::geometry("linear", "weight must be rank 2"));
        };
        if bias.dims() != [m] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                left: bias.dims().to_vec(),
                right: vec![m],
            });
        }
        Ok(Linear {
            weight: Param::new(weight, true),
            bias: Param::new(bias, false),
            stamp: Stamp::fresh(),
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.dims()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.dims()[1]
    }
}

impl<T: Real> Layer<T> for Linear<T> {
    type Tape = LinearTape<T>;

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, LinearTape<T>)> {
        let mut y = x.matmul(&self.weight.value)?;
        let m = self.out_features();
        for row in y.data_mut().chunks_exact_mut(m) {
            for (v, &b) in row.iter_mut().zip(self.bias.value.data()) {
                *v += b;
            }
        }
        Ok((
            y,
            LinearTape {
                stamp: self.stamp,
                x: x.clone(),
            },
        ))
    }

    fn backward(&mut self, tape: LinearTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.stamp.check(tape.stamp, "linear")?;
        let (d, m) = (self.in_features(), self.out_features());
        let b = tape.x.dims()[0];
        if grad_out.dims() != [b, m] {
            return Err(Error::StaleTape(format!(
                "linear: grad {:?} does not match forward output {:?}",
                grad_out.dims(),
                [b, m]
            )));
        }
        gemm(
            true,
            false,
            d,
            b,
            m,
            T::one(),
            tape.x.data(),
            grad_out.data(),
            T::one(),
            self.weight.grad.data_mut(),
        );
        for row in grad_out.data().chunks_exact(m) {
            for (db, &g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *db += g;
            }
        }
        let mut dx = Tensor::zeros(&[b, d])?;
        gemm(
            false,
            true,
            b,
            m,
            d,
            T::one(),
            grad_out.data(),
            self.weight.value.data(),
            T::zero(),
            dx.data_mut(),
        );
        Ok(dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stamp.bump();
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
