use super::{dims4, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn pooled_size(
    h: usize,
    w: usize,
    window: (usize, usize),
    stride: (usize, usize),
    op: &'static str,
) -> Result<(usize, usize)> {
    if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::geometry(op, "window and stride must be positive"));
    }
    if window.0 > h || window.1 > w {
        return Err(Error::geometry(
            op,
            format!("window {window:?} exceeds spatial extent {h}x{w}"),
        ));
    }
    Ok(((h - window.0) / stride.0 + 1, (w - window.1) / stride.1 + 1))
}

/// Max pooling without padding. Ties go to the lowest linear input index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

#[derive(Debug)]
pub struct MaxPoolTape {
    in_dims: [usize; 4],
    /// Flat input offset of the winner of each output element.
    argmax: Vec<usize>,
}

impl MaxPoolTape {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl MaxPool {
    pub fn new(window: (usize, usize), stride: (usize, usize)) -> Self {
        MaxPool { window, stride }
    }
}

impl<T: Real> Layer<T> for MaxPool {
    type Tape = MaxPoolTape;

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, MaxPoolTape)> {
        let (b, c, h, w) = dims4(x, "maxpool")?;
        let (oh, ow) = pooled_size(h, w, self.window, self.stride, "maxpool")?;
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let xd = x.data();
        let (kh, kw) = self.window;
        let (sh, sw) = self.stride;
        if kh == 1 && (sh, sw) == (1, kw) && ow * kw == w {
            // non-overlapping windows along rows
            for (start, win) in xd.chunks_exact(kw).enumerate() {
                let mut best = 0;
                for (idx, &v) in win.iter().enumerate().skip(1) {
                    if v > win[best] {
                        best = idx;
                    }
                }
                out.push(win[best]);
                argmax.push(start * kw + best);
            }
            let y = Tensor::from_vec(&[b, c, oh, ow], out)?;
            return Ok((
                y,
                MaxPoolTape {
                    in_dims: [b, c, h, w],
                    argmax,
                },
            ));
        }
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * sh * w + j * sw;
                    let mut best_v = xd[best];
                    for u in 0..kh {
                        let row = base + (i * sh + u) * w + j * sw;
                        for (idx, &v) in xd[row..row + kw].iter().enumerate() {
                            if v > best_v {
                                best_v = v;
                                best = row + idx;
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        let y = Tensor::from_vec(&[b, c, oh, ow], out)?;
        Ok((
            y,
            MaxPoolTape {
                in_dims: [b, c, h, w],
                argmax,
            },
        ))
    }

    fn backward(&mut self, tape: MaxPoolTape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.numel() != tape.argmax.len() {
            return Err(Error::StaleTape("maxpool: gradient size mismatch".into()));
        }
        let mut dx = Tensor::zeros(&tape.in_dims)?;
        for (&g, &idx) in grad_out.data().iter().zip(&tape.argmax) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

/// Non-overlapping average pooling with window = stride.
pub fn avgpool<T: Real>(x: &Tensor<T>, window: (usize, usize)) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "avgpool")?;
    let (oh, ow) = pooled_size(h, w, window, window, "avgpool")?;
    let scale = T::one() / T::of((window.0 * window.1) as f64);
    let mut y = Tensor::zeros(&[b, c, oh, ow])?;
    for plane in 0..b * c {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::zero();
                for u in 0..window.0 {
                    let row = plane * h * w + (i * window.0 + u) * w + j * window.1;
                    acc += x.data()[row..row + window.1].iter().copied().sum::<T>();
                }
                y.data_mut()[(plane * oh + i) * ow + j] = acc * scale;
            }
        }
    }
    Ok(y)
}

pub fn avgpool_backward<T: Real>(
    grad_out: &Tensor<T>,
    in_dims: [usize; 4],
    window: (usize, usize),
) -> Result<Tensor<T>> {
    let [b, c, h, w] = in_dims;
    let (oh, ow) = pooled_size(h, w, window, window, "avgpool")?;
    if grad_out.dims() != [b, c, oh, ow] {
        return Err(Error::StaleTape("avgpool: gradient size mismatch".into()));
    }
    let scale = T::one() / T::of((window.0 * window.1) as f64);
    let mut dx = Tensor::zeros(&in_dims)?;
    for plane in 0..b * c {
        for i in 0..oh {
            for j in 0..ow {
                let g = grad_out.data()[(plane * oh + i) * ow + j] * scale;
                for u in 0..window.0 {
                    let row = plane * h * w + (i * window.0 + u) * w + j * window.1;
                    dx.data_mut()[row..row + window.1]
                        .iter_mut()
                        .for_each(|v| *v += g);
                }
            }
        }
    }
    Ok(dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool {
    pub window: (usize, usize),
}

impl<T: Real> Layer<T> for AvgPool {
    type Tape = [usize; 4];

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, [usize; 4])> {
        let (b, c, h, w) = dims4(x, "avgpool")?;
        Ok((avgpool(x, self.window)?, [b, c, h, w]))
    }

    fn backward(&mut self, tape: [usize; 4], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        avgpool_backward(grad_out, tape, self.window)
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

/// Spatial mean per channel: `B x C x H x W` to `B x C`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GlobalAvgPool;

#[derive(Debug)]
pub struct GapTape {
    in_dims: [usize; 4],
}

impl<T: Real> Layer<T> for GlobalAvgPool {
    type Tape = GapTape;

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, GapTape)> {
        let (b, c, h, w) = dims4(x, "gap")?;
        let hw = h * w;
        let scale = T::one() / T::of(hw as f64);
        let data = x
            .data()
            .chunks_exact(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        Ok((
            Tensor::from_vec(&[b, c], data)?,
            GapTape {
                in_dims: [b, c, h, w],
            },
        ))
    }

    fn backward(&mut self, tape: GapTape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = tape.in_dims;
        if grad_out.dims() != [b, c] {
            return Err(Error::StaleTape("gap: gradient size mismatch".into()));
        }
        let hw = h * w;
        let scale = T::one() / T::of(hw as f64);
        let mut dx = Tensor::zeros(&tape.in_dims)?;
        for (plane, &g) in dx.data_mut().chunks_exact_mut(hw).zip(grad_out.data()) {
            plane.fill(g * scale);
        }
        Ok(dx)
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}
