use super::{dims4, init_uniform, join, Layer, Mode, Param, Stamp, Window};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, Real, Tensor};

/// Gather one sample's sliding patches into columns.
///
/// `x` is `c x h x w`; `cols` is `(c * kh * kw) x (oh * ow)` with row index
/// `(ch * kh + u) * kw + v`. Out-of-bounds taps read as zero.
fn unfold_sample<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    win: &Window,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.padding;
    let l = oh * ow;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = &mut cols[((ch * kh + u) * kw + v) * l..][..l];
                for oi in 0..oh {
                    let out = &mut row[oi * ow..(oi + 1) * ow];
                    let ii = (oi * sh + u) as isize - ph as isize;
                    if ii < 0 || ii >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    let (lo, hi) = valid_cols(ow, w, sw, v, pw);
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    if sw == 1 {
                        let start = lo + v - pw;
                        out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (oj, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                            *o = src[oj * sw + v - pw];
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose tap `v` lands inside a row of width `w`.
fn valid_cols(ow: usize, w: usize, sw: usize, v: usize, pw: usize) -> (usize, usize) {
    // need 0 <= oj*sw + v - pw < w
    let lo = if v >= pw { 0 } else { (pw - v).div_ceil(sw) };
    let hi = if w + pw <= v {
        0
    } else {
        (w + pw - v).div_ceil(sw).min(ow)
    };
    (lo.min(hi), hi)
}

/// Adjoint of [`unfold_sample`]: scatter-add columns back onto the image.
fn fold_sample<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    win: &Window,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.padding;
    let l = oh * ow;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = &cols[((ch * kh + u) * kw + v) * l..][..l];
                for oi in 0..oh {
                    let ii = (oi * sh + u) as isize - ph as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    let (lo, hi) = valid_cols(ow, w, sw, v, pw);
                    let src = &row[oi * ow..(oi + 1) * ow];
                    if lo == hi {
                        continue;
                    }
                    if sw == 1 {
                        let start = lo + v - pw;
                        for (d, &g) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += g;
                        }
                    } else {
                        for oj in lo..hi {
                            dst[oj * sw + v - pw] += src[oj];
                        }
                    }
                }
            }
        }
    }
}

/// Extract sliding patches: `B x C x H x W` to `B x (C * kh * kw) x (H' * W')`.
///
/// Column `j` holds the zero-padded patch around output location `j`
/// (row-major over `H' x W'`); rows are ordered channel-major, then kernel
/// row `u`, then kernel column `v`.
pub fn unfold<T: Real>(x: &Tensor<T>, win: &Window) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "unfold")?;
    let (oh, ow) = win.output_size(h, w, "unfold")?;
    let rows = c * win.taps();
    let mut out = Tensor::zeros(&[b, rows, oh * ow])?;
    let (xs, cs) = (c * h * w, rows * oh * ow);
    for bi in 0..b {
        unfold_sample(
            &x.data()[bi * xs..(bi + 1) * xs],
            c,
            h,
            w,
            win,
            oh,
            ow,
            &mut out.data_mut()[bi * cs..(bi + 1) * cs],
        );
    }
    Ok(out)
}

/// Adjoint of [`unfold`]; overlapping taps are summed.
pub fn fold<T: Real>(
    cols: &Tensor<T>,
    c: usize,
    h: usize,
    w: usize,
    win: &Window,
) -> Result<Tensor<T>> {
    let (oh, ow) = win.output_size(h, w, "fold")?;
    let rows = c * win.taps();
    let b = cols.dims()[0];
    if cols.dims() != [b, rows, oh * ow] {
        return Err(Error::ShapeMismatch {
            op: "fold",
            left: cols.dims().to_vec(),
            right: vec![b, rows, oh * ow],
        });
    }
    let mut x = Tensor::zeros(&[b, c, h, w])?;
    let (xs, cs) = (c * h * w, rows * oh * ow);
    for bi in 0..b {
        fold_sample(
            &cols.data()[bi * cs..(bi + 1) * cs],
            c,
            h,
            w,
            win,
            oh,
            ow,
            &mut x.data_mut()[bi * xs..(bi + 1) * xs],
        );
    }
    Ok(x)
}

/// 2-D cross-correlation with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    /// `C_out x C_in x kh x kw`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    window: Window,
    stamp: Stamp,
}

#[derive(Debug)]
pub struct ConvTape<T> {
    stamp: Stamp,
    in_dims: [usize; 4],
    out_hw: (usize, usize),
    /// Unfolded input, or the input itself for pointwise convolutions.
    cols: Tensor<T>,
}

impl<T: Real> Conv2d<T> {
    /// Fan-in uniform weights, zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let weight = init_uniform(
            rng,
            &[out_channels, in_channels, kernel.0, kernel.1],
            fan_in,
        )?;
        let bias = if bias {
            Some(Tensor::zeros(&[out_channels])?)
        } else {
            None
        };
        Self::from_weights(weight, bias, stride, padding)
    }

    pub fn from_weights(
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let &[co, _, kh, kw] = weight.dims() else {
            return Err(Error::geometry("conv2d", "weight must be rank 4"));
        };
        if let Some(b) = &bias {
            if b.dims() != [co] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: b.dims().to_vec(),
                    right: vec![co],
                });
            }
        }
        Ok(Conv2d {
            weight: Param::new(weight, true),
            bias: bias.map(|b| Param::new(b, false)),
            window: Window::new((kh, kw), stride, padding),
            stamp: Stamp::fresh(),
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dims()[0]
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    type Tape = ConvTape<T>;

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, ConvTape<T>)> {
        let (b, c, h, w) = dims4(x, "conv2d")?;
        if c != self.in_channels() {
            return Err(Error::geometry(
                "conv2d",
                format!("expected {} input channels, got {c}", self.in_channels()),
            ));
        }
        let (oh, ow) = self.window.output_size(h, w, "conv2d")?;
        let co = self.out_channels();
        let ck = c * self.window.taps();
        let l = oh * ow;
        let cols = if self.window.is_pointwise() {
            x.clone()
        } else {
            unfold(x, &self.window)?
        };
        let mut y = Tensor::zeros(&[b, co, oh, ow])?;
        let wdata = self.weight.value.data();
        for bi in 0..b {
            let out = &mut y.data_mut()[bi * co * l..(bi + 1) * co * l];
            gemm(
                false,
                false,
                co,
                ck,
                l,
                T::one(),
                wdata,
                &cols.data()[bi * ck * l..(bi + 1) * ck * l],
                T::zero(),
                out,
            );
            if let Some(bias) = &self.bias {
                for (row, &bv) in out.chunks_exact_mut(l).zip(bias.value.data()) {
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let tape = ConvTape {
            stamp: self.stamp,
            in_dims: [b, c, h, w],
            out_hw: (oh, ow),
            cols,
        };
        Ok((y, tape))
    }

    fn backward(&mut self, tape: ConvTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.stamp.check(tape.stamp, "conv2d")?;
        let [b, c, h, w] = tape.in_dims;
        let co = self.out_channels();
        let (oh, ow) = tape.out_hw;
        if grad_out.dims() != [b, co, oh, ow] {
            return Err(Error::StaleTape(format!(
                "conv2d: grad {:?} does not match forward output {:?}",
                grad_out.dims(),
                [b, co, oh, ow]
            )));
        }
        let ck = c * self.window.taps();
        let l = oh * ow;
        let mut dcols = Tensor::zeros(&[b, ck, l])?;
        for bi in 0..b {
            let g = &grad_out.data()[bi * co * l..(bi + 1) * co * l];
            let cols = &tape.cols.data()[bi * ck * l..(bi + 1) * ck * l];
            gemm(
                false,
                true,
                co,
                l,
                ck,
                T::one(),
                g,
                cols,
                T::one(),
                self.weight.grad.data_mut(),
            );
            if let Some(bias) = &mut self.bias {
                for (db, row) in bias.grad.data_mut().iter_mut().zip(g.chunks_exact(l)) {
                    *db += row.iter().copied().sum::<T>();
                }
            }
            gemm(
                true,
                false,
                ck,
                co,
                l,
                T::one(),
                self.weight.value.data(),
                g,
                T::zero(),
                &mut dcols.data_mut()[bi * ck * l..(bi + 1) * ck * l],
            );
        }
        if self.window.is_pointwise() {
            dcols.into_shape(&[b, c, h, w])
        } else {
            fold(&dcols, c, h, w, &self.window)
        }
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stamp.bump();
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
