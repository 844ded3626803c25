//! Involution: a spatial operator whose kernel is generated at every output
//! location from the input pixel there and shared across the channels of a
//! group.
//!
//! For input `x: B x C x H x W`, `G` groups, a `kh x kw` window and stride `s`:
//!
//! 1. `o(x)` is average pooling with window `s` when `s > 1`, else `x`.
//! 2. kernel generation: `kernel = span(relu(bn(reduce(o(x)))))` where
//!    `reduce` is a bias-free `1x1` map `C -> C/r` and `span` is a `1x1` map
//!    `C/r -> kh*kw*G` with bias. The result is viewed as
//!    `B x G x (kh*kw) x H' x W'`.
//! 3. multiply-add: `x` is unfolded to `B x G x C/G x (kh*kw) x H' x W'`,
//!    multiplied by the kernel broadcast over the `C/G` axis and summed over
//!    the tap axis, giving `B x C x H' x W'`.
//!
//! Channel `c` (0-based) belongs to group `c / (C/G)`.

use std::borrow::Cow;

use super::conv::{fold, unfold, ConvTape};
use super::{
    dims4, join, relu_backward, AvgPool, BatchNorm, BatchNormTape, Conv2d, Layer, Mode, Param,
    Window,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct Involution<T> {
    channels: usize,
    groups: usize,
    reduction: usize,
    window: Window,
    /// `C -> C/r`, no bias.
    pub reduce: Conv2d<T>,
    pub reduce_bn: BatchNorm<T>,
    /// `C/r -> kh*kw*G`, with bias.
    pub span: Conv2d<T>,
}

#[derive(Debug)]
pub struct KernelTape<T> {
    in_dims: [usize; 4],
    pooled: bool,
    reduce: ConvTape<T>,
    bn: BatchNormTape<T>,
    act: Tensor<T>,
    span: ConvTape<T>,
}

#[derive(Debug)]
pub struct InvolutionTape<T> {
    kernel_tape: KernelTape<T>,
    kernel: Tensor<T>,
    cols: Tensor<T>,
    in_dims: [usize; 4],
}

fn check_kernel_field<T: Real>(
    kernel: &Tensor<T>,
    b: usize,
    groups: usize,
    window: &Window,
    oh: usize,
    ow: usize,
) -> Result<()> {
    let want = [b, groups, window.taps(), oh, ow];
    if kernel.dims() != want {
        return Err(Error::ShapeMismatch {
            op: "involution kernel",
            left: kernel.dims().to_vec(),
            right: want.to_vec(),
        });
    }
    Ok(())
}

fn aggregate_cols<T: Real>(
    cols: &Tensor<T>,
    kernel: &Tensor<T>,
    b: usize,
    c: usize,
    groups: usize,
    taps: usize,
    l: usize,
) -> Vec<T> {
    let cpg = c / groups;
    let mut out = vec![T::zero(); b * c * l];
    for bi in 0..b {
        for g in 0..groups {
            let ker = &kernel.data()[(bi * groups + g) * taps * l..][..taps * l];
            for cg in 0..cpg {
                let ch = g * cpg + cg;
                let dst = &mut out[(bi * c + ch) * l..][..l];
                let src = &cols.data()[(bi * c + ch) * taps * l..][..taps * l];
                for t in 0..taps {
                    let (kr, xr) = (&ker[t * l..(t + 1) * l], &src[t * l..(t + 1) * l]);
                    for ((o, &k), &x) in dst.iter_mut().zip(kr).zip(xr) {
                        *o += k * x;
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d cols, d kernel)`.
fn aggregate_cols_backward<T: Real>(
    cols: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    groups: usize,
    taps: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c, oh, ow) = dims4(grad_out, "involution")?;
    let l = oh * ow;
    let cpg = c / groups;
    let mut dcols = cols.zeros_like();
    let mut dker = kernel.zeros_like();
    for bi in 0..b {
        for g in 0..groups {
            let koff = (bi * groups + g) * taps * l;
            for cg in 0..cpg {
                let ch = g * cpg + cg;
                let go = &grad_out.data()[(bi * c + ch) * l..][..l];
                let coff = (bi * c + ch) * taps * l;
                for t in 0..taps {
                    let kr = &kernel.data()[koff + t * l..][..l];
                    let dc = &mut dcols.data_mut()[coff + t * l..][..l];
                    for ((d, &gv), &k) in dc.iter_mut().zip(go).zip(kr) {
                        *d = gv * k;
                    }
                    let xr = &cols.data()[coff + t * l..][..l];
                    let dk = &mut dker.data_mut()[koff + t * l..][..l];
                    for ((d, &gv), &x) in dk.iter_mut().zip(go).zip(xr) {
                        *d += gv * x;
                    }
                }
            }
        }
    }
    Ok((dcols, dker))
}

/// Multiply-add stage of involution with an explicit kernel field.
///
/// `x: B x C x H x W`, `kernel: B x G x (kh*kw) x H' x W'`. Each output channel
/// uses its group's kernel at its own location; taps outside the image read
/// zero.
pub fn involution_aggregate<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    window: &Window,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "involution")?;
    let (oh, ow) = window.output_size(h, w, "involution")?;
    let groups = *kernel.dims().get(1).unwrap_or(&0);
    if groups == 0 || c % groups != 0 {
        return Err(Error::geometry(
            "involution",
            format!("{c} channels not divisible into {groups} groups"),
        ));
    }
    check_kernel_field(kernel, b, groups, window, oh, ow)?;
    let cols = unfold(x, window)?;
    let out = aggregate_cols(&cols, kernel, b, c, groups, window.taps(), oh * ow);
    Tensor::from_vec(&[b, c, oh, ow], out)
}

/// Gradients of [`involution_aggregate`] with respect to `x` and `kernel`.
pub fn involution_aggregate_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    window: &Window,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, c, h, w) = dims4(x, "involution")?;
    let cols = unfold(x, window)?;
    let (dcols, dker) =
        aggregate_cols_backward(&cols, kernel, grad_out, kernel.dims()[1], window.taps())?;
    Ok((fold(&dcols, c, h, w, window)?, dker))
}

impl<T: Real> Involution<T> {
    pub fn new(
        channels: usize,
        kernel: (usize, usize),
        groups: usize,
        reduction: usize,
        stride: (usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::validate(channels, kernel, groups, reduction, stride)?;
        let reduced = channels / reduction;
        let taps = kernel.0 * kernel.1;
        Ok(Involution {
            channels,
            groups,
            reduction,
            window: Window::same(kernel, stride),
            reduce: Conv2d::new(channels, reduced, (1, 1), (1, 1), (0, 0), false, rng)?,
            reduce_bn: BatchNorm::new(reduced)?,
            span: Conv2d::new(reduced, taps * groups, (1, 1), (1, 1), (0, 0), true, rng)?,
        })
    }

    fn validate(
        channels: usize,
        kernel: (usize, usize),
        groups: usize,
        reduction: usize,
        stride: (usize, usize),
    ) -> Result<()> {
        super::offsets_rect(kernel.0, kernel.1)?;
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "involution: {channels} channels not divisible by {groups} groups"
            )));
        }
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::InvalidConfig(format!(
                "involution: {channels} channels not divisible by reduction ratio {reduction}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidConfig(
                "involution: stride must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Scalars in the two linear maps of kernel generation:
    /// `C*C/r + (C/r)*taps*G + taps*G`. The batch norm between them adds
    /// `2*C/r` more.
    pub fn linear_param_count(
        channels: usize,
        reduction: usize,
        taps: usize,
        groups: usize,
    ) -> usize {
        let reduced = channels / reduction;
        channels * reduced + reduced * taps * groups + taps * groups
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (sh, sw) = self.window.stride;
        if h % sh != 0 || w % sw != 0 {
            return Err(Error::geometry(
                "involution",
                format!("spatial size {h}x{w} not divisible by stride {sh}x{sw}"),
            ));
        }
        self.window.output_size(h, w, "involution")
    }

    /// Kernel generation. Returns the kernel field `B x G x (kh*kw) x H' x W'`.
    pub fn generate_kernel(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, KernelTape<T>)> {
        let (b, c, h, w) = dims4(x, "involution")?;
        if c != self.channels {
            return Err(Error::geometry(
                "involution",
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        let (oh, ow) = self.output_size(h, w)?;
        let pooled = self.window.stride != (1, 1);
        let source: Cow<Tensor<T>> = if pooled {
            Cow::Owned(super::avgpool(x, self.window.stride)?)
        } else {
            Cow::Borrowed(x)
        };
        let (z, reduce) = self.reduce.forward(&source, mode)?;
        let (n, bn) = self.reduce_bn.forward(&z, mode)?;
        let act = n.relu();
        let (k, span) = self.span.forward(&act, mode)?;
        let kernel = k.into_shape(&[b, self.groups, self.window.taps(), oh, ow])?;
        let tape = KernelTape {
            in_dims: [b, c, h, w],
            pooled,
            reduce,
            bn,
            act,
            span,
        };
        Ok((kernel, tape))
    }

    /// Backward of [`Self::generate_kernel`]; returns the input gradient.
    pub fn generate_kernel_backward(
        &mut self,
        tape: KernelTape<T>,
        grad_kernel: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let [b, _, _, _] = tape.in_dims;
        let &[gb, groups, taps, oh, ow] = grad_kernel.dims() else {
            return Err(Error::StaleTape(
                "involution: kernel gradient must be rank 5".into(),
            ));
        };
        if gb != b || groups != self.groups || taps != self.window.taps() {
            return Err(Error::StaleTape(
                "involution: kernel gradient shape mismatch".into(),
            ));
        }
        let g = grad_kernel.reshape(&[b, groups * taps, oh, ow])?;
        let g = self.span.backward(tape.span, &g)?;
        let g = relu_backward(&tape.act, &g)?;
        let g = self.reduce_bn.backward(tape.bn, &g)?;
        let g = self.reduce.backward(tape.reduce, &g)?;
        if tape.pooled {
            let mut pool = AvgPool {
                window: self.window.stride,
            };
            pool.backward(tape.in_dims, &g)
        } else {
            Ok(g)
        }
    }

    /// Multiply-add with a caller-supplied kernel field instead of the
    /// generated one.
    pub fn forward_with_kernel(&self, x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4(x, "involution")?;
        if c != self.channels {
            return Err(Error::geometry(
                "involution",
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        let (oh, ow) = self.output_size(h, w)?;
        check_kernel_field(kernel, b, self.groups, &self.window, oh, ow)?;
        involution_aggregate(x, kernel, &self.window)
    }
}

impl<T: Real> Layer<T> for Involution<T> {
    type Tape = InvolutionTape<T>;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, InvolutionTape<T>)> {
        let (kernel, kernel_tape) = self.generate_kernel(x, mode)?;
        let (b, c, h, w) = dims4(x, "involution")?;
        let (oh, ow) = self.output_size(h, w)?;
        let cols = unfold(x, &self.window)?;
        let out = aggregate_cols(
            &cols,
            &kernel,
            b,
            c,
            self.groups,
            self.window.taps(),
            oh * ow,
        );
        let y = Tensor::from_vec(&[b, c, oh, ow], out)?;
        let tape = InvolutionTape {
            kernel_tape,
            kernel,
            cols,
            in_dims: [b, c, h, w],
        };
        Ok((y, tape))
    }

    fn backward(&mut self, tape: InvolutionTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = tape.in_dims;
        let (oh, ow) = self.output_size(h, w)?;
        if grad_out.dims() != [b, c, oh, ow] {
            return Err(Error::StaleTape(format!(
                "involution: grad {:?} does not match forward output {:?}",
                grad_out.dims(),
                [b, c, oh, ow]
            )));
        }
        let (dcols, dkernel) = aggregate_cols_backward(
            &tape.cols,
            &tape.kernel,
            grad_out,
            self.groups,
            self.window.taps(),
        )?;
        let mut dx = fold(&dcols, c, h, w, &self.window)?;
        let dx_gen = self.generate_kernel_backward(tape.kernel_tape, &dkernel)?;
        dx.add_assign(&dx_gen)?;
        Ok(dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.reduce.visit_params(&join(prefix, "reduce"), f);
        self.reduce_bn.visit_params(&join(prefix, "reduce_bn"), f);
        self.span.visit_params(&join(prefix, "span"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.reduce.visit_params_mut(&join(prefix, "reduce"), f);
        self.reduce_bn
            .visit_params_mut(&join(prefix, "reduce_bn"), f);
        self.span.visit_params_mut(&join(prefix, "span"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.reduce_bn.visit_buffers(&join(prefix, "reduce_bn"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.reduce_bn
            .visit_buffers_mut(&join(prefix, "reduce_bn"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation at every output location:
    /// y[b,k,i,j] = Σ_(u,v) H[b, g(k), (u,v), i, j] · x[b, k, i·s+u-p, j·s+v-p].
    pub(crate) fn aggregate_oracle(x: &Tensor, kernel: &Tensor, win: &Window) -> Tensor {
        let (b, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let groups = kernel.dims()[1];
        let (oh, ow) = win.output_size(h, w, "oracle").unwrap();
        let (kh, kw) = win.kernel;
        let mut y = Tensor::zeros(&[b, c, oh, ow]).unwrap();
        for bi in 0..b {
            for k in 0..c {
                let g = k * groups / c;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for u in 0..kh {
                            for v in 0..kw {
                                let ii = (i * win.stride.0 + u) as isize - win.padding.0 as isize;
                                let jj = (j * win.stride.1 + v) as isize - win.padding.1 as isize;
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    acc += kernel.get(&[bi, g, u * kw + v, i, j])
                                        * x.get(&[bi, k, ii as usize, jj as usize]);
                                }
                            }
                        }
                        y.set(&[bi, k, i, j], acc);
                    }
                }
            }
        }
        y
    }

    /// Per-location dense evaluation of kernel generation in inference mode:
    /// span_w · relu(bn(reduce_w · x_ij)) + span_b.
    fn kernel_oracle(inv: &Involution<f64>, x: &Tensor) -> Tensor {
        let (b, c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let cr = c / inv.reduction();
        let taps = inv.window().taps();
        let g = inv.groups();
        let bn = &inv.reduce_bn;
        let mut out = Tensor::zeros(&[b, g, taps, h, w]).unwrap();
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let mut a = vec![0.0; cr];
                    for (r, av) in a.iter_mut().enumerate() {
                        let z: f64 = (0..c)
                            .map(|ch| {
                                inv.reduce.weight.value.get(&[r, ch, 0, 0]) * x.get(&[bi, ch, i, j])
                            })
                            .sum();
                        let n = bn.gamma.value.data()[r] * (z - bn.running_mean.data()[r])
                            / (bn.running_var.data()[r] + bn.eps).sqrt()
                            + bn.beta.value.data()[r];
                        *av = n.max(0.0);
                    }
                    for o in 0..g * taps {
                        let v: f64 = inv.span.bias.as_ref().unwrap().value.data()[o]
                            + (0..cr)
                                .map(|r| inv.span.weight.value.get(&[o, r, 0, 0]) * a[r])
                                .sum::<f64>();
                        out.set(&[bi, o / taps, o % taps, i, j], v);
                    }
                }
            }
        }
        out
    }

    fn randomize_bn(inv: &mut Involution<f64>, rng: &mut Rng) {
        let n = inv.reduce_bn.channels();
        inv.reduce_bn.running_mean = rng.uniform(&[n], -0.5, 0.5).unwrap();
        inv.reduce_bn.running_var = rng.uniform(&[n], 0.5, 2.0).unwrap();
        inv.reduce_bn.gamma.value = rng.uniform(&[n], 0.5, 1.5).unwrap();
        inv.reduce_bn.beta.value = rng.uniform(&[n], -0.5, 0.5).unwrap();
        let sb = inv.span.bias.as_mut().unwrap();
        sb.value = rng.uniform(sb.value.dims(), -0.5, 0.5).unwrap();
    }

    #[test]
    fn zero_span_weight_gives_constant_field() {
        let mut rng = Rng::new(1);
        let mut inv = Involution::<f64>::new(8, (1, 3), 2, 2, (1, 1), &mut rng).unwrap();
        inv.span.weight.value.fill(0.0);
        let bias: Tensor = rng.uniform(&[6], -1.0, 1.0).unwrap();
        inv.span.bias.as_mut().unwrap().value = bias.clone();
        let x: Tensor = rng.uniform(&[2, 8, 1, 5], -1.0, 1.0).unwrap();
        let (k, _) = inv.generate_kernel(&x, Mode::Train).unwrap();
        for b in 0..2 {
            for g in 0..2 {
                for t in 0..3 {
                    for j in 0..5 {
                        assert_eq!(k.get(&[b, g, t, 0, j]), bias.data()[g * 3 + t]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_reduce_weight_gives_bias_field() {
        let mut rng = Rng::new(2);
        let mut inv = Involution::<f64>::new(4, (3, 3), 1, 2, (1, 1), &mut rng).unwrap();
        inv.reduce.weight.value.fill(0.0);
        let bias: Tensor = rng.uniform(&[9], -1.0, 1.0).unwrap();
        inv.span.bias.as_mut().unwrap().value = bias.clone();
        let x: Tensor = rng.uniform(&[1, 4, 3, 3], -1.0, 1.0).unwrap();
        let (k, _) = inv.generate_kernel(&x, Mode::Eval).unwrap();
        for (i, v) in k.data().iter().enumerate() {
            assert_eq!(*v, bias.data()[(i / 9) % 9]);
        }
    }

    #[test]
    fn kernel_generation_matches_dense_oracle() {
        let mut rng = Rng::new(3);
        let mut inv = Involution::<f64>::new(8, (3, 3), 2, 4, (1, 1), &mut rng).unwrap();
        randomize_bn(&mut inv, &mut rng);
        let x: Tensor = rng.uniform(&[2, 8, 3, 4], -1.0, 1.0).unwrap();
        let (k, _) = inv.generate_kernel(&x, Mode::Eval).unwrap();
        let want = kernel_oracle(&inv, &x);
        for (a, b) in k.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = Rng::new(4);
        for (c, g) in [(4, 1), (4, 2), (8, 4), (6, 3)] {
            let inv = Involution::<f64>::new(c, (3, 5), g, 1, (1, 1), &mut rng).unwrap();
            let x: Tensor = rng.uniform(&[2, c, 3, 6], -1.0, 1.0).unwrap();
            let mut k = Tensor::zeros(&[2, g, 15, 3, 6]).unwrap();
            for b in 0..2 {
                for gi in 0..g {
                    for i in 0..3 {
                        for j in 0..6 {
                            k.set(&[b, gi, 7, i, j], 1.0);
                        }
                    }
                }
            }
            assert_eq!(inv.forward_with_kernel(&x, &k).unwrap(), x);
        }
    }

    #[test]
    fn all_ones_kernel_counts_taps() {
        let mut rng = Rng::new(5);
        let inv = Involution::<f64>::new(4, (3, 3), 2, 2, (1, 1), &mut rng).unwrap();
        let x = Tensor::full(&[1, 4, 4, 4], 1.0).unwrap();
        let k = Tensor::full(&[1, 2, 9, 4, 4], 1.0).unwrap();
        let y = inv.forward_with_kernel(&x, &k).unwrap();
        for c in 0..4 {
            assert_eq!(y.get(&[0, c, 1, 1]), 9.0);
            assert_eq!(y.get(&[0, c, 0, 0]), 4.0);
            assert_eq!(y.get(&[0, c, 3, 3]), 4.0);
        }
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = Rng::new(6);
        let mut inv = Involution::<f64>::new(8, (1, 7), 4, 4, (1, 1), &mut rng).unwrap();
        let x: Tensor = rng.uniform(&[2, 8, 1, 12], -1.0, 1.0).unwrap();
        let (y, _) = inv.forward(&x, Mode::Train).unwrap();
        let mut inv2 = inv.clone();
        let (k, _) = inv2.generate_kernel(&x, Mode::Train).unwrap();
        let want = aggregate_oracle(&x, &k, inv.window());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn strided_kernel_uses_pooled_input() {
        let mut rng = Rng::new(7);
        let mut inv = Involution::<f64>::new(4, (3, 3), 2, 2, (2, 2), &mut rng).unwrap();
        let x: Tensor = rng.uniform(&[1, 4, 4, 6], -1.0, 1.0).unwrap();
        let (y, _) = inv.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.dims(), &[1, 4, 2, 3]);
        let bad: Tensor = rng.uniform(&[1, 4, 5, 6], -1.0, 1.0).unwrap();
        assert!(inv.forward(&bad, Mode::Train).is_err());
    }

    #[test]
    fn channel_sharing_within_groups() {
        let mut rng = Rng::new(8);
        let mut inv = Involution::<f64>::new(8, (1, 5), 2, 2, (1, 1), &mut rng).unwrap();
        // channels 0..4 form group 0; give them identical planes
        let mut x: Tensor = rng.uniform(&[1, 8, 1, 9], -1.0, 1.0).unwrap();
        for c in 1..4 {
            for j in 0..9 {
                let v = x.get(&[0, 0, 0, j]);
                x.set(&[0, c, 0, j], v);
            }
        }
        let (y, _) = inv.forward(&x, Mode::Train).unwrap();
        for c in 1..4 {
            for j in 0..9 {
                assert_eq!(y.get(&[0, c, 0, j]), y.get(&[0, 0, 0, j]));
            }
        }
    }

    #[test]
    fn kernel_depends_only_on_own_location() {
        let mut rng = Rng::new(9);
        let mut inv = Involution::<f64>::new(4, (1, 3), 1, 2, (1, 1), &mut rng).unwrap();
        randomize_bn(&mut inv, &mut rng);
        let x: Tensor = rng.uniform(&[1, 4, 2, 5], -1.0, 1.0).unwrap();
        let (k0, _) = inv.generate_kernel(&x, Mode::Eval).unwrap();
        let mut x1 = x.clone();
        x1.set(&[0, 2, 1, 3], 5.0);
        let (k1, _) = inv.generate_kernel(&x1, Mode::Eval).unwrap();
        for t in 0..3 {
            for i in 0..2 {
                for j in 0..5 {
                    let same = k0.get(&[0, 0, t, i, j]) == k1.get(&[0, 0, t, i, j]);
                    assert_eq!(same, (i, j) != (1, 3), "t={t} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn divisibility_checked() {
        let mut rng = Rng::new(10);
        assert!(Involution::<f64>::new(6, (3, 3), 4, 2, (1, 1), &mut rng).is_err());
        assert!(Involution::<f64>::new(6, (3, 3), 2, 4, (1, 1), &mut rng).is_err());
        assert!(Involution::<f64>::new(8, (2, 3), 2, 4, (1, 1), &mut rng).is_err());
    }

    #[test]
    fn linear_param_count_by_enumeration() {
        let mut rng = Rng::new(11);
        let inv = Involution::<f64>::new(64, (1, 7), 4, 4, (1, 1), &mut rng).unwrap();
        let linear = inv.reduce.param_count() + inv.span.param_count();
        assert_eq!(linear, 1500);
        assert_eq!(Involution::<f64>::linear_param_count(64, 4, 7, 4), 1500);
        assert_eq!(inv.param_count(), 1500 + 32);
    }
}
