//! Dense row-major tensors.
//!
//! Everything in the crate indexes through [`Shape::offset`], so a tensor of
//! dims `[d0, d1, .., dn]` stores element `(i0, .., in)` at
//! `((i0 * d1 + i1) * d2 + ..) * dn + in`.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Largest rank any layer needs: batch x group x channel-per-group x taps x H x W.
pub const MAX_RANK: usize = 6;

/// Scalar type usable by every tensor and layer.
///
/// `f64` is used for gradient checks, `f32` for training runs.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn to_f64(self) -> f64;

    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices, see `matrixmultiply::dgemm`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on contiguous row-major buffers.
///
/// `op(a)` is `m x k`; when `trans_a` is set, `a` is stored as `k x m`.
/// Likewise `op(b)` is `k x n`, stored as `n x k` when `trans_b` is set.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: lengths asserted above match the stride layout.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "rank must be between 1 and 6",
            });
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "every extent must be at least 1",
            });
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major linear offset of a multi-index.
    #[inline]
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.0.len());
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.0) {
            debug_assert!(i < d);
            off = off * d + i;
        }
        off
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "data length does not match element count",
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(&mut f).collect();
        Ok(Tensor { shape, data })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.shape.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.shape.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        self.clone().into_shape(dims)
    }

    pub fn into_shape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.dims().to_vec(),
                right: dims.to_vec(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (&[m, k], &[k2, n]) = (self.dims(), rhs.dims()) else {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.dims().to_vec(),
                right: rhs.dims().to_vec(),
            });
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.dims().to_vec(),
                right: rhs.dims().to_vec(),
            });
        }
        let mut out = Tensor::zeros(&[m, n])?;
        gemm(
            false,
            false,
            m,
            k,
            n,
            T::one(),
            &self.data,
            &rhs.data,
            T::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    fn zip_with(&self, rhs: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(rhs, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, rhs: &Self, op: &'static str) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.dims().to_vec(),
                right: rhs.dims().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `max(v, 0)`; NaN passes through.
    pub fn relu(&self) -> Self {
        self.map(|v| if v < T::zero() { T::zero() } else { v })
    }

    /// 0/1 mask of `relu`'s derivative; the derivative at 0 is taken as 0.
    pub fn relu_grad(&self) -> Self {
        self.map(|v| if v > T::zero() { T::one() } else { T::zero() })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += rhs`.
    pub fn add_assign(&mut self, rhs: &Self) -> Result<()> {
        self.check_same_shape(rhs, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// Sum of `f(x)` over `xs` with eight independent accumulators, so the loop
/// vectorizes. The summation order differs from a sequential sum.
#[inline]
pub(crate) fn lane_sum_by<T: Real>(xs: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            acc[i] += f(c[i]);
        }
    }
    let mut total = tail.iter().fold(T::zero(), |a, &v| a + f(v));
    for a in acc {
        total += a;
    }
    total
}

#[inline]
pub(crate) fn lane_dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.into_iter().fold(tail, |s, v| s + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
        let mut out = Tensor::zeros(&[m, n]).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out.set(&[i, j], acc);
            }
        }
        out
    }

    #[test]
    fn reshape_preserves_order() {
        let t = Tensor::from_vec(&[6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.reshape(&[2, 3]).unwrap();
        assert_eq!(r.dims(), &[2, 3]);
        assert_eq!(r.get(&[1, 0]), 4.0);
        assert_eq!(r.data(), t.data());
        let back = r.reshape(&[3, 2]).unwrap().reshape(&[2, 3]).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn reshape_count_mismatch() {
        let t = Tensor::<f64>::zeros(&[4]).unwrap();
        assert!(matches!(
            t.reshape(&[2, 3]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn shape_rejects_bad_dims() {
        assert!(Shape::new(&[]).is_err());
        assert!(Shape::new(&[2, 0]).is_err());
        assert!(Shape::new(&[1; 7]).is_err());
        assert_eq!(Shape::new(&[1; 6]).unwrap().numel(), 1);
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&eye).unwrap(), a);
        let ones = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
        assert!(a.matmul(&Tensor::zeros(&[3, 1]).unwrap()).is_err());
    }

    #[test]
    fn matmul_matches_loop_oracle() {
        let mut rng = Rng::new(11);
        let a: Tensor = rng.uniform(&[5, 7], -1.0, 1.0).unwrap();
        let b: Tensor = rng.uniform(&[7, 3], -1.0, 1.0).unwrap();
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    fn transpose(t: &Tensor) -> Tensor {
        let (r, c) = (t.dims()[0], t.dims()[1]);
        Tensor::from_fn(&[c, r], |i| t.get(&[i % r, i / r])).unwrap()
    }

    #[test]
    fn gemm_transpose_flags() {
        let mut rng = Rng::new(3);
        let a: Tensor = rng.uniform(&[4, 6], -1.0, 1.0).unwrap();
        let b: Tensor = rng.uniform(&[6, 5], -1.0, 1.0).unwrap();
        let expect = naive_matmul(&a, &b);
        let (at, bt) = (transpose(&a), transpose(&b));
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let lhs = if ta { &at } else { &a };
            let rhs = if tb { &bt } else { &b };
            let mut c = vec![1.0; 20];
            gemm(ta, tb, 4, 6, 5, 1.0, lhs.data(), rhs.data(), 0.0, &mut c);
            for (x, y) in c.iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-12, "flags {ta} {tb}");
            }
        }
    }

    #[test]
    fn elementwise_ops() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(t.relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t.relu_grad().data(), &[0.0, 0.0, 1.0]);
        assert_eq!(t.add(&t.zeros_like()).unwrap(), t);
        assert_eq!(t.scale(2.0).data(), &[-2.0, 0.0, 4.0]);
        assert!(t.add(&Tensor::zeros(&[4]).unwrap()).is_err());

        let mut rng = Rng::new(5);
        let a: Tensor = rng.uniform(&[3, 4], -2.0, 2.0).unwrap();
        let b: Tensor = rng.uniform(&[3, 4], -2.0, 2.0).unwrap();
        let p = a.mul(&b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(p.get(&[i, j]), a.get(&[i, j]) * b.get(&[i, j]));
            }
        }
        assert_eq!(a.sub(&a).unwrap().max_abs(), 0.0);
    }

    fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..=MAX_RANK)
    }

    proptest! {
        #[test]
        fn reshape_roundtrip(dims in dims_strategy(), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let t: Tensor = rng.uniform(&dims, -1.0, 1.0).unwrap();
            let flat = t.reshape(&[t.numel()]).unwrap();
            prop_assert_eq!(flat.reshape(&dims).unwrap(), t);
        }

        #[test]
        fn relu_idempotent(v in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            let t = Tensor::from_vec(&[v.len()], v).unwrap();
            prop_assert_eq!(t.relu().relu(), t.relu());
            prop_assert!(t.relu().all_finite());
        }

        #[test]
        fn matmul_associative(m in 1usize..16, k in 1usize..16, n in 1usize..16, p in 1usize..16, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a: Tensor = rng.uniform(&[m, k], -1.0, 1.0).unwrap();
            let b: Tensor = rng.uniform(&[k, n], -1.0, 1.0).unwrap();
            let c: Tensor = rng.uniform(&[n, p], -1.0, 1.0).unwrap();
            let l = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let r = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = l.max_abs().max(1.0);
            for (x, y) in l.data().iter().zip(r.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }
}
