//! Dense rank-4 tensors in `(n, c, h, w)` layout and the parameter bundles
//! the numeric kernels consume.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

use crate::error::{shape_err, Error, Result};

/// Floating point element type. Storage is `f32` for models; `f64` is used for
/// gradient checking.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    /// `c = alpha * a · b + beta * c` on row/column strided matrices.
    ///
    /// # Safety
    /// Strides and extents must stay within the backing slices; the safe
    /// wrappers in `ops::gemm` check this.
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

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense `(n, c, h, w)` array stored contiguously in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(shape_err!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Self { dims, data }
    }

    /// A per-channel vector stored as `(1, len, 1, 1)`.
    pub fn vector(values: Vec<T>) -> Self {
        Self {
            dims: [1, values.len(), 1, 1],
            data: values,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    /// The `h * w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Channels `start..start + len` of every sample.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims;
        if start + len > c || len == 0 {
            return Err(shape_err!(
                "channel slice {start}..{} out of {c} channels",
                start + len
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            data.extend_from_slice(&self.data[base..base + len * hw]);
        }
        Ok(Self {
            dims: [n, len, h, w],
            data,
        })
    }

    /// Adds `other` elementwise in place.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(shape_err!("cannot add {:?} to {:?}", other.dims, self.dims));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on different dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl ConvParams {
    pub fn new(kh: usize, kw: usize) -> Self {
        Self {
            kernel: (kh, kw),
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
            groups: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    /// `p = ((k - 1) * d) / 2` per axis, which preserves spatial size at
    /// stride 1 for odd kernels.
    pub fn same_padding(mut self) -> Self {
        self.padding = (
            (self.kernel.0 - 1) * self.dilation.0 / 2,
            (self.kernel.1 - 1) * self.dilation.1 / 2,
        );
        self
    }

    /// Kernel footprint once dilated, `(k - 1) * d + 1` per axis.
    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            (self.kernel.0 - 1) * self.dilation.0 + 1,
            (self.kernel.1 - 1) * self.dilation.1 + 1,
        )
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::InvalidArgument("kernel extent must be positive".into()));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 || self.dilation.0 == 0 || self.dilation.1 == 0 {
            return Err(Error::InvalidArgument(
                "stride and dilation must be at least 1".into(),
            ));
        }
        let (eh, ew) = self.effective_kernel();
        let (ph, pw) = (h + 2 * self.padding.0, w + 2 * self.padding.1);
        if eh > ph || ew > pw {
            return Err(shape_err!(
                "effective kernel {eh}x{ew} exceeds padded input {ph}x{pw}"
            ));
        }
        Ok(((ph - eh) / self.stride.0 + 1, (pw - ew) / self.stride.1 + 1))
    }

    /// Number of convolution scalars (weights plus bias) for the given channels.
    pub fn param_count(&self, in_c: usize, out_c: usize) -> usize {
        (self.kernel.0 * self.kernel.1 * in_c / self.groups + usize::from(self.bias)) * out_c
    }

    /// Multiply-accumulates per output position.
    pub fn macs_per_position(&self, in_c: usize, out_c: usize) -> usize {
        self.kernel.0 * self.kernel.1 * in_c / self.groups * out_c
    }
}

/// Per-channel PReLU slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct PReluParams<T = f32> {
    pub slope: Vec<T>,
}

impl<T: Scalar> PReluParams<T> {
    pub fn new(channels: usize, init: T) -> Self {
        Self {
            slope: vec![init; channels],
        }
    }
}

/// Per-channel batch normalization state.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::of(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f32>::new([1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Tensor::<f32>::new([1, 2, 2, 2], vec![0.0; 8]).is_ok());
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::<f32>::from_fn([2, 3, 4, 5], |n, c, h, w| (((n * 3 + c) * 4 + h) * 5 + w) as f32);
        for (i, v) in t.data().iter().enumerate() {
            assert_eq!(*v, i as f32);
        }
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
    }

    #[test]
    fn slice_channels_picks_contiguous_block() {
        let t = Tensor::<f32>::from_fn([2, 4, 1, 2], |n, c, _, w| (n * 100 + c * 10 + w) as f32);
        let s = t.slice_channels(1, 2).unwrap();
        assert_eq!(s.dims(), [2, 2, 1, 2]);
        assert_eq!(s.data(), &[10., 11., 20., 21., 110., 111., 120., 121.]);
        assert!(t.slice_channels(3, 2).is_err());
    }

    #[test]
    fn conv_output_shape_formula() {
        let p = ConvParams::new(3, 3).stride(2, 2).padding(1, 1);
        assert_eq!(p.output_hw(4, 4).unwrap(), (2, 2));
        let p = ConvParams::new(3, 1).dilation(24, 1).same_padding();
        assert_eq!(p.padding, (24, 0));
        assert_eq!(p.output_hw(8, 8).unwrap(), (8, 8));
        assert!(ConvParams::new(5, 5).output_hw(3, 3).is_err());
    }
}
