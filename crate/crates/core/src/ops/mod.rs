//! Forward kernels and their hand-written backward passes.

mod activation;
mod conv;
mod spatial;

pub use activation::{
    batchnorm_infer, batchnorm_infer_backward, batchnorm_train, batchnorm_train_backward,
    prelu, prelu_backward, softmax_channels, softmax_channels_backward, BatchStats,
};
pub(crate) use activation::{batchnorm_affine, prelu_slopes};
pub use conv::{conv2d, conv2d_backward, conv2d_naive, ConvGrads};
pub use spatial::{
    bilinear_resize, bilinear_resize_backward, concat_channels, concat_channels_backward,
    maxpool2x2, maxpool2x2_backward, maxpool2x2_with_indices,
};

use crate::tensor::Scalar;

/// `c = a · b + beta * c` where `a` is `m x k` and `b` is `k x n`, both
/// row-major unless the matching `*_t` flag says the slice holds the
/// transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    beta: T,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm extents");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above bounds every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
