//! Per-channel pointwise kernels: PReLU, batch normalization, softmax.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{BatchNormParams, PReluParams, Scalar, Tensor};

fn check_channels<T: Scalar>(input: &Tensor<T>, len: usize, what: &str) -> Result<()> {
    if input.c() != len {
        return Err(shape_err!(
            "{what} has {len} channels but input has {}",
            input.c()
        ));
    }
    Ok(())
}

/// `x` where `x >= 0`, `slope[c] * x` otherwise.
pub fn prelu<T: Scalar>(input: &Tensor<T>, params: &PReluParams<T>) -> Result<Tensor<T>> {
    prelu_slopes(input, &params.slope)
}

pub(crate) fn prelu_slopes<T: Scalar>(input: &Tensor<T>, slope: &[T]) -> Result<Tensor<T>> {
    check_channels(input, slope.len(), "prelu slope")?;
    let mut out = input.clone();
    for b in 0..input.n() {
        for (c, &a) in slope.iter().enumerate() {
            for v in out.plane_mut(b, c) {
                if *v < T::zero() {
                    *v = a * *v;
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_slope)`.
pub fn prelu_backward<T: Scalar>(
    input: &Tensor<T>,
    slope: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    check_channels(input, slope.len(), "prelu slope")?;
    if grad_out.dims() != input.dims() {
        return Err(shape_err!("prelu grad dims {:?} vs {:?}", grad_out.dims(), input.dims()));
    }
    let mut gin = grad_out.clone();
    let mut gslope = vec![T::zero(); slope.len()];
    for b in 0..input.n() {
        for (c, &a) in slope.iter().enumerate() {
            let x = input.plane(b, c);
            for (g, &xv) in gin.plane_mut(b, c).iter_mut().zip(x) {
                if xv < T::zero() {
                    gslope[c] += *g * xv;
                    *g = a * *g;
                }
            }
        }
    }
    Ok((gin, gslope))
}

/// Inference-mode normalization with the running statistics.
pub fn batchnorm_infer<T: Scalar>(input: &Tensor<T>, params: &BatchNormParams<T>) -> Result<Tensor<T>> {
    batchnorm_affine(
        input,
        &params.gamma,
        &params.beta,
        &params.running_mean,
        &params.running_var,
        params.epsilon,
    )
}

pub(crate) fn batchnorm_affine<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let c = input.c();
    for (v, what) in [(gamma, "gamma"), (beta, "beta"), (mean, "running mean"), (var, "running var")] {
        check_channels(input, v.len(), what)?;
    }
    if let Some(bad) = var.iter().position(|v| *v < T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "negative running variance in channel {bad}"
        )));
    }
    let mut out = input.clone();
    for b in 0..input.n() {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] + eps).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            for v in out.plane_mut(b, ch) {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for the inference form.
pub fn batchnorm_infer_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    check_channels(input, gamma.len(), "gamma")?;
    let c = input.c();
    let mut gin = grad_out.clone();
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for b in 0..input.n() {
        for ch in 0..c {
            let inv_std = T::one() / (var[ch] + eps).sqrt();
            let x = input.plane(b, ch);
            for (g, &xv) in gin.plane_mut(b, ch).iter_mut().zip(x) {
                ggamma[ch] += *g * (xv - mean[ch]) * inv_std;
                gbeta[ch] += *g;
                *g = *g * gamma[ch] * inv_std;
            }
        }
    }
    Ok((gin, ggamma, gbeta))
}

/// Batch statistics captured by the training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance over `n * h * w`.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

impl<T: Scalar> BatchStats<T> {
    /// Unbiased variance, the value folded into running statistics.
    pub fn unbiased_var(&self) -> Vec<T> {
        let m = self.count as f64;
        let factor = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        self.var.iter().map(|&v| v * T::of(factor)).collect()
    }
}

/// Training-mode normalization with per-batch statistics.
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, BatchStats<T>)> {
    check_channels(input, gamma.len(), "gamma")?;
    check_channels(input, beta.len(), "beta")?;
    let [n, c, h, w] = input.dims();
    let count = n * h * w;
    let mut mean = Vec::with_capacity(c);
    let mut var = Vec::with_capacity(c);
    for ch in 0..c {
        let (mut s, mut ss) = (0.0f64, 0.0f64);
        for b in 0..n {
            for &v in input.plane(b, ch) {
                let v = v.to_f64().unwrap();
                s += v;
                ss += v * v;
            }
        }
        let m = s / count as f64;
        mean.push(T::of(m));
        var.push(T::of((ss / count as f64 - m * m).max(0.0)));
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = input.clone();
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * inv_std[ch];
            let shift = beta[ch] - mean[ch] * scale;
            for v in out.plane_mut(b, ch) {
                *v = *v * scale + shift;
            }
        }
    }
    Ok((
        out,
        BatchStats {
            mean,
            var,
            inv_std,
            count,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for the training form.
pub fn batchnorm_train_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    stats: &BatchStats<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    check_channels(input, gamma.len(), "gamma")?;
    let [n, c, _, _] = input.dims();
    let m = T::of(stats.count as f64);
    let mut gin = Tensor::zeros(input.dims());
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mean, inv_std) = (stats.mean[ch], stats.inv_std[ch]);
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for b in 0..n {
            for (&dy, &x) in grad_out.plane(b, ch).iter().zip(input.plane(b, ch)) {
                sum_dy += dy;
                sum_dy_xhat += dy * (x - mean) * inv_std;
            }
        }
        ggamma[ch] = sum_dy_xhat;
        gbeta[ch] = sum_dy;
        let k = gamma[ch] * inv_std / m;
        for b in 0..n {
            let x = input.plane(b, ch).to_vec();
            let dy = grad_out.plane(b, ch).to_vec();
            for ((g, xv), dyv) in gin.plane_mut(b, ch).iter_mut().zip(x).zip(dy) {
                let xhat = (xv - mean) * inv_std;
                *g = k * (m * dyv - sum_dy - xhat * sum_dy_xhat);
            }
        }
    }
    Ok((gin, ggamma, gbeta))
}

/// Per-pixel softmax across channels, max-subtracted.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims();
    if c == 0 {
        return Err(shape_err!("softmax over zero channels"));
    }
    let hw = h * w;
    let mut out = input.clone();
    let data = out.data_mut();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let idx = |ch: usize| base + ch * hw + p;
            let max = (0..c).map(|ch| data[idx(ch)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for ch in 0..c {
                let e = (data[idx(ch)] - max).exp();
                data[idx(ch)] = e;
                total += e;
            }
            for ch in 0..c {
                data[idx(ch)] = data[idx(ch)] / total;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`softmax_channels`] given its output `probs`.
pub fn softmax_channels_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if probs.dims() != grad_out.dims() {
        return Err(shape_err!("softmax grad dims {:?} vs {:?}", grad_out.dims(), probs.dims()));
    }
    let [n, c, h, w] = probs.dims();
    let hw = h * w;
    let mut gin = Tensor::zeros(probs.dims());
    let (y, dy) = (probs.data(), grad_out.data());
    let g = gin.data_mut();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let dot: T = (0..c).map(|ch| y[base + ch * hw + p] * dy[base + ch * hw + p]).sum();
            for ch in 0..c {
                let i = base + ch * hw + p;
                g[i] = y[i] * (dy[i] - dot);
            }
        }
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new([1, 1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn prelu_definition() {
        let x = Tensor::<f32>::from_fn([1, 2, 2, 2], |_, c, h, w| (c + h + w) as f32);
        assert_eq!(prelu(&x, &PReluParams::new(2, 0.25)).unwrap(), x);
        let out = prelu(&scalar(-2.0), &PReluParams { slope: vec![0.25] }).unwrap();
        assert_eq!(out.data(), &[-0.5]);
        let out = prelu(&scalar(-4.0), &PReluParams { slope: vec![0.0] }).unwrap();
        assert_eq!(out.data(), &[0.0]);
        assert!(prelu(&x, &PReluParams::new(3, 0.25)).is_err());
    }

    #[test]
    fn prelu_slope_gradient() {
        let (_, gs) = prelu_backward(&scalar(-2.0), &[0.25], &scalar(1.0)).unwrap();
        assert_eq!(gs, vec![-2.0]);
    }

    #[test]
    fn batchnorm_cases() {
        let x = Tensor::<f64>::from_fn([1, 1, 2, 3], |_, _, h, w| h as f64 * 1.7 - w as f64);
        let mut p = BatchNormParams::identity(1);
        p.epsilon = 1e-12;
        assert!(batchnorm_infer(&x, &p).unwrap().max_abs_diff(&x) < 1e-6);

        p.running_mean = vec![0.7];
        p.beta = vec![-3.0];
        let out = batchnorm_infer(&Tensor::full([1, 1, 2, 2], 0.7), &p).unwrap();
        assert!(out.data().iter().all(|&v| v == -3.0));

        let p = BatchNormParams {
            gamma: vec![2.0],
            beta: vec![1.0],
            running_mean: vec![1.0],
            running_var: vec![4.0],
            epsilon: 0.0,
        };
        assert_eq!(batchnorm_infer(&scalar(3.0), &p).unwrap().data(), &[3.0]);

        let mut bad = BatchNormParams::<f64>::identity(1);
        bad.running_var = vec![-1.0];
        assert!(matches!(batchnorm_infer(&scalar(1.0), &bad), Err(Error::InvalidArgument(_))));
        assert!(batchnorm_infer(&x, &BatchNormParams::identity(2)).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let x = Tensor::<f64>::from_fn([2, 3, 4, 4], |n, c, h, w| (n * 7 + c * 3 + h * w) as f64 * 0.1 + c as f64);
        let (out, stats) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3], 0.0).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|b| out.plane(b, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
        assert_eq!(stats.count, 32);
    }

    #[test]
    fn softmax_cases() {
        let x = Tensor::<f64>::full([1, 4, 2, 2], 0.3);
        assert!(softmax_channels(&x).unwrap().data().iter().all(|&p| (p - 0.25).abs() < 1e-12));

        let x = Tensor::<f32>::new([1, 2, 1, 1], vec![1000.0, 0.0]).unwrap();
        let p = softmax_channels(&x).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-6 && p.data()[1].abs() < 1e-6);
        assert!(p.all_finite());

        let x = Tensor::<f64>::new([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let p = softmax_channels(&x).unwrap();
        for (got, want) in p.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-4);
        }
    }
}
