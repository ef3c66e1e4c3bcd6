//! Channel concatenation, 2x2 max pooling and bilinear resizing.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Concatenates along channels, preserving input order.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of an empty list".into()))?;
    let [n, _, h, w] = first.dims();
    for t in inputs {
        if t.n() != n || t.h() != h || t.w() != w {
            return Err(shape_err!(
                "concat inputs disagree: {:?} vs {:?}",
                t.dims(),
                first.dims()
            ));
        }
    }
    let total: usize = inputs.iter().map(|t| t.c()).sum();
    let mut data = Vec::with_capacity(n * total * h * w);
    for b in 0..n {
        for t in inputs {
            data.extend_from_slice(t.sample(b));
        }
    }
    Tensor::new([n, total, h, w], data)
}

/// Splits `grad` back into pieces with the given channel counts.
pub fn concat_channels_backward<T: Scalar>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    if channels.iter().sum::<usize>() != grad.c() {
        return Err(shape_err!("concat split {channels:?} does not cover {} channels", grad.c()));
    }
    let mut start = 0;
    channels
        .iter()
        .map(|&c| {
            let piece = grad.slice_channels(start, c);
            start += c;
            piece
        })
        .collect()
}

/// Stride-2 2x2 max pooling; output spatial dims are halved (floor).
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2x2_with_indices(input).map(|(out, _)| out)
}

/// Also returns, per output element, the flat input index it was taken
/// from. Ties go to the first element in row-major window order.
pub fn maxpool2x2_with_indices<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims();
    if h < 2 || w < 2 {
        return Err(shape_err!("maxpool2x2 needs at least 2x2 input, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    let data = input.data();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    idx.push(best);
                }
            }
        }
    }
    Ok((Tensor::new([n, c, oh, ow], out)?, idx))
}

pub fn maxpool2x2_backward<T: Scalar>(
    input_dims: [usize; 4],
    indices: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if indices.len() != grad_out.numel() {
        return Err(shape_err!("maxpool indices do not match gradient"));
    }
    let mut gin = Tensor::zeros(input_dims);
    let g = gin.data_mut();
    for (&i, &dy) in indices.iter().zip(grad_out.data()) {
        g[i] += dy;
    }
    Ok(gin)
}

/// Source taps `(i0, i1, frac)` for each output coordinate, half-pixel
/// centers: sample at `(i + 0.5) * in / out - 0.5`, clamped to the input.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "bilinear target {out_h}x{out_w} must be non-empty"
        )));
    }
    let [n, c, h, w] = input.dims();
    let ys = bilinear_taps(h, out_h);
    let xs = bilinear_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let fx = T::of(fx);
                    let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

pub fn bilinear_resize_backward<T: Scalar>(input_dims: [usize; 4], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_dims;
    let [gn, gc, out_h, out_w] = grad_out.dims();
    if (gn, gc) != (n, c) {
        return Err(shape_err!("bilinear grad dims {:?} vs input {:?}", grad_out.dims(), input_dims));
    }
    let ys = bilinear_taps(h, out_h);
    let xs = bilinear_taps(w, out_w);
    let mut gin = Tensor::zeros(input_dims);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.plane(b, ch).to_vec();
            let dst = gin.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let fx = T::of(fx);
                    let d = g[oy * out_w + ox];
                    dst[y0 * w + x0] += d * (T::one() - fy) * (T::one() - fx);
                    dst[y0 * w + x1] += d * (T::one() - fy) * fx;
                    dst[y1 * w + x0] += d * fy * (T::one() - fx);
                    dst[y1 * w + x1] += d * fy * fx;
                }
            }
        }
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_counts_and_order() {
        let parts: Vec<Tensor<f32>> = (0..4).map(|i| Tensor::full([1, 16, 2, 2], i as f32)).collect();
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        let out = concat_channels(&refs).unwrap();
        assert_eq!(out.c(), 64);
        assert_eq!(out.at(0, 17, 0, 0), 1.0);

        let a = Tensor::<f32>::zeros([1, 16, 3, 3]);
        let b = Tensor::zeros([1, 64, 3, 3]);
        let c = Tensor::zeros([1, 128, 3, 3]);
        assert_eq!(concat_channels(&[&a, &b, &c]).unwrap().c(), 208);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        assert!(concat_channels::<f32>(&[]).is_err());
        assert!(concat_channels(&[&a, &Tensor::zeros([1, 2, 3, 4])]).is_err());
    }

    #[test]
    fn maxpool_cases() {
        let x = Tensor::<f32>::full([1, 2, 6, 4], 3.5);
        let out = maxpool2x2(&x).unwrap();
        assert_eq!(out.dims(), [1, 2, 3, 2]);
        assert!(out.data().iter().all(|&v| v == 3.5));

        let x = Tensor::<f32>::new([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().data(), &[4.0]);

        let x = Tensor::<f32>::new([1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().data(), &[5., 7., 13., 15.]);
        assert!(maxpool2x2(&Tensor::<f32>::zeros([1, 1, 1, 4])).is_err());
    }

    #[test]
    fn bilinear_cases() {
        let x = Tensor::<f32>::full([1, 2, 3, 5], 0.42);
        let out = bilinear_resize(&x, 7, 2).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));

        let x = Tensor::<f32>::from_fn([1, 1, 3, 4], |_, _, h, w| (h * 4 + w) as f32);
        assert_eq!(bilinear_resize(&x, 3, 4).unwrap(), x);

        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0., 1., 0., 1.]).unwrap();
        let out = bilinear_resize(&x, 4, 4).unwrap();
        for r in 0..4 {
            assert_eq!(&out.data()[r * 4..r * 4 + 4], &[0.0, 0.25, 0.75, 1.0]);
        }
        assert!(bilinear_resize(&x, 0, 4).is_err());
    }
}
