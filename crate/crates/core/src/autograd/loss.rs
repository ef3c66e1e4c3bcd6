use crate::error::{shape_err, Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Scalar, Tensor};

/// How per-pixel cross-entropy terms are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Plain sum over non-ignored pixels.
    Sum,
    /// Sum divided by the number of non-ignored pixels.
    #[default]
    Mean,
}

/// Loss value plus its gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub grad: Tensor<T>,
    /// Non-ignored pixels that contributed.
    pub pixels: usize,
}

/// Per-pixel softmax cross-entropy. The gradient is `softmax - onehot` on
/// counted pixels (scaled by the reduction) and exactly zero on ignored ones.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    ignore_index: u8,
    reduction: Reduction,
) -> Result<LossOutput<T>> {
    let [n, k, h, w] = logits.dims();
    if labels.dims() != [n, h, w] {
        return Err(shape_err!(
            "labels {:?} do not match logits {:?}",
            labels.dims(),
            logits.dims()
        ));
    }
    let hw = h * w;
    let x = logits.data();
    let mut grad = Tensor::zeros(logits.dims());
    let g = grad.data_mut();
    let mut loss = 0.0f64;
    let mut pixels = 0usize;
    let mut probs = vec![0.0f64; k];
    for b in 0..n {
        for p in 0..hw {
            let label = labels.data()[b * hw + p];
            if label == ignore_index {
                continue;
            }
            if label as usize >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let idx = |c: usize| (b * k + c) * hw + p;
            let max = (0..k).map(|c| x[idx(c)].to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (x[idx(c)].to_f64().unwrap() - max).exp();
                total += *pr;
            }
            loss += total.ln() - (x[idx(label as usize)].to_f64().unwrap() - max);
            for (c, pr) in probs.iter().enumerate() {
                let onehot = if c == label as usize { 1.0 } else { 0.0 };
                g[idx(c)] = T::of(pr / total - onehot);
            }
            pixels += 1;
        }
    }
    if reduction == Reduction::Mean && pixels > 0 {
        loss /= pixels as f64;
        let scale = T::of(1.0 / pixels as f64);
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok(LossOutput { loss, grad, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::IGNORE_LABEL;

    #[test]
    fn peaked_logits_give_near_zero_loss() {
        let logits = Tensor::<f64>::from_fn([1, 3, 2, 2], |_, c, h, _| if c == h { 60.0 } else { 0.0 });
        let labels = LabelMap::new([1, 2, 2], vec![0, 0, 1, 1]).unwrap();
        let out = cross_entropy(&logits, &labels, IGNORE_LABEL, Reduction::Sum).unwrap();
        assert!(out.loss < 1e-20);
    }

    #[test]
    fn uniform_logits_give_p_ln_k() {
        let logits = Tensor::<f64>::zeros([2, 5, 3, 3]);
        let mut labels = LabelMap::filled([2, 3, 3], 4);
        labels.data_mut()[..4].fill(IGNORE_LABEL);
        let out = cross_entropy(&logits, &labels, IGNORE_LABEL, Reduction::Sum).unwrap();
        assert_eq!(out.pixels, 14);
        assert!((out.loss - 14.0 * 5f64.ln()).abs() < 1e-12);
        let mean = cross_entropy(&logits, &labels, IGNORE_LABEL, Reduction::Mean).unwrap();
        assert!((mean.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_value() {
        let logits = Tensor::<f64>::new([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let labels = LabelMap::new([1, 1, 1], vec![2]).unwrap();
        let out = cross_entropy(&logits, &labels, IGNORE_LABEL, Reduction::Sum).unwrap();
        assert!((out.loss - 0.40761).abs() < 1e-4);
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_vanish_on_ignored() {
        let logits = Tensor::<f64>::from_fn([1, 4, 2, 3], |_, c, h, w| (c * 7 + h * 3 + w) as f64 * 0.13 - 1.0);
        let labels = LabelMap::new([1, 2, 3], vec![0, 1, IGNORE_LABEL, 3, 2, IGNORE_LABEL]).unwrap();
        let out = cross_entropy(&logits, &labels, IGNORE_LABEL, Reduction::Sum).unwrap();
        for p in 0..6 {
            let s: f64 = (0..4).map(|c| out.grad.data()[c * 6 + p]).sum();
            assert!(s.abs() < 1e-12);
            if labels.data()[p] == IGNORE_LABEL {
                assert!((0..4).all(|c| out.grad.data()[c * 6 + p] == 0.0));
            }
        }
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::<f32>::zeros([1, 2, 1, 1]);
        let labels = LabelMap::new([1, 1, 1], vec![2]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, &labels, IGNORE_LABEL, Reduction::Mean),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }
}
