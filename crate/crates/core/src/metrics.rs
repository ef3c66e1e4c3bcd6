//! Confusion-matrix based segmentation metrics.

use crate::error::{shape_err, Error, Result};
use crate::labels::{LabelMap, IGNORE_LABEL};

/// `counts[truth * k + pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub miou: f64,
    /// IoU per class; `None` for classes absent from both truth and prediction.
    pub per_class: Vec<Option<f64>>,
    pub pixel_accuracy: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel whose truth label is not [`IGNORE_LABEL`].
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.dims() != truth.dims() {
            return Err(shape_err!("prediction {:?} vs truth {:?}", pred.dims(), truth.dims()));
        }
        let k = self.classes;
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            if t == IGNORE_LABEL {
                continue;
            }
            for label in [t, p] {
                if label as usize >= k {
                    return Err(Error::LabelOutOfRange { label, classes: k });
                }
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::InvalidArgument(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Mean IoU over classes present in truth or prediction. Errors when no
    /// pixel was counted.
    pub fn miou(&self) -> Result<MiouReport> {
        let k = self.classes;
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidArgument("mIoU of an empty confusion matrix".into()));
        }
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.count(c, c);
                let row: u64 = (0..k).map(|p| self.count(c, p)).sum();
                let col: u64 = (0..k).map(|t| self.count(t, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let correct: u64 = (0..k).map(|c| self.count(c, c)).sum();
        Ok(MiouReport {
            miou: present.iter().sum::<f64>() / present.len() as f64,
            per_class,
            pixel_accuracy: correct as f64 / total as f64,
        })
    }
}
