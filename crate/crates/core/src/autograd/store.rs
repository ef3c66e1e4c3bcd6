use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// What a stored tensor is used for. Cost accounting separates convolution
/// scalars from the auxiliary normalization/activation ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
    PReluSlope,
}

impl ParamKind {
    pub fn is_conv(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::ConvBias)
    }

    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }

    /// Best guess from a parameter name suffix, for stores read from disk.
    pub fn from_name(name: &str) -> Option<Self> {
        let suffix = name.rsplit('.').next()?;
        Some(match suffix {
            "weight" => ParamKind::ConvWeight,
            "bias" => ParamKind::ConvBias,
            "gamma" => ParamKind::BnGamma,
            "beta" => ParamKind::BnBeta,
            "running_mean" => ParamKind::BnRunningMean,
            "running_var" => ParamKind::BnRunningVar,
            "slope" => ParamKind::PReluSlope,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
    pub kind: ParamKind,
    grad_ready: bool,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn has_grad(&self) -> bool {
        self.grad_ready
    }
}

/// Named weight tensors with gradient slots, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.dims());
        self.entries.insert(
            name,
            ParamEntry {
                value,
                grad,
                trainable: kind.is_trainable(),
                kind,
                grad_ready: false,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entry(name).map(|e| &e.value)
    }

    /// Replaces a value, keeping dims fixed.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        if e.value.dims() != value.dims() {
            return Err(shape_err!(
                "parameter `{name}` has dims {:?}, got {:?}",
                e.value.dims(),
                value.dims()
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.trainable = trainable)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(T::zero());
            e.grad_ready = false;
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        if e.grad.dims() != grad.dims() {
            return Err(Error::Autograd(format!(
                "gradient for `{name}` has dims {:?}, parameter has {:?}",
                grad.dims(),
                e.grad.dims()
            )));
        }
        e.grad.add_assign(grad)?;
        e.grad_ready = true;
        Ok(())
    }

    /// Scalars in convolution weights and biases.
    pub fn conv_param_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind.is_conv())
            .map(|e| e.value.numel())
            .sum()
    }

    /// Non-convolution scalars: BN affine and running statistics, PReLU slopes.
    pub fn aux_param_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| !e.kind.is_conv())
            .map(|e| e.value.numel())
            .sum()
    }

    /// Scalars whose name starts with `prefix` and that belong to convolutions.
    pub fn conv_param_count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, e)| e.kind.is_conv() && k.starts_with(prefix))
            .map(|(_, e)| e.value.numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            value: e.value.cast(),
                            grad: e.grad.cast(),
                            trainable: e.trainable,
                            kind: e.kind,
                            grad_ready: e.grad_ready,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Sets every convolution weight to `value` and every bias to zero.
    pub fn fill_conv(&mut self, weight: T, bias: T) {
        for e in self.entries.values_mut() {
            match e.kind {
                ParamKind::ConvWeight => e.value.data_mut().fill(weight),
                ParamKind::ConvBias => e.value.data_mut().fill(bias),
                _ => {}
            }
        }
    }

    /// Re-draws every trainable entry from `N(0, std)`.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R, std: f64) {
        let normal = Normal::new(0.0, std).expect("finite std");
        for e in self.entries.values_mut() {
            if e.trainable {
                for v in e.value.data_mut() {
                    *v = T::of(normal.sample(rng));
                }
            }
        }
    }

    /// Adds `N(0, std)` noise to every trainable entry.
    pub fn perturb<R: Rng>(&mut self, rng: &mut R, std: f64) {
        let normal = Normal::new(0.0, std).expect("finite std");
        for e in self.entries.values_mut() {
            if e.trainable {
                for v in e.value.data_mut() {
                    *v = *v + T::of(normal.sample(rng));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a.weight", Tensor::zeros([1, 1, 1, 1]), ParamKind::ConvWeight).unwrap();
        assert!(s.insert("a.weight", Tensor::zeros([1, 1, 1, 1]), ParamKind::ConvWeight).is_err());
    }

    #[test]
    fn grads_track_value_dims() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a.weight", Tensor::zeros([2, 1, 3, 1]), ParamKind::ConvWeight).unwrap();
        assert_eq!(s.entry("a.weight").unwrap().grad.dims(), [2, 1, 3, 1]);
        assert!(s.accumulate_grad("a.weight", &Tensor::zeros([1, 1, 1, 1])).is_err());
        s.accumulate_grad("a.weight", &Tensor::full([2, 1, 3, 1], 1.0)).unwrap();
        s.accumulate_grad("a.weight", &Tensor::full([2, 1, 3, 1], 1.0)).unwrap();
        assert!(s.entry("a.weight").unwrap().grad.data().iter().all(|&g| g == 2.0));
        s.zero_grad();
        assert!(!s.entry("a.weight").unwrap().has_grad());
    }

    #[test]
    fn kind_from_name() {
        assert_eq!(ParamKind::from_name("x.bn.running_var"), Some(ParamKind::BnRunningVar));
        assert_eq!(ParamKind::from_name("x.pw.weight"), Some(ParamKind::ConvWeight));
        assert_eq!(ParamKind::from_name("nonsense"), None);
    }
}
