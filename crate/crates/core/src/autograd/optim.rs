use indexmap::IndexMap;

use crate::autograd::store::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Adam moments and hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
    pub step: u64,
    first: IndexMap<String, Tensor<T>>,
    second: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(base_lr: f64) -> Self {
        Self::with_betas(base_lr, 0.9, 0.999, 1e-8).expect("default betas are valid")
    }

    pub fn with_betas(base_lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidArgument(format!(
                "Adam betas must lie in [0, 1), got {beta1} and {beta2}"
            )));
        }
        Ok(Self {
            beta1,
            beta2,
            epsilon,
            base_lr,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        })
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.first.get(name)
    }
}

/// One bias-corrected Adam update of every trainable entry at rate `lr`.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if let Some((name, _)) = store.iter().find(|(_, e)| e.trainable && !e.has_grad()) {
        return Err(Error::MissingGradient(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, entry) in store.iter_mut() {
        if !entry.trainable {
            continue;
        }
        let dims = entry.value.dims();
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(dims));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(dims));
        for (((p, &g), m), v) in entry
            .value
            .data_mut()
            .iter_mut()
            .zip(entry.grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g.to_f64().unwrap();
            let mf = b1 * m.to_f64().unwrap() + (1.0 - b1) * g;
            let vf = b2 * v.to_f64().unwrap() + (1.0 - b2) * g * g;
            *m = T::of(mf);
            *v = T::of(vf);
            let update = lr * (mf / c1) / ((vf / c2).sqrt() + state.epsilon);
            *p = T::of(p.to_f64().unwrap() - update);
        }
    }
    Ok(())
}

/// `base_lr * (1 - iter / max_iter) ^ power`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub max_iter: u64,
    pub power: f64,
}

impl PolySchedule {
    pub fn new(base_lr: f64, max_iter: u64) -> Result<Self> {
        if !(base_lr > 0.0) || max_iter == 0 {
            return Err(Error::InvalidArgument(format!(
                "poly schedule needs base_lr > 0 and max_iter > 0, got {base_lr} and {max_iter}"
            )));
        }
        Ok(Self {
            base_lr,
            max_iter,
            power: 0.9,
        })
    }

    pub fn lr(&self, iter: u64) -> Result<f64> {
        poly_lr(self, iter)
    }
}

pub fn poly_lr(schedule: &PolySchedule, iter: u64) -> Result<f64> {
    if iter > schedule.max_iter {
        return Err(Error::InvalidArgument(format!(
            "iteration {iter} beyond max_iter {}",
            schedule.max_iter
        )));
    }
    let frac = 1.0 - iter as f64 / schedule.max_iter as f64;
    Ok(schedule.base_lr * frac.powf(schedule.power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::store::ParamKind;

    fn scalar_store(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p.weight", Tensor::full([1, 1, 1, 1], value), ParamKind::ConvWeight).unwrap();
        s.accumulate_grad("p.weight", &Tensor::full([1, 1, 1, 1], grad)).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.5, 1.0);
        let mut st = AdamState::new(0.001);
        adam_step(&mut s, &mut st, 0.001).unwrap();
        let p = s.get("p.weight").unwrap().data()[0];
        assert!((0.5 - p - 0.001).abs() < 1e-9);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grad_and_zero_lr_leave_params() {
        let mut s = scalar_store(0.5, 0.0);
        let mut st = AdamState::new(0.001);
        adam_step(&mut s, &mut st, 0.001).unwrap();
        assert_eq!(s.get("p.weight").unwrap().data()[0], 0.5);

        let mut s = scalar_store(0.5, 3.0);
        adam_step(&mut s, &mut AdamState::new(0.001), 0.0).unwrap();
        assert_eq!(s.get("p.weight").unwrap().data()[0], 0.5);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut s = ParamStore::<f32>::new();
        for name in ["a.weight", "b.weight"] {
            s.insert(name, Tensor::full([1, 2, 1, 1], 0.3), ParamKind::ConvWeight).unwrap();
            s.accumulate_grad(name, &Tensor::full([1, 2, 1, 1], -0.7)).unwrap();
        }
        let mut st = AdamState::new(0.01);
        for _ in 0..5 {
            adam_step(&mut s, &mut st, 0.01).unwrap();
        }
        assert_eq!(s.get("a.weight").unwrap(), s.get("b.weight").unwrap());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a.weight", Tensor::zeros([1, 1, 1, 1]), ParamKind::ConvWeight).unwrap();
        assert!(matches!(
            adam_step(&mut s, &mut AdamState::new(0.01), 0.01),
            Err(Error::MissingGradient(n)) if n == "a.weight"
        ));
    }

    #[test]
    fn poly_values() {
        let s = PolySchedule::new(5e-4, 1000).unwrap();
        assert_eq!(s.lr(0).unwrap(), 5e-4);
        assert_eq!(s.lr(1000).unwrap(), 0.0);
        assert!((s.lr(500).unwrap() - 2.6794e-4).abs() < 1e-8);
        assert!(s.lr(1001).is_err());
        assert!(PolySchedule::new(0.0, 10).is_err());
        assert!(PolySchedule::new(1.0, 0).is_err());
    }
}
