//! Parameter registration and tape-recording helpers shared by the MMRFC
//! block and the network stages.
//!
//! Naming: a convolution at `prefix` owns `prefix.weight` and `prefix.bias`;
//! a batch norm owns `prefix.{gamma,beta,running_mean,running_var}`; a PReLU
//! owns `prefix.slope`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{ParamKind, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::{ConvParams, Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const PRELU_INIT: f64 = 0.25;

/// Whether batch norms use batch statistics (and record running-stat
/// updates) or their running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// He-normal weights, zero bias.
pub fn register_conv<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    in_c: usize,
    out_c: usize,
    p: &ConvParams,
) -> Result<()> {
    let fan_in = (in_c / p.groups) * p.kernel.0 * p.kernel.1;
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
    let weight = Tensor::from_fn([out_c, in_c / p.groups, p.kernel.0, p.kernel.1], |_, _, _, _| {
        T::of(normal.sample(rng))
    });
    store.insert(format!("{prefix}.weight"), weight, ParamKind::ConvWeight)?;
    if p.bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros([1, out_c, 1, 1]), ParamKind::ConvBias)?;
    }
    Ok(())
}

pub fn register_bn<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<()> {
    let dims = [1, channels, 1, 1];
    store.insert(format!("{prefix}.gamma"), Tensor::full(dims, T::one()), ParamKind::BnGamma)?;
    store.insert(format!("{prefix}.beta"), Tensor::zeros(dims), ParamKind::BnBeta)?;
    store.insert(format!("{prefix}.running_mean"), Tensor::zeros(dims), ParamKind::BnRunningMean)?;
    store.insert(format!("{prefix}.running_var"), Tensor::full(dims, T::one()), ParamKind::BnRunningVar)?;
    Ok(())
}

pub fn register_prelu<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<()> {
    store.insert(
        format!("{prefix}.slope"),
        Tensor::full([1, channels, 1, 1], T::of(PRELU_INIT)),
        ParamKind::PReluSlope,
    )
}

pub fn conv<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var, p: ConvParams) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.weight"))?;
    let b = if p.bias {
        Some(tape.param(store, &format!("{prefix}.bias"))?)
    } else {
        None
    };
    tape.conv2d(x, w, b, p)
}

pub fn batchnorm<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var, mode: Mode) -> Result<Var> {
    let gamma = tape.param(store, &format!("{prefix}.gamma"))?;
    let beta = tape.param(store, &format!("{prefix}.beta"))?;
    let eps = T::of(BN_EPSILON);
    match mode {
        Mode::Train => {
            let (out, stats) = tape.batchnorm_train(x, gamma, beta, eps)?;
            tape.record_bn_update(prefix.to_string(), stats);
            Ok(out)
        }
        Mode::Eval => {
            let mean = store.get(&format!("{prefix}.running_mean"))?.data().to_vec();
            let var = store.get(&format!("{prefix}.running_var"))?.data().to_vec();
            tape.batchnorm_eval(x, gamma, beta, mean, var, eps)
        }
    }
}

pub fn prelu<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let slope = tape.param(store, &format!("{prefix}.slope"))?;
    tape.prelu(x, slope)
}

/// Batch norm at `{prefix}_bn` followed by PReLU at `{prefix}_act`.
pub fn bn_prelu<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var, mode: Mode) -> Result<Var> {
    let y = batchnorm(tape, store, &format!("{prefix}_bn"), x, mode)?;
    prelu(tape, store, &format!("{prefix}_act"), y)
}

pub fn register_bn_prelu<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<()> {
    register_bn(store, &format!("{prefix}_bn"), channels)?;
    register_prelu(store, &format!("{prefix}_act"), channels)
}

/// Folds the batch statistics recorded on `tape` into the running estimates:
/// `running = (1 - momentum) * running + momentum * batch`.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, tape: &Tape<T>, momentum: f64) -> Result<()> {
    let m = T::of(momentum);
    let keep = T::one() - m;
    for update in tape.bn_updates() {
        let unbiased = update.stats.unbiased_var();
        let mean = store.value_mut(&format!("{}.running_mean", update.prefix))?;
        for (r, &b) in mean.data_mut().iter_mut().zip(&update.stats.mean) {
            *r = keep * *r + m * b;
        }
        let var = store.value_mut(&format!("{}.running_var", update.prefix))?;
        for (r, &b) in var.data_mut().iter_mut().zip(&unbiased) {
            *r = keep * *r + m * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        register_bn(&mut store, "bn", 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap());
        batchnorm(&mut tape, &store, "bn", x, Mode::Train).unwrap();
        apply_bn_updates(&mut store, &tape, 0.1).unwrap();
        assert!((store.get("bn.running_mean").unwrap().data()[0] - 0.2).abs() < 1e-12);
        // unbiased var of [1, 3] is 2
        assert!((store.get("bn.running_var").unwrap().data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn conv_registration_shapes() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ConvParams::new(3, 1).groups(4);
        register_conv(&mut store, &mut rng, "dw", 4, 4, &p).unwrap();
        assert_eq!(store.get("dw.weight").unwrap().dims(), [4, 1, 3, 1]);
        assert_eq!(store.conv_param_count(), p.param_count(4, 4));
    }
}
