//! Finite-difference verification of every differentiable operation.
//!
//! Each instance draws random 64-bit inputs and a random projection `R`,
//! then compares the tape gradient of `L = sum(R * out)` against the
//! fourth-order central difference
//! `(f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h`. The two-point stencil
//! has an `O(h^2)` truncation error that, through train-mode batch norm on
//! one-channel branches, can reach 1e-3 relative at `h = 1e-3` even when the
//! analytic gradient is exact.
//!
//! When any of the four evaluations flips a PReLU sign or a max-pool winner,
//! the coordinate straddles a kink and the plain difference is meaningless.
//! Such coordinates are re-evaluated on a replaying tape that keeps the
//! unperturbed pass's decisions, which is the linear piece the analytic
//! gradient differentiates, and are counted in `replayed`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{cross_entropy, ParamStore, Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_LABEL};
use crate::layers::Mode;
use crate::mmrfc::{build_mmrfc, MmrfcConfig};
use crate::tensor::{ConvParams, Tensor};

pub const OPS: [&str; 10] = [
    "conv2d",
    "prelu",
    "batchnorm_infer",
    "batchnorm_train",
    "concat",
    "maxpool2x2",
    "bilinear",
    "softmax",
    "cross_entropy",
    "mmrfc",
];

/// Relative errors use `max(|analytic|, |numeric|, DENOM_FLOOR)` as the
/// denominator so that vanishing gradients are compared absolutely.
pub const DENOM_FLOOR: f64 = 1e-3;

/// Input-image coordinates checked per composite MMRFC instance; every
/// parameter coordinate is always checked.
const MMRFC_INPUT_SAMPLE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Perturbs the analytic gradient of the named op (negative control).
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            step: 1e-3,
            tolerance: 1e-3,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: String,
    pub instances: usize,
    pub checked: usize,
    /// Coordinates near a kink, evaluated with the base pass's decisions.
    pub replayed: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

type Built = (Tape<f64>, Var, Vec<Var>);
type Builder<'a> = &'a dyn Fn(Tape<f64>, &[Tensor<f64>]) -> Result<Built>;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

fn random_tensor<R: Rng>(rng: &mut R, dims: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Fourth-order central difference of `f` at `x` with step `h`.
fn stencil(h: f64, mut f: impl FnMut(f64) -> Result<f64>, x: f64) -> Result<f64> {
    let (m2, m1, p1, p2) = (f(x - 2.0 * h)?, f(x - h)?, f(x + h)?, f(x + 2.0 * h)?);
    Ok((m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

struct Stats {
    checked: usize,
    replayed: usize,
    max_rel: f64,
}

/// Compares tape gradients of `sum(R * out)` with finite differences for
/// every coordinate of every tensor in `inputs`.
fn check_instance<R: Rng>(
    rng: &mut R,
    inputs: &mut [Tensor<f64>],
    build: Builder,
    opts: &GradcheckOptions,
    corrupt: bool,
    stats: &mut Stats,
) -> Result<()> {
    check_instance_sampled(rng, inputs, build, opts, corrupt, stats, None)
}

/// Like [`check_instance`], but when `first_sample` is set only that many
/// randomly chosen coordinates of `inputs[0]` are checked.
fn check_instance_sampled<R: Rng>(
    rng: &mut R,
    inputs: &mut [Tensor<f64>],
    build: Builder,
    opts: &GradcheckOptions,
    corrupt: bool,
    stats: &mut Stats,
    first_sample: Option<usize>,
) -> Result<()> {
    let (tape, out, vars) = build(Tape::new(), inputs)?;
    let proj = random_tensor(rng, tape.value(out).dims(), -1.0, 1.0);
    let base_pattern = tape.activation_pattern();
    let grads = tape.backward(out, proj.clone())?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs.iter())
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.dims())))
        .collect();
    // The negative control perturbs the first coordinate actually compared.
    let mut corrupt = corrupt;
    for t in 0..inputs.len() {
        let coords: Vec<usize> = match first_sample {
            Some(k) if t == 0 => rand::seq::index::sample(rng, inputs[0].numel(), k.min(inputs[0].numel())).into_vec(),
            _ => (0..inputs[t].numel()).collect(),
        };
        for i in coords {
            let orig = inputs[t].data()[i];
            let mut crossed = false;
            let mut numeric = stencil(opts.step, |x| {
                inputs[t].data_mut()[i] = x;
                let (tape, out, _) = build(Tape::new(), inputs)?;
                crossed |= tape.activation_pattern() != base_pattern;
                Ok(dot(tape.value(out), &proj))
            }, orig)?;
            if crossed {
                numeric = stencil(opts.step, |x| {
                    inputs[t].data_mut()[i] = x;
                    let (tape, out, _) = build(Tape::replaying(base_pattern.clone()), inputs)?;
                    Ok(dot(tape.value(out), &proj))
                }, orig)?;
                stats.replayed += 1;
            }
            inputs[t].data_mut()[i] = orig;
            let shift = if std::mem::take(&mut corrupt) { 0.05 } else { 0.0 };
            stats.max_rel = stats.max_rel.max(rel_error(analytic[t].data()[i] + shift, numeric));
            stats.checked += 1;
        }
    }
    Ok(())
}

fn leaves(tape: &mut Tape<f64>, inputs: &[Tensor<f64>]) -> Vec<Var> {
    inputs.iter().map(|t| tape.leaf(t.clone())).collect()
}

fn conv_case<R: Rng>(rng: &mut R) -> (Vec<Tensor<f64>>, ConvParams, bool) {
    let kernels = [(1, 1), (3, 1), (1, 3), (3, 3)];
    let (kh, kw) = kernels[rng.gen_range(0..4)];
    let depthwise = rng.gen_bool(0.5);
    let cin = rng.gen_range(1..=4);
    let cout = if depthwise { cin } else { rng.gen_range(1..=4) };
    let stride = rng.gen_range(1..=2);
    let dilation = rng.gen_range(1..=2);
    let bias = rng.gen_bool(0.7);
    let p = ConvParams::new(kh, kw)
        .stride(stride, stride)
        .dilation(dilation, dilation)
        .groups(if depthwise { cin } else { 1 })
        .bias(bias)
        .same_padding();
    let dims = [rng.gen_range(1..=2), cin, rng.gen_range(4..=7), rng.gen_range(4..=7)];
    let mut t = vec![
        random_tensor(rng, dims, -1.0, 1.0),
        random_tensor(rng, [cout, cin / p.groups, kh, kw], -1.0, 1.0),
    ];
    if bias {
        t.push(random_tensor(rng, [1, cout, 1, 1], -1.0, 1.0));
    }
    (t, p, bias)
}

fn run_op<R: Rng>(op: &str, rng: &mut R, opts: &GradcheckOptions, corrupt: bool, stats: &mut Stats) -> Result<()> {
    match op {
        "conv2d" => {
            let (mut t, p, bias) = conv_case(rng);
            check_instance(
                rng,
                &mut t,
                &|tape, inp| {
                    let mut tape = tape;
                    let v = leaves(&mut tape, inp);
                    let out = tape.conv2d(v[0], v[1], bias.then(|| v[2]), p)?;
                    Ok((tape, out, v))
                },
                opts,
                corrupt,
                stats,
            )
        }
        "prelu" => {
            let c = rng.gen_range(1..=4);
            let mut t = vec![
                random_tensor(rng, [2, c, 3, 4], -1.0, 1.0),
                random_tensor(rng, [1, c, 1, 1], -0.5, 0.5),
            ];
            check_instance(
                rng,
                &mut t,
                &|tape, inp| {
                    let mut tape = tape;
                    let v = leaves(&mut tape, inp);
                    let out = tape.prelu(v[0], v[1])?;
                    Ok((tape, out, v))
                },
                opts,
                corrupt,
                stats,
            )
        }
        "batchnorm_infer" | "batchnorm_train" => {
            let c = rng.gen_range(1..=4);
            let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..2.0)).collect();
            let mut t = vec![
                random_tensor(rng, [2, c, 3, 3], -1.0, 1.0),
                random_tensor(rng, [1, c, 1, 1], 0.5, 1.5),
                random_tensor(rng, [1, c, 1, 1], -0.5, 0.5),
            ];
            let train = op == "batchnorm_train";
            check_instance(
                rng,
                &mut t,
                &|tape, inp| {
                    let mut tape = tape;
                    let v = leaves(&mut tape, inp);
                    let out = if train {
                        tape.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0
                    } else {
                        tape.batchnorm_eval(v[0], v[1], v[2], mean.clone(), var.clone(), 1e-5)?
                    };
                    Ok((tape, out, v))
                },
                opts,
                corrupt,
                stats,
            )
        }
        "concat" => {
            let k = rng.gen_range(1..=3);
            let mut t: Vec<_> = (0..k)
                .map(|_| {
                    let c = rng.gen_range(1..=3);
                    random_tensor(rng, [2, c, 3, 2], -1.0, 1.0)
                })
                .collect();
            check_instance(
                rng,
                &mut t,
                &|tape, inp| {
                    let mut tape = tape;
                    let v = leaves(&mut tape, inp);
                    let out = tape.concat(&v)?;
                    Ok((tape, out, v))
                },
                opts,
                corrupt,
                stats,
            )
        }
        "maxpool2x2" | "bilinear" | "softmax" => {
            let dims = [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=6), rng.gen_range(2..=6)];
            let mut t = vec![random_tensor(rng, dims, -1.0, 1.0)];
            let (oh, ow) = (rng.gen_range(1..=9), rng.gen_range(1..=9));
            let op = op.to_string();
            check_instance(
                rng,
                &mut t,
                &|tape, inp| {
                    let mut tape = tape;
                    let v = leaves(&mut tape, inp);
                    let out = match op.as_str() {
                        "maxpool2x2" => tape.maxpool2x2(v[0])?,
                        "bilinear" => tape.bilinear(v[0], oh, ow)?,
                        _ => tape.softmax(v[0])?,
                    };
                    Ok((tape, out, v))
                },
                opts,
                corrupt,
                stats,
            )
        }
        "cross_entropy" => check_cross_entropy(rng, opts, corrupt, stats),
        "mmrfc" => {
            let mut store = ParamStore::<f64>::new();
            let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
            build_mmrfc(MmrfcConfig::new(8, 1)?, &mut store, "m0", &mut init)?;
            build_mmrfc(MmrfcConfig::new(8, 2)?, &mut store, "m1", &mut init)?;
            store.perturb(&mut init, 0.2);
            let mut names = Vec::new();
            // Wide enough that every dilated tap of the second block lands
            // inside the map.
            let mut t = vec![random_tensor(rng, [1, 8, 18, 18], -1.0, 1.0)];
            for (name, entry) in store.iter() {
                if entry.trainable {
                    names.push(name.to_string());
                    t.push(entry.value.clone());
                }
            }
            let blocks = [
                crate::mmrfc::Mmrfc {
                    config: MmrfcConfig::new(8, 1)?,
                    prefix: "m0".into(),
                },
                crate::mmrfc::Mmrfc {
                    config: MmrfcConfig::new(8, 2)?,
                    prefix: "m1".into(),
                },
            ];
            let frozen = store.clone();
            check_instance_sampled(
                rng,
                &mut t,
                &|tape, inp| {
                    let mut s = frozen.clone();
                    for (n, v) in names.iter().zip(&inp[1..]) {
                        s.set(n, v.clone())?;
                    }
                    let mut tape = tape;
                    let x = tape.leaf(inp[0].clone());
                    let y = blocks[0].forward(&mut tape, &s, x, Mode::Train)?;
                    let out = blocks[1].forward(&mut tape, &s, y, Mode::Train)?;
                    let mut vars = vec![x];
                    for n in &names {
                        let v = tape.params().find(|(_, pn)| pn == n).map(|(v, _)| v);
                        vars.push(v.ok_or_else(|| Error::MissingParameter(n.clone()))?);
                    }
                    Ok((tape, out, vars))
                },
                opts,
                corrupt,
                stats,
                Some(MMRFC_INPUT_SAMPLE),
            )
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown op `{other}`; expected one of {}",
            OPS.join(", ")
        ))),
    }
}

fn check_cross_entropy<R: Rng>(rng: &mut R, opts: &GradcheckOptions, corrupt: bool, stats: &mut Stats) -> Result<()> {
    let (n, k, h, w) = (rng.gen_range(1..=2), rng.gen_range(2..=5), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let mut logits = random_tensor(rng, [n, k, h, w], -2.0, 2.0);
    let labels = LabelMap::new(
        [n, h, w],
        (0..n * h * w)
            .map(|_| if rng.gen_bool(0.2) { IGNORE_LABEL } else { rng.gen_range(0..k) as u8 })
            .collect(),
    )?;
    let reduction = if rng.gen_bool(0.5) { Reduction::Sum } else { Reduction::Mean };
    let mut analytic = cross_entropy(&logits, &labels, IGNORE_LABEL, reduction)?.grad;
    if corrupt {
        analytic.data_mut()[0] += 0.05;
    }
    for i in 0..logits.numel() {
        let orig = logits.data()[i];
        let numeric = stencil(opts.step, |x| {
            logits.data_mut()[i] = x;
            Ok(cross_entropy(&logits, &labels, IGNORE_LABEL, reduction)?.loss)
        }, orig)?;
        logits.data_mut()[i] = orig;
        stats.max_rel = stats.max_rel.max(rel_error(analytic.data()[i], numeric));
        stats.checked += 1;
    }
    Ok(())
}

/// Checks one op; `op` must be one of [`OPS`].
pub fn check_op(op: &str, opts: &GradcheckOptions) -> Result<OpReport> {
    if !OPS.contains(&op) {
        return Err(Error::InvalidArgument(format!(
            "unknown op `{op}`; expected one of {}",
            OPS.join(", ")
        )));
    }
    let seed = opts.seed ^ op.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corrupt = opts.corrupt.as_deref() == Some(op);
    let mut stats = Stats {
        checked: 0,
        replayed: 0,
        max_rel: 0.0,
    };
    for _ in 0..opts.instances {
        run_op(op, &mut rng, opts, corrupt, &mut stats)?;
    }
    Ok(OpReport {
        op: op.to_string(),
        instances: opts.instances,
        checked: stats.checked,
        replayed: stats.replayed,
        max_rel_error: stats.max_rel,
        passed: stats.checked > 0 && stats.max_rel < opts.tolerance,
    })
}

pub fn check_all(opts: &GradcheckOptions) -> Result<Vec<OpReport>> {
    OPS.iter().map(|op| check_op(op, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> GradcheckOptions {
        GradcheckOptions {
            instances: 3,
            ..GradcheckOptions::default()
        }
    }

    #[test]
    fn cheap_ops_pass() {
        for op in ["conv2d", "prelu", "concat", "softmax", "cross_entropy"] {
            let r = check_op(op, &quick()).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn corruption_is_caught() {
        let opts = GradcheckOptions {
            corrupt: Some("prelu".into()),
            ..quick()
        };
        assert!(!check_op("prelu", &opts).unwrap().passed);
        assert!(check_op("concat", &opts).unwrap().passed);
    }

    #[test]
    fn unknown_op() {
        assert!(check_op("gelu", &quick()).is_err());
    }
}
