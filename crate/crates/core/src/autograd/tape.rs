//! Reverse-mode tape. Every operation appends a node holding its output and
//! whatever the backward rule needs; [`Tape::backward`] walks the nodes in
//! reverse.

use crate::autograd::store::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::ops::{self, BatchStats};
use crate::tensor::{ConvParams, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(String),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        p: ConvParams,
    },
    PRelu {
        x: Var,
        slope: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BatchStats<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        var: Vec<T>,
        eps: T,
    },
    Concat {
        xs: Vec<Var>,
    },
    MaxPool {
        x: Var,
        indices: Vec<usize>,
    },
    Bilinear {
        x: Var,
    },
    Softmax {
        x: Var,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Batch statistics to fold into a BN layer's running estimates.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub prefix: String,
    pub stats: BatchStats<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    bn_updates: Vec<BnUpdate<T>>,
    replay: Option<Replay>,
}

/// Piecewise decisions recorded by [`Tape::activation_pattern`], consumed
/// in order by a replaying tape.
#[derive(Clone, Debug, Default)]
struct Replay {
    pattern: Vec<usize>,
    cursor: usize,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bn_updates: Vec::new(),
            replay: None,
        }
    }

    /// A tape whose PReLU and max-pool ops reuse the decisions in `pattern`
    /// (from [`Tape::activation_pattern`] of an earlier pass over the same
    /// graph) instead of recomputing them. The forward pass then stays on
    /// that pass's linear piece; the finite-difference checker uses this to
    /// evaluate near kinks.
    pub fn replaying(pattern: Vec<usize>) -> Self {
        Self {
            replay: Some(Replay { pattern, cursor: 0 }),
            ..Self::new()
        }
    }

    fn replayed(&mut self, n: usize) -> Result<Option<Vec<usize>>> {
        let Some(r) = self.replay.as_mut() else {
            return Ok(None);
        };
        let end = r.cursor + n;
        if end > r.pattern.len() {
            return Err(Error::Autograd("replayed pattern is shorter than the graph".into()));
        }
        let decisions = r.pattern[r.cursor..end].to_vec();
        r.cursor = end;
        Ok(Some(decisions))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copies a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let value = store.get(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        let bias = b.map(|b| self.value(b).data());
        let out = ops::conv2d(self.value(x), self.value(w), bias, &p)?;
        Ok(self.push(out, Op::Conv { x, w, b, p }))
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let out = match self.replayed(self.value(x).numel())? {
            Some(negative) => {
                let (input, slopes) = (self.value(x), self.value(slope).data());
                if slopes.len() != input.c() {
                    return Err(shape_err!("prelu slope has {} entries for {} channels", slopes.len(), input.c()));
                }
                let plane = input.h() * input.w();
                let data = input
                    .data()
                    .iter()
                    .zip(&negative)
                    .enumerate()
                    .map(|(i, (&v, &neg))| if neg == 1 { slopes[(i / plane) % slopes.len()] * v } else { v })
                    .collect();
                Tensor::new(input.dims(), data)?
            }
            None => ops::prelu_slopes(self.value(x), self.value(slope).data())?,
        };
        Ok(self.push(out, Op::PRelu { x, slope }))
    }

    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (out, stats) = ops::batchnorm_train(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        let v = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                stats: stats.clone(),
            },
        );
        Ok((v, stats))
    }

    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: Vec<T>, var: Vec<T>, eps: T) -> Result<Var> {
        let out = ops::batchnorm_affine(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &var,
            eps,
        )?;
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
            },
        ))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (mut out, mut indices) = ops::maxpool2x2_with_indices(self.value(x))?;
        if let Some(winners) = self.replayed(indices.len())? {
            let data = self.value(x).data();
            for ((o, i), &w) in out.data_mut().iter_mut().zip(indices.iter_mut()).zip(&winners) {
                *o = data[w];
                *i = w;
            }
        }
        Ok(self.push(out, Op::MaxPool { x, indices }))
    }

    pub fn bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::bilinear_resize(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::Bilinear { x }))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax_channels(self.value(x))?;
        Ok(self.push(out, Op::Softmax { x }))
    }

    pub fn record_bn_update(&mut self, prefix: String, stats: BatchStats<T>) {
        self.bn_updates.push(BnUpdate { prefix, stats });
    }

    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }

    /// Fingerprint of every piecewise decision taken in the forward pass:
    /// the sign of each PReLU input and each max-pool winner. Two forward
    /// passes with equal patterns lie on the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::PRelu { x, .. } => pattern.extend(
                    self.value(*x)
                        .data()
                        .iter()
                        .map(|v| usize::from(*v < T::zero())),
                ),
                Op::MaxPool { indices, .. } => pattern.extend_from_slice(indices),
                _ => {}
            }
        }
        pattern
    }

    /// Back-propagates `seed` (the gradient of the objective with respect to
    /// `root`) through every node recorded up to and including `root`.
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Autograd(
                "backward called on a variable that was never recorded".into(),
            ));
        }
        if seed.dims() != self.value(root).dims() {
            return Err(shape_err!(
                "seed gradient dims {:?} vs root {:?}",
                seed.dims(),
                self.value(root).dims()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);

        fn add<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g).map_err(|e| Error::Autograd(e.to_string())),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Conv { x, w, b, p } => {
                    let cg = ops::conv2d_backward(self.value(*x), self.value(*w), b.is_some(), p, &g)?;
                    add(&mut grads, *x, cg.input)?;
                    add(&mut grads, *w, cg.weight)?;
                    if let (Some(b), Some(gb)) = (b, cg.bias) {
                        add(&mut grads, *b, Tensor::vector(gb))?;
                    }
                }
                Op::PRelu { x, slope } => {
                    let (gx, gs) = ops::prelu_backward(self.value(*x), self.value(*slope).data(), &g)?;
                    add(&mut grads, *x, gx)?;
                    add(&mut grads, *slope, Tensor::vector(gs))?;
                }
                Op::BatchNormTrain { x, gamma, beta, stats } => {
                    let (gx, gg, gb) = ops::batchnorm_train_backward(self.value(*x), self.value(*gamma).data(), stats, &g)?;
                    add(&mut grads, *x, gx)?;
                    add(&mut grads, *gamma, Tensor::vector(gg))?;
                    add(&mut grads, *beta, Tensor::vector(gb))?;
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let (gx, gg, gb) =
                        ops::batchnorm_infer_backward(self.value(*x), self.value(*gamma).data(), mean, var, *eps, &g)?;
                    add(&mut grads, *x, gx)?;
                    add(&mut grads, *gamma, Tensor::vector(gg))?;
                    add(&mut grads, *beta, Tensor::vector(gb))?;
                }
                Op::Concat { xs } => {
                    let channels: Vec<usize> = xs.iter().map(|&v| self.value(v).c()).collect();
                    let pieces = ops::concat_channels_backward(&g, &channels)?;
                    for (&v, piece) in xs.iter().zip(pieces) {
                        add(&mut grads, v, piece)?;
                    }
                }
                Op::MaxPool { x, indices } => {
                    let gx = ops::maxpool2x2_backward(self.value(*x).dims(), indices, &g)?;
                    add(&mut grads, *x, gx)?;
                }
                Op::Bilinear { x } => {
                    let gx = ops::bilinear_resize_backward(self.value(*x).dims(), &g)?;
                    add(&mut grads, *x, gx)?;
                }
                Op::Softmax { x } => {
                    let gx = ops::softmax_channels_backward(&node.value, &g)?;
                    add(&mut grads, *x, gx)?;
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradient of every parameter leaf into `store`.
    pub fn accumulate_into(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = grads.get(Var(i)) {
                    store.accumulate_grad(name, g)?;
                }
            }
        }
        Ok(())
    }

    /// Parameter leaves with their names.
    pub fn params(&self) -> impl Iterator<Item = (Var, &str)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.op {
            Op::Param(name) => Some((Var(i), name.as_str())),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::store::ParamKind;

    fn prelu_then_pool(tape: &mut Tape<f64>, x: &[f64]) -> Tensor<f64> {
        let x = tape.leaf(Tensor::new([1, 1, 2, 2], x.to_vec()).unwrap());
        let a = tape.leaf(Tensor::full([1, 1, 1, 1], 0.5));
        let y = tape.prelu(x, a).unwrap();
        let p = tape.maxpool2x2(y).unwrap();
        tape.value(p).clone()
    }

    #[test]
    fn replay_keeps_recorded_decisions() {
        let mut base = Tape::new();
        prelu_then_pool(&mut base, &[1.0, -2.0, 0.5, 0.25]);
        let pattern = base.activation_pattern();
        assert_eq!(pattern, vec![0, 1, 0, 0, 0]);

        // Signs and winner flip, but the replay stays on the recorded piece.
        let mut replay = Tape::replaying(pattern);
        let out = prelu_then_pool(&mut replay, &[-1.0, 2.0, 0.5, 0.25]);
        assert_eq!(out.data(), &[-1.0]);

        let mut short = Tape::replaying(vec![0, 0]);
        let x = short.leaf(Tensor::zeros([1, 1, 2, 2]));
        let a = short.leaf(Tensor::full([1, 1, 1, 1], 0.5));
        assert!(short.prelu(x, a).is_err());
    }

    #[test]
    fn backward_through_identity_conv_gives_ones() {
        let mut store = ParamStore::<f64>::new();
        let w = Tensor::from_fn([2, 2, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        store.insert("c.weight", w, ParamKind::ConvWeight).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([1, 2, 3, 3], |_, c, h, w| (c * 9 + h * 3 + w) as f64));
        let w = tape.param(&store, "c.weight").unwrap();
        let y = tape.conv2d(x, w, None, ConvParams::new(1, 1)).unwrap();
        let grads = tape.backward(y, Tensor::full([1, 2, 3, 3], 1.0)).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full([1, 1, 2, 2], 2.0));
        let y = tape.concat(&[x, x, x]).unwrap();
        let grads = tape.backward(y, Tensor::full([1, 3, 2, 2], 1.0)).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 3.0));
    }

    #[test]
    fn backward_rejects_bad_root() {
        let tape = Tape::<f32>::new();
        assert!(matches!(tape.backward(Var(0), Tensor::zeros([1, 1, 1, 1])), Err(Error::Autograd(_))));
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([1, 1, 2, 2]));
        assert!(tape.backward(x, Tensor::zeros([1, 1, 1, 1])).is_err());
    }
}
