//! Supervised training loop: Adam with a poly learning-rate schedule on
//! pixel-wise cross-entropy, batch norms in training mode.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{adam_step, cross_entropy, AdamState, ParamStore, PolySchedule, Reduction, Tape};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_LABEL};
use crate::layers::{apply_bn_updates, Mode, BN_MOMENTUM};
use crate::metrics::ConfusionMatrix;
use crate::network::Model;
use crate::synth::{batch, Sample};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: u64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty added to the gradient of convolution weights.
    pub weight_decay: f64,
    /// Randomly mirror samples left-right.
    pub hflip: bool,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 1000,
            base_lr: 5e-4,
            batch_size: 1,
            seed: 0,
            weight_decay: 0.0,
            hflip: false,
            reduction: Reduction::Mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

fn flipped(s: &Sample) -> Sample {
    let [_, c, h, w] = s.image.dims();
    let image = crate::tensor::Tensor::from_fn([1, c, h, w], |_, ch, y, x| s.image.at(0, ch, y, w - 1 - x));
    let labels = LabelMap::new([1, h, w], (0..h * w).map(|i| s.labels.at(0, i / w, w - 1 - i % w)).collect())
        .expect("same size");
    Sample { image, labels }
}

/// One optimization step on `samples`; returns the loss before the update.
pub fn train_step(
    model: &Model,
    store: &mut ParamStore<f32>,
    adam: &mut AdamState<f32>,
    samples: &[&Sample],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (images, labels) = batch(samples)?;
    let mut tape = Tape::new();
    let x = tape.leaf(images);
    let out = model.forward(&mut tape, store, x, Mode::Train)?;
    let loss = cross_entropy(tape.value(out.output), &labels, IGNORE_LABEL, cfg.reduction)?;
    if !loss.loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {}", loss.loss)));
    }
    let grads = tape.backward(out.output, loss.grad)?;
    store.zero_grad();
    tape.accumulate_into(&grads, store)?;
    if cfg.weight_decay > 0.0 {
        let names: Vec<String> = store
            .iter()
            .filter(|(_, e)| e.kind == crate::autograd::ParamKind::ConvWeight)
            .map(|(n, _)| n.to_string())
            .collect();
        for name in names {
            let decay = store.get(&name)?.map(|v| v * cfg.weight_decay as f32);
            store.accumulate_grad(&name, &decay)?;
        }
    }
    adam_step(store, adam, lr)?;
    apply_bn_updates(store, &tape, BN_MOMENTUM)?;
    Ok(loss.loss)
}

/// Runs `cfg.iters` steps over shuffled epochs of `data`, calling `on_step`
/// after each one.
pub fn train(
    model: &Model,
    store: &mut ParamStore<f32>,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogEntry),
) -> Result<Vec<LogEntry>> {
    if cfg.iters == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("training needs data and a positive batch size".into()));
    }
    let schedule = PolySchedule::new(cfg.base_lr, cfg.iters)?;
    let mut adam = AdamState::new(cfg.base_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.iters as usize);
    for iter in 0..cfg.iters {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            let s = &data[order.pop().unwrap()];
            picked.push(if cfg.hflip && rand::Rng::gen_bool(&mut rng, 0.5) {
                flipped(s)
            } else {
                s.clone()
            });
        }
        let refs: Vec<&Sample> = picked.iter().collect();
        let lr = schedule.lr(iter)?;
        let loss = train_step(model, store, &mut adam, &refs, lr, cfg)?;
        let entry = LogEntry { iter, lr, loss };
        on_step(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Inference-mode confusion matrix over `data`.
pub fn evaluate(model: &Model, store: &ParamStore<f32>, data: &[Sample], classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    for s in data {
        let logits = model.predict(store, &s.image)?;
        cm.accumulate(&LabelMap::argmax(&logits), &s.labels)?;
    }
    Ok(cm)
}

/// `iter,lr,loss` CSV.
pub fn log_csv(log: &[LogEntry]) -> String {
    let mut out = String::from("iter,lr,loss\n");
    for e in log {
        out.push_str(&format!("{},{:e},{}\n", e.iter, e.lr, e.loss));
    }
    out
}
