//! Empirical receptive fields, for checking the analytic ones in
//! [`crate::cost`].
//!
//! All convolution weights are set to `1 / fan_in` and biases to zero, so
//! every path from an input pixel to an output is strictly positive and no
//! contribution can cancel. BN layers keep their identity running
//! statistics and run in inference mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamKind, ParamStore, Tape};
use crate::cost::receptive_field_report;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::mmrfc::{branch_receptive_field, build_mmrfc, BranchSpec, MmrfcConfig};
use crate::network::{EadnetConfig, Model};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfCheck {
    pub name: String,
    pub analytic: (usize, usize),
    pub empirical: (usize, usize),
}

impl RfCheck {
    pub fn matches(&self) -> bool {
        self.analytic == self.empirical
    }
}

fn normalize_convs(store: &mut ParamStore<f64>) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let entry = store.entry(&name).expect("listed name");
        let kind = entry.kind;
        let t = store.value_mut(&name).expect("listed name");
        match kind {
            ParamKind::ConvWeight => {
                let fan_in = t.c() * t.h() * t.w();
                t.data_mut().fill(1.0 / fan_in as f64);
            }
            ParamKind::ConvBias => t.data_mut().fill(0.0),
            _ => {}
        }
    }
}

/// Bounding box `(height, width)` of the nonzero response of one branch to
/// a single-pixel impulse.
pub fn branch_footprint(channels: usize, base_dilation: usize, branch: usize) -> Result<(usize, usize)> {
    let cfg = MmrfcConfig::new(channels, base_dilation)?;
    let mut store = ParamStore::<f64>::new();
    let block = build_mmrfc(cfg, &mut store, "m", &mut ChaCha8Rng::seed_from_u64(0))?;
    normalize_convs(&mut store);
    let size = 8 * cfg.max_dilation() + 5;
    let mid = size / 2;
    let mut input = Tensor::<f64>::zeros([1, channels, size, size]);
    input.plane_mut(0, 0)[mid * size + mid] = 1.0;
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let trace = block.forward_traced(&mut tape, &store, x, Mode::Eval)?;
    let idx = branch
        .checked_sub(1)
        .filter(|&i| i < 4)
        .ok_or_else(|| Error::InvalidArgument(format!("branch index {branch} not in 1..=4")))?;
    let out = tape.value(trace.branches[idx]);
    let (mut rows, mut cols) = ((usize::MAX, 0), (usize::MAX, 0));
    for c in 0..out.c() {
        for y in 0..size {
            for x in 0..size {
                if out.at(0, c, y, x) != 0.0 {
                    rows = (rows.0.min(y), rows.1.max(y));
                    cols = (cols.0.min(x), cols.1.max(x));
                }
            }
        }
    }
    if rows.0 == usize::MAX {
        return Ok((0, 0));
    }
    Ok((rows.1 - rows.0 + 1, cols.1 - cols.0 + 1))
}

/// Analytic vs impulse footprint for every branch at every base dilation in `drs`.
pub fn verify_branches(channels: usize, drs: &[usize]) -> Result<Vec<RfCheck>> {
    let mut out = Vec::new();
    for &dr in drs {
        for i in 1..=4 {
            out.push(RfCheck {
                name: format!("dr={dr} branch {i}"),
                analytic: branch_receptive_field(&BranchSpec::new(i, dr)?),
                empirical: branch_footprint(channels, dr, i)?,
            });
        }
    }
    Ok(out)
}

/// Two MMRFC blocks (one per stage) on narrow stages.
pub fn toy_config() -> EadnetConfig {
    EadnetConfig {
        num_classes: 4,
        stage_channels: (8, 16, 24),
        ..EadnetConfig::default()
    }
    .with_blocks(1, 1)
}

/// For every layer, the extent of input pixels along the centre row and
/// centre column whose perturbation changes that layer's centre output.
pub fn layer_footprints(model: &Model, size: usize) -> Result<Vec<(String, (usize, usize))>> {
    let mut store: ParamStore<f64> = model.init_store(&mut ChaCha8Rng::seed_from_u64(0))?;
    normalize_convs(&mut store);
    let c = model.spec.input_channels;
    let mid = size / 2;
    let mut probes: Vec<(usize, usize)> = (0..size).map(|x| (mid, x)).collect();
    probes.extend((0..size).filter(|&y| y != mid).map(|y| (y, mid)));

    let run = |batch: &[(usize, usize)]| -> Result<Vec<Tensor<f64>>> {
        let n = batch.len().max(1);
        let mut input = Tensor::<f64>::full([n, c, size, size], 1.0);
        for (b, &(y, x)) in batch.iter().enumerate() {
            for ch in 0..c {
                input.plane_mut(b, ch)[y * size + x] += 1.0;
            }
        }
        let mut tape = Tape::new();
        let v = tape.leaf(input);
        let fwd = model.forward(&mut tape, &store, v, Mode::Eval)?;
        Ok(fwd.layers.values().map(|&v| tape.value(v).clone()).collect())
    };
    let base = run(&[])?;
    let centre = |t: &Tensor<f64>, b: usize| -> Vec<f64> {
        (0..t.c()).map(|ch| t.at(b, ch, t.h() / 2, t.w() / 2)).collect()
    };
    let mut extents = vec![((usize::MAX, 0), (usize::MAX, 0)); base.len()];
    for chunk in probes.chunks(32) {
        let outs = run(chunk)?;
        for (l, out) in outs.iter().enumerate() {
            let reference = centre(&base[l], 0);
            for (b, &(y, x)) in chunk.iter().enumerate() {
                if centre(out, b) != reference {
                    let e = &mut extents[l];
                    if x == mid {
                        e.0 = (e.0 .0.min(y), e.0 .1.max(y));
                    }
                    if y == mid {
                        e.1 = (e.1 .0.min(x), e.1 .1.max(x));
                    }
                }
            }
        }
    }
    let span = |(lo, hi): (usize, usize)| if lo == usize::MAX { 0 } else { hi - lo + 1 };
    Ok(model
        .spec
        .layers
        .iter()
        .zip(extents)
        .map(|(l, (r, c))| (l.name.clone(), (span(r), span(c))))
        .collect())
}

/// Analytic vs perturbation receptive field for every layer of `model`,
/// on an input large enough to hold the largest one.
pub fn verify_network(model: &Model) -> Result<Vec<RfCheck>> {
    let report = receptive_field_report(&model.spec)?;
    let largest = report.iter().map(|l| l.rf.0.max(l.rf.1)).max().unwrap_or(1);
    let m = model.spec.required_multiple();
    let size = (largest + 32).div_ceil(m) * m;
    let empirical = layer_footprints(model, size)?;
    Ok(report
        .into_iter()
        .zip(empirical)
        .map(|(a, (name, e))| RfCheck {
            name,
            analytic: a.rf,
            empirical: e,
        })
        .collect())
}
