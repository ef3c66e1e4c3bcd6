//! Analytic parameter, FLOP and receptive-field accounting.
//!
//! FLOPs follow the parameter-times-area convention: every convolution
//! contributes `params * out_h * out_w` (bias included), bilinear upsampling
//! contributes four operations per output element, and concatenation,
//! pooling, BN and PReLU contribute nothing. [`graph_macs`] gives the
//! multiply-accumulate count for the conventional `2 * MAC` figure.
//!
//! Layer counts are derived from the [`GraphSpec`] alone, independently of
//! the parameter registration in [`crate::network`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmrfc::{branch_receptive_field, BranchSpec, MmrfcConfig};
use crate::network::{GraphSpec, LayerKind, INPUT};

/// Parameters of branch `index` (1-based) of a `channels`-wide block.
pub fn mmrfc_branch_params(channels: usize, index: usize) -> Result<u64> {
    MmrfcConfig::new(channels, 1)?;
    let c = channels as u64;
    let cb = c / 8;
    match index {
        1 => Ok((c + 1) * cb + (3 * cb + 1) * cb * 2),
        2..=4 => Ok((c + 1) * cb + 4 * cb * 2),
        _ => Err(Error::InvalidArgument(format!("branch index {index} not in 1..=4"))),
    }
}

/// Parameters of the transform-fusion part.
pub fn mmrfc_fusion_params(channels: usize) -> Result<u64> {
    MmrfcConfig::new(channels, 1)?;
    let c = channels as u64;
    Ok(10 * c / 2 + (c + 1) * c)
}

pub fn mmrfc_total_params(channels: usize) -> Result<u64> {
    let mut total = mmrfc_fusion_params(channels)?;
    for i in 1..=4 {
        total += mmrfc_branch_params(channels, i)?;
    }
    Ok(total)
}

pub fn mmrfc_flops(channels: usize, width: usize, height: usize) -> Result<u64> {
    Ok(mmrfc_total_params(channels)? * (width * height) as u64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub params: u64,
    pub params_aux: u64,
    pub flops: u64,
    pub out_shape: [usize; 4],
    /// Receptive field `(height, width)` of one output position, in input pixels.
    pub rf: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_params_aux: u64,
    pub total_flops: u64,
}

impl CostReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// A convolution as seen by the accounting: channel widths, kernel, groups
/// and the output spatial area it runs over.
#[derive(Clone, Copy, Debug)]
struct ConvCount {
    in_c: usize,
    out_c: usize,
    kernel: (usize, usize),
    groups: usize,
    area: usize,
}

impl ConvCount {
    fn weights(&self) -> u64 {
        (self.in_c / self.groups * self.kernel.0 * self.kernel.1 * self.out_c) as u64
    }

    fn params(&self) -> u64 {
        self.weights() + self.out_c as u64
    }
}

/// Convolutions and auxiliary (BN: 4 per channel, PReLU: 1) scalars of one layer.
fn layer_convs(kind: &LayerKind, out: [usize; 4]) -> (Vec<ConvCount>, u64) {
    let area = out[2] * out[3];
    let conv = |in_c, out_c, kernel, groups, area| ConvCount {
        in_c,
        out_c,
        kernel,
        groups,
        area,
    };
    let bn_prelu = |c: usize| 5 * c as u64;
    match *kind {
        LayerKind::ConcatConv { in_channels, out_channels } => (
            vec![conv(in_channels, out_channels - in_channels, (3, 3), 1, area)],
            bn_prelu(out_channels),
        ),
        LayerKind::Mmrfc { channels: c, .. } => {
            let cb = c / 8;
            let mut convs = Vec::new();
            let mut aux = 0;
            for i in 1..=4 {
                let g = if i == 1 { 1 } else { cb };
                convs.push(conv(c, cb, (1, 1), 1, area));
                convs.push(conv(cb, cb, (3, 1), g, area));
                convs.push(conv(cb, cb, (1, 3), g, area));
                aux += bn_prelu(cb) + cb as u64 + bn_prelu(cb);
            }
            convs.push(conv(c / 2, c / 2, (3, 3), c / 2, area));
            convs.push(conv(c, c, (1, 1), 1, area));
            (convs, aux + bn_prelu(c))
        }
        LayerKind::SeqDwConv { channels, stages } => {
            let convs = (0..stages)
                .map(|s| conv(channels, channels, (3, 3), channels, area << (2 * (stages - 1 - s))))
                .collect();
            (convs, stages as u64 * bn_prelu(channels))
        }
        LayerKind::DwConv { channels } => (vec![conv(channels, channels, (3, 3), channels, area)], bn_prelu(channels)),
        LayerKind::PointwiseClassifier { in_channels, classes } => (vec![conv(in_channels, classes, (1, 1), 1, area)], 0),
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel,
            groups,
            ..
        } => (vec![conv(in_channels, out_channels, kernel, groups, area)], 0),
        LayerKind::Concat | LayerKind::BilinearUp { .. } => (Vec::new(), 0),
    }
}

/// Effective kernel extent `(kh, kw)` and stride of a layer, for receptive
/// field composition `rf' = rf + (k - 1) * jump`, `jump' = jump * stride`.
fn rf_step(kind: &LayerKind) -> ((usize, usize), usize) {
    match *kind {
        LayerKind::ConcatConv { .. } | LayerKind::DwConv { .. } => ((3, 3), 2),
        LayerKind::Mmrfc { dilation, .. } => {
            let k = 8 * dilation + 3;
            ((k, k), 1)
        }
        LayerKind::SeqDwConv { stages, .. } => {
            let k = 1 + 2 * ((1 << stages) - 1);
            ((k, k), 1 << stages)
        }
        LayerKind::Conv {
            kernel, stride, dilation, ..
        } => (
            (dilation.0 * (kernel.0 - 1) + 1, dilation.1 * (kernel.1 - 1) + 1),
            stride,
        ),
        LayerKind::Concat | LayerKind::PointwiseClassifier { .. } => ((1, 1), 1),
        LayerKind::BilinearUp { .. } => ((2, 2), 1),
    }
}

/// Receptive field and jump (input pixels between adjacent positions) per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RfState {
    pub rf: (usize, usize),
    pub jump: usize,
}

fn compose_rf(spec: &GraphSpec) -> Result<Vec<(RfState, RfState)>> {
    spec.validate()?;
    let mut states: Vec<(&str, RfState)> = vec![(INPUT, RfState { rf: (1, 1), jump: 1 })];
    let mut out = Vec::new();
    for layer in &spec.layers {
        let ins: Vec<RfState> = layer
            .inputs
            .iter()
            .map(|i| states.iter().find(|(n, _)| n == i).expect("validated").1)
            .collect();
        let inbound = RfState {
            rf: (
                ins.iter().map(|s| s.rf.0).max().unwrap_or(1),
                ins.iter().map(|s| s.rf.1).max().unwrap_or(1),
            ),
            jump: ins.iter().map(|s| s.jump).max().unwrap_or(1),
        };
        let ((kh, kw), stride) = rf_step(&layer.kind);
        let rf = (inbound.rf.0 + (kh - 1) * inbound.jump, inbound.rf.1 + (kw - 1) * inbound.jump);
        let jump = match layer.kind {
            LayerKind::BilinearUp { factor } => (inbound.jump / factor).max(1),
            _ => inbound.jump * stride,
        };
        let state = RfState { rf, jump };
        states.push((&layer.name, state));
        out.push((inbound, state));
    }
    Ok(out)
}

/// Per-layer parameter, FLOP, shape and receptive-field accounting.
pub fn analyze_graph(spec: &GraphSpec, input_dims: [usize; 4]) -> Result<CostReport> {
    let shapes = spec.infer_shapes(input_dims)?;
    let rfs = compose_rf(spec)?;
    let mut layers = Vec::new();
    for (layer, (_, rf)) in spec.layers.iter().zip(rfs) {
        let out = shapes[layer.name.as_str()];
        let (convs, aux) = layer_convs(&layer.kind, out);
        let params: u64 = convs.iter().map(ConvCount::params).sum();
        let mut flops: u64 = convs.iter().map(|c| c.params() * c.area as u64).sum();
        if let LayerKind::BilinearUp { .. } = layer.kind {
            flops += 4 * (out[1] * out[2] * out[3]) as u64;
        }
        layers.push(LayerCost {
            name: layer.name.clone(),
            kind: layer.kind.name().to_string(),
            params,
            params_aux: aux,
            flops: flops * out[0] as u64,
            out_shape: out,
            rf: rf.rf,
        });
    }
    Ok(CostReport {
        total_params: layers.iter().map(|l| l.params).sum(),
        total_params_aux: layers.iter().map(|l| l.params_aux).sum(),
        total_flops: layers.iter().map(|l| l.flops).sum(),
        layers,
    })
}

/// Multiply-accumulates of all convolutions (biases excluded).
pub fn graph_macs(spec: &GraphSpec, input_dims: [usize; 4]) -> Result<u64> {
    let shapes = spec.infer_shapes(input_dims)?;
    Ok(spec
        .layers
        .iter()
        .map(|l| {
            let out = shapes[l.name.as_str()];
            let (convs, _) = layer_convs(&l.kind, out);
            convs.iter().map(|c| c.weights() * c.area as u64).sum::<u64>() * out[0] as u64
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BranchRf {
    pub index: usize,
    pub dilation: (usize, usize),
    /// Rectangle on the block's input feature map.
    pub feature_rf: (usize, usize),
    /// The same rectangle measured in input-image pixels.
    pub image_span: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerRf {
    pub name: String,
    pub kind: String,
    pub rf: (usize, usize),
    pub jump: usize,
    pub branches: Vec<BranchRf>,
}

pub fn receptive_field_report(spec: &GraphSpec) -> Result<Vec<LayerRf>> {
    let rfs = compose_rf(spec)?;
    let mut out = Vec::new();
    for (layer, (inbound, state)) in spec.layers.iter().zip(rfs) {
        let mut branches = Vec::new();
        if let LayerKind::Mmrfc { dilation, .. } = layer.kind {
            for i in 1..=4 {
                let b = BranchSpec::new(i, dilation)?;
                let (fh, fw) = branch_receptive_field(&b);
                branches.push(BranchRf {
                    index: i,
                    dilation: b.dilation,
                    feature_rf: (fh, fw),
                    image_span: (inbound.jump * (fh - 1) + 1, inbound.jump * (fw - 1) + 1),
                });
            }
        }
        out.push(LayerRf {
            name: layer.name.clone(),
            kind: layer.kind.name().to_string(),
            rf: state.rf,
            jump: state.jump,
            branches,
        });
    }
    Ok(out)
}
