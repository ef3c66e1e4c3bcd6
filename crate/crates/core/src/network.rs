//! EADNet assembly.
//!
//! The network is described declaratively by a [`GraphSpec`] (an ordered
//! list of layers referring to earlier layers by name) and executed by
//! [`Model`], which interprets the spec against a [`ParamStore`].
//!
//! Topology built by [`eadnet_graph`]:
//!
//! ```text
//! input(3) -> cc1 (c1, 1/2) -> cc2 (c2, 1/4) -> s2.mmrfc* -> cc3 (c3, 1/8) -> s3.mmrfc*
//!               |                    `-> dw (c2, 1/8) ---------------.   |
//!               `-> seq_dw (c1, 1/8) --------------------------------+---+-> concat -> classifier -> x8 bilinear
//! ```

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::layers::{self, Mode};
use crate::mmrfc::{build_mmrfc, Mmrfc, MmrfcConfig, MAX_BASE_DILATION, MAX_CHANNELS};
use crate::tensor::{ConvParams, Scalar, Tensor};

/// Name under which layers refer to the network input.
pub const INPUT: &str = "input";

pub const DEFAULT_STAGE2_DILATIONS: [usize; 6] = [1, 1, 2, 2, 4, 4];
pub const DEFAULT_STAGE3_DILATIONS: [usize; 9] = [1, 2, 4, 6, 1, 2, 4, 6, 6];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EadnetConfig {
    pub num_classes: usize,
    pub stage_channels: (usize, usize, usize),
    pub n1: usize,
    pub n2: usize,
    pub dr_schedule_stage2: Vec<usize>,
    pub dr_schedule_stage3: Vec<usize>,
}

impl Default for EadnetConfig {
    /// 19 classes, channels (16, 64, 128), 6 + 9 MMRFC blocks.
    fn default() -> Self {
        Self {
            num_classes: 19,
            stage_channels: (16, 64, 128),
            n1: 6,
            n2: 9,
            dr_schedule_stage2: DEFAULT_STAGE2_DILATIONS.to_vec(),
            dr_schedule_stage3: DEFAULT_STAGE3_DILATIONS.to_vec(),
        }
    }
}

/// The first `n` entries of `default`, extended with its last value.
pub fn default_schedule(n: usize, default: &[usize]) -> Vec<usize> {
    let last = default.last().copied().unwrap_or(1);
    (0..n).map(|i| default.get(i).copied().unwrap_or(last)).collect()
}

impl EadnetConfig {
    /// Sets the block counts and derives matching default dilation schedules.
    pub fn with_blocks(mut self, n1: usize, n2: usize) -> Self {
        self.n1 = n1;
        self.n2 = n2;
        self.dr_schedule_stage2 = default_schedule(n1, &DEFAULT_STAGE2_DILATIONS);
        self.dr_schedule_stage3 = default_schedule(n2, &DEFAULT_STAGE3_DILATIONS);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (c1, c2, c3) = self.stage_channels;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes == 0 || self.num_classes > 255 {
            return bad(format!("num_classes must be in 1..=255, got {}", self.num_classes));
        }
        if !(3 < c1 && c1 < c2 && c2 < c3) {
            return bad(format!(
                "stage channels must satisfy 3 < c1 < c2 < c3, got ({c1}, {c2}, {c3})"
            ));
        }
        if c3 > MAX_CHANNELS {
            return bad(format!("c3 must not exceed {MAX_CHANNELS}, got {c3}"));
        }
        if self.dr_schedule_stage2.len() != self.n1 || self.dr_schedule_stage3.len() != self.n2 {
            return bad(format!(
                "dilation schedules have lengths ({}, {}) but n1 = {}, n2 = {}",
                self.dr_schedule_stage2.len(),
                self.dr_schedule_stage3.len(),
                self.n1,
                self.n2
            ));
        }
        for (stage, sched, c, n) in [(2, &self.dr_schedule_stage2, c2, self.n1), (3, &self.dr_schedule_stage3, c3, self.n2)] {
            if let Some(d) = sched.iter().find(|d| !(1..=MAX_BASE_DILATION).contains(d)) {
                return bad(format!("stage {stage} dilation {d} outside 1..={MAX_BASE_DILATION}"));
            }
            if n > 0 && c % 8 != 0 {
                return bad(format!("stage {stage} channels {c} must be a multiple of 8 for MMRFC"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerKind {
    /// 3x3 stride-2 convolution producing `out - in` channels, concatenated
    /// with a 2x2 max-pool of the input; BN + PReLU.
    ConcatConv { in_channels: usize, out_channels: usize },
    Mmrfc { channels: usize, dilation: usize },
    /// `stages` sequential 3x3 stride-2 depthwise convolutions, each with BN + PReLU.
    SeqDwConv { channels: usize, stages: usize },
    /// One 3x3 stride-2 depthwise convolution with BN + PReLU.
    DwConv { channels: usize },
    Concat,
    /// 1x1 convolution to class scores.
    PointwiseClassifier { in_channels: usize, classes: usize },
    BilinearUp { factor: usize },
    /// Plain convolution with bias, "same" padding, no normalization.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        dilation: (usize, usize),
        groups: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::ConcatConv { .. } => "concat-conv",
            LayerKind::Mmrfc { .. } => "mmrfc",
            LayerKind::SeqDwConv { .. } => "seq-dw-conv",
            LayerKind::DwConv { .. } => "dw-conv",
            LayerKind::Concat => "concat",
            LayerKind::PointwiseClassifier { .. } => "pointwise-classifier",
            LayerKind::BilinearUp { .. } => "bilinear-up",
            LayerKind::Conv { .. } => "conv",
        }
    }

    /// Spatial downsampling applied by the layer (upsampling layers return 1).
    pub fn stride(&self) -> usize {
        match self {
            LayerKind::ConcatConv { .. } | LayerKind::DwConv { .. } => 2,
            LayerKind::SeqDwConv { stages, .. } => 1 << stages,
            LayerKind::Conv { stride, .. } => *stride,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        Self {
            name: name.into(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            kind,
        }
    }
}

/// Ordered layer list; every input reference names [`INPUT`] or an earlier layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub input_channels: usize,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

impl GraphSpec {
    pub fn new(input_channels: usize) -> Self {
        Self {
            input_channels,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: LayerSpec) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Checks references, name uniqueness and the single-output rule.
    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<&str> = vec![INPUT];
        for layer in &self.layers {
            if seen.contains(&layer.name.as_str()) {
                return Err(Error::Config(format!("duplicate layer name `{}`", layer.name)));
            }
            if layer.inputs.is_empty() {
                return Err(Error::Config(format!("layer `{}` has no inputs", layer.name)));
            }
            if !matches!(layer.kind, LayerKind::Concat) && layer.inputs.len() != 1 {
                return Err(Error::Config(format!(
                    "layer `{}` of kind {} takes exactly one input",
                    layer.name,
                    layer.kind.name()
                )));
            }
            for input in &layer.inputs {
                if !seen.contains(&input.as_str()) {
                    return Err(Error::Config(format!(
                        "layer `{}` refers to `{input}`, which is not an earlier layer",
                        layer.name
                    )));
                }
            }
            seen.push(&layer.name);
        }
        if !self.layers.is_empty() {
            let outputs = self.output_names();
            if outputs.len() != 1 {
                return Err(Error::Config(format!(
                    "graph must have exactly one output layer, found {outputs:?}"
                )));
            }
        }
        Ok(())
    }

    /// Layers no other layer consumes.
    pub fn output_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| !self.layers.iter().any(|o| o.inputs.contains(&l.name)))
            .map(|l| l.name.as_str())
            .collect()
    }

    pub fn output(&self) -> Option<&LayerSpec> {
        let names = self.output_names();
        match names.as_slice() {
            [one] => self.layer(one),
            _ => None,
        }
    }

    /// Output dims of every layer for an input of `input_dims`.
    pub fn infer_shapes(&self, input_dims: [usize; 4]) -> Result<IndexMap<String, [usize; 4]>> {
        self.validate()?;
        if input_dims[1] != self.input_channels {
            return Err(shape_err!(
                "input has {} channels, graph expects {}",
                input_dims[1],
                self.input_channels
            ));
        }
        let mut shapes: IndexMap<String, [usize; 4]> = IndexMap::new();
        shapes.insert(INPUT.to_string(), input_dims);
        for layer in &self.layers {
            let ins: Vec<[usize; 4]> = layer.inputs.iter().map(|i| shapes[i.as_str()]).collect();
            let out = layer_output_shape(&layer.name, &layer.kind, &ins)?;
            shapes.insert(layer.name.clone(), out);
        }
        shapes.shift_remove(INPUT);
        Ok(shapes)
    }

    /// Spatial multiple the input must satisfy: the largest cumulative
    /// downsampling along any path.
    pub fn required_multiple(&self) -> usize {
        let mut strides: IndexMap<&str, usize> = IndexMap::new();
        strides.insert(INPUT, 1);
        let mut worst = 1;
        for layer in &self.layers {
            let inbound = layer
                .inputs
                .iter()
                .filter_map(|i| strides.get(i.as_str()))
                .copied()
                .max()
                .unwrap_or(1);
            let s = inbound * layer.kind.stride();
            worst = worst.max(s);
            strides.insert(&layer.name, s);
        }
        worst
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

fn halve(name: &str, d: [usize; 4], times: usize) -> Result<[usize; 4]> {
    let f = 1 << times;
    if d[2] % f != 0 || d[3] % f != 0 || d[2] < f || d[3] < f {
        return Err(shape_err!(
            "layer `{name}` downsamples by {f} but input is {}x{}",
            d[2],
            d[3]
        ));
    }
    Ok([d[0], d[1], d[2] / f, d[3] / f])
}

fn expect_channels(name: &str, d: [usize; 4], c: usize) -> Result<()> {
    if d[1] != c {
        return Err(shape_err!("layer `{name}` expects {c} channels, got {}", d[1]));
    }
    Ok(())
}

pub fn layer_output_shape(name: &str, kind: &LayerKind, ins: &[[usize; 4]]) -> Result<[usize; 4]> {
    let first = *ins.first().ok_or_else(|| shape_err!("layer `{name}` has no inputs"))?;
    match *kind {
        LayerKind::ConcatConv { in_channels, out_channels } => {
            expect_channels(name, first, in_channels)?;
            if out_channels <= in_channels {
                return Err(Error::Config(format!(
                    "concat-conv `{name}` must widen channels, got {in_channels} -> {out_channels}"
                )));
            }
            let d = halve(name, first, 1)?;
            Ok([d[0], out_channels, d[2], d[3]])
        }
        LayerKind::Mmrfc { channels, dilation } => {
            MmrfcConfig::new(channels, dilation)?;
            expect_channels(name, first, channels)?;
            Ok(first)
        }
        LayerKind::SeqDwConv { channels, stages } => {
            expect_channels(name, first, channels)?;
            halve(name, first, stages)
        }
        LayerKind::DwConv { channels } => {
            expect_channels(name, first, channels)?;
            halve(name, first, 1)
        }
        LayerKind::Concat => {
            for d in ins {
                if (d[0], d[2], d[3]) != (first[0], first[2], first[3]) {
                    return Err(shape_err!(
                        "concat `{name}` inputs disagree on batch/resolution: {d:?} vs {first:?}"
                    ));
                }
            }
            Ok([first[0], ins.iter().map(|d| d[1]).sum(), first[2], first[3]])
        }
        LayerKind::PointwiseClassifier { in_channels, classes } => {
            expect_channels(name, first, in_channels)?;
            Ok([first[0], classes, first[2], first[3]])
        }
        LayerKind::BilinearUp { factor } => {
            if factor == 0 {
                return Err(Error::Config(format!("bilinear-up `{name}` has factor 0")));
            }
            Ok([first[0], first[1], first[2] * factor, first[3] * factor])
        }
        LayerKind::Conv { in_channels, out_channels, .. } => {
            expect_channels(name, first, in_channels)?;
            let p = plain_conv(kind);
            if p.groups == 0 || in_channels % p.groups != 0 || out_channels % p.groups != 0 {
                return Err(Error::Config(format!("conv `{name}` has invalid groups {}", p.groups)));
            }
            let (h, w) = p.output_hw(first[2], first[3])?;
            Ok([first[0], out_channels, h, w])
        }
    }
}

fn plain_conv(kind: &LayerKind) -> ConvParams {
    match *kind {
        LayerKind::Conv {
            kernel,
            stride,
            dilation,
            groups,
            ..
        } => ConvParams::new(kernel.0, kernel.1)
            .stride(stride, stride)
            .dilation(dilation.0, dilation.1)
            .groups(groups)
            .same_padding(),
        _ => unreachable!("plain_conv on {}", kind.name()),
    }
}

fn strided3x3(groups: usize) -> ConvParams {
    ConvParams::new(3, 3).stride(2, 2).padding(1, 1).groups(groups)
}

/// The EADNet layer graph for `config`.
pub fn eadnet_graph(config: &EadnetConfig) -> Result<GraphSpec> {
    config.validate()?;
    let (c1, c2, c3) = config.stage_channels;
    let mut g = GraphSpec::new(3);
    g.push(LayerSpec::new(
        "cc1",
        LayerKind::ConcatConv {
            in_channels: 3,
            out_channels: c1,
        },
        &[INPUT],
    ));
    g.push(LayerSpec::new(
        "cc2",
        LayerKind::ConcatConv {
            in_channels: c1,
            out_channels: c2,
        },
        &["cc1"],
    ));
    let mut prev = "cc2".to_string();
    for (i, &dr) in config.dr_schedule_stage2.iter().enumerate() {
        let name = format!("s2.mmrfc{i}");
        g.push(LayerSpec::new(name.clone(), LayerKind::Mmrfc { channels: c2, dilation: dr }, &[&prev]));
        prev = name;
    }
    let stage2_out = prev.clone();
    g.push(LayerSpec::new(
        "cc3",
        LayerKind::ConcatConv {
            in_channels: c2,
            out_channels: c3,
        },
        &[&stage2_out],
    ));
    prev = "cc3".to_string();
    for (i, &dr) in config.dr_schedule_stage3.iter().enumerate() {
        let name = format!("s3.mmrfc{i}");
        g.push(LayerSpec::new(name.clone(), LayerKind::Mmrfc { channels: c3, dilation: dr }, &[&prev]));
        prev = name;
    }
    g.push(LayerSpec::new("seq_dw", LayerKind::SeqDwConv { channels: c1, stages: 2 }, &["cc1"]));
    g.push(LayerSpec::new("dw", LayerKind::DwConv { channels: c2 }, &[&stage2_out]));
    g.push(LayerSpec::new("head_concat", LayerKind::Concat, &[&prev, "seq_dw", "dw"]));
    g.push(LayerSpec::new(
        "classifier",
        LayerKind::PointwiseClassifier {
            in_channels: c1 + c2 + c3,
            classes: config.num_classes,
        },
        &["head_concat"],
    ));
    g.push(LayerSpec::new("upsample", LayerKind::BilinearUp { factor: 8 }, &["classifier"]));
    g.validate()?;
    Ok(g)
}

/// Executable interpretation of a [`GraphSpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Model {
    pub spec: GraphSpec,
}

/// Result of a recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: Var,
    pub layers: IndexMap<String, Var>,
}

impl Model {
    pub fn new(spec: GraphSpec) -> Result<Self> {
        spec.validate()?;
        if spec.layers.is_empty() {
            return Err(Error::Config("cannot execute an empty graph".into()));
        }
        Ok(Self { spec })
    }

    /// Registers every layer's parameters (He-normal convolutions, identity
    /// batch norms, PReLU slopes 0.25).
    pub fn register<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        for layer in &self.spec.layers {
            let p = layer.name.as_str();
            match layer.kind {
                LayerKind::ConcatConv { in_channels, out_channels } => {
                    layers::register_conv(store, rng, &format!("{p}.conv"), in_channels, out_channels - in_channels, &strided3x3(1))?;
                    layers::register_bn_prelu(store, &format!("{p}.out"), out_channels)?;
                }
                LayerKind::Mmrfc { channels, dilation } => {
                    build_mmrfc(MmrfcConfig::new(channels, dilation)?, store, p, rng)?;
                }
                LayerKind::SeqDwConv { channels, stages } => {
                    for s in 0..stages {
                        layers::register_conv(store, rng, &format!("{p}.dw{s}"), channels, channels, &strided3x3(channels))?;
                        layers::register_bn_prelu(store, &format!("{p}.dw{s}"), channels)?;
                    }
                }
                LayerKind::DwConv { channels } => {
                    layers::register_conv(store, rng, &format!("{p}.dw"), channels, channels, &strided3x3(channels))?;
                    layers::register_bn_prelu(store, &format!("{p}.dw"), channels)?;
                }
                LayerKind::PointwiseClassifier { in_channels, classes } => {
                    layers::register_conv(store, rng, &format!("{p}.conv"), in_channels, classes, &ConvParams::new(1, 1))?;
                }
                LayerKind::Conv { in_channels, out_channels, .. } => {
                    layers::register_conv(store, rng, &format!("{p}.conv"), in_channels, out_channels, &plain_conv(&layer.kind))?;
                }
                LayerKind::Concat | LayerKind::BilinearUp { .. } => {}
            }
        }
        Ok(())
    }

    /// A freshly initialized store for this graph.
    pub fn init_store<T: Scalar, R: Rng>(&self, rng: &mut R) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        self.register(&mut store, rng)?;
        Ok(store)
    }

    pub fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let m = self.spec.required_multiple();
        if dims[2] % m != 0 || dims[3] % m != 0 || dims[2] == 0 || dims[3] == 0 {
            return Err(shape_err!(
                "input resolution {}x{} is not a multiple of {m}",
                dims[2],
                dims[3]
            ));
        }
        if dims[1] != self.spec.input_channels {
            return Err(shape_err!(
                "input has {} channels, model expects {}",
                dims[1],
                self.spec.input_channels
            ));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, input: Var, mode: Mode) -> Result<ForwardOutput> {
        self.check_input(tape.value(input).dims())?;
        let mut vars: IndexMap<String, Var> = IndexMap::new();
        vars.insert(INPUT.to_string(), input);
        for layer in &self.spec.layers {
            let p = layer.name.as_str();
            let x = vars[layer.inputs[0].as_str()];
            let out = match layer.kind {
                LayerKind::ConcatConv { .. } => {
                    let conv = layers::conv(tape, store, &format!("{p}.conv"), x, strided3x3(1))?;
                    let pool = tape.maxpool2x2(x)?;
                    let cat = tape.concat(&[conv, pool])?;
                    layers::bn_prelu(tape, store, &format!("{p}.out"), cat, mode)?
                }
                LayerKind::Mmrfc { channels, dilation } => {
                    let block = Mmrfc {
                        config: MmrfcConfig::new(channels, dilation)?,
                        prefix: p.to_string(),
                    };
                    block.forward(tape, store, x, mode)?
                }
                LayerKind::SeqDwConv { channels, stages } => {
                    let mut y = x;
                    for s in 0..stages {
                        y = layers::conv(tape, store, &format!("{p}.dw{s}"), y, strided3x3(channels))?;
                        y = layers::bn_prelu(tape, store, &format!("{p}.dw{s}"), y, mode)?;
                    }
                    y
                }
                LayerKind::DwConv { channels } => {
                    let y = layers::conv(tape, store, &format!("{p}.dw"), x, strided3x3(channels))?;
                    layers::bn_prelu(tape, store, &format!("{p}.dw"), y, mode)?
                }
                LayerKind::Concat => {
                    let xs: Vec<Var> = layer.inputs.iter().map(|i| vars[i.as_str()]).collect();
                    tape.concat(&xs)?
                }
                LayerKind::PointwiseClassifier { .. } => layers::conv(tape, store, &format!("{p}.conv"), x, ConvParams::new(1, 1))?,
                LayerKind::BilinearUp { factor } => {
                    let [_, _, h, w] = tape.value(x).dims();
                    tape.bilinear(x, h * factor, w * factor)?
                }
                LayerKind::Conv { .. } => layers::conv(tape, store, &format!("{p}.conv"), x, plain_conv(&layer.kind))?,
            };
            vars.insert(layer.name.clone(), out);
        }
        vars.shift_remove(INPUT);
        let output = *vars.last().expect("non-empty graph").1;
        Ok(ForwardOutput { output, layers: vars })
    }

    /// Inference-mode logits for `input`.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = self.forward(&mut tape, store, x, Mode::Eval)?;
        Ok(tape.value(out.output).clone())
    }
}

/// Builds the EADNet graph, registers its parameters in `store`, and
/// returns the executable model.
pub fn build_eadnet<T: Scalar, R: Rng>(config: &EadnetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Model> {
    let model = Model::new(eadnet_graph(config)?)?;
    model.register(store, rng)?;
    Ok(model)
}

/// Edge-replicates `input` up to the next multiple of `m` in both spatial
/// dims; returns the padded tensor and the original `(h, w)`.
pub fn pad_to_multiple<T: Scalar>(input: &Tensor<T>, m: usize) -> (Tensor<T>, (usize, usize)) {
    let [n, c, h, w] = input.dims();
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    let padded = Tensor::from_fn([n, c, ph, pw], |b, ch, y, x| input.at(b, ch, y.min(h - 1), x.min(w - 1)));
    (padded, (h, w))
}

/// Top-left `h x w` window of every plane.
pub fn crop<T: Scalar>(input: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, c, ih, iw] = input.dims();
    if h > ih || w > iw {
        return Err(shape_err!("crop {h}x{w} larger than {ih}x{iw}"));
    }
    Ok(Tensor::from_fn([n, c, h, w], |b, ch, y, x| input.at(b, ch, y, x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_graph_shapes() {
        let g = eadnet_graph(&EadnetConfig::default()).unwrap();
        let shapes = g.infer_shapes([1, 3, 64, 128]).unwrap();
        assert_eq!(shapes["classifier"], [1, 19, 8, 16]);
        assert_eq!(shapes["upsample"], [1, 19, 64, 128]);
        assert_eq!(shapes["head_concat"][1], 16 + 64 + 128);
        assert_eq!(g.required_multiple(), 8);
        assert_eq!(g.output().unwrap().name, "upsample");
    }

    #[test]
    fn config_validation() {
        assert!(EadnetConfig::default().validate().is_ok());
        let mut c = EadnetConfig::default();
        c.dr_schedule_stage3[0] = 7;
        assert!(c.validate().is_err());
        let mut c = EadnetConfig::default();
        c.n1 = 5;
        assert!(c.validate().is_err());
        let mut c = EadnetConfig::default();
        c.stage_channels = (16, 64, 136);
        assert!(c.validate().is_err());
        assert!(EadnetConfig::default().with_blocks(0, 0).validate().is_ok());
        assert_eq!(EadnetConfig::default().with_blocks(2, 11).dr_schedule_stage3, vec![1, 2, 4, 6, 1, 2, 4, 6, 6, 6, 6]);
    }

    #[test]
    fn spec_validation() {
        let mut g = GraphSpec::new(3);
        g.push(LayerSpec::new("a", LayerKind::DwConv { channels: 3 }, &["nowhere"]));
        assert!(g.validate().is_err());
        let mut g = GraphSpec::new(3);
        g.push(LayerSpec::new("a", LayerKind::DwConv { channels: 3 }, &[INPUT]));
        g.push(LayerSpec::new("b", LayerKind::DwConv { channels: 3 }, &[INPUT]));
        assert!(g.validate().is_err(), "two outputs");
        let mut g = GraphSpec::new(3);
        g.push(LayerSpec::new("a", LayerKind::DwConv { channels: 3 }, &["a"]));
        assert!(g.validate().is_err(), "self reference");
        assert!(GraphSpec::new(3).validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let g = eadnet_graph(&EadnetConfig::default()).unwrap();
        let text = g.to_toml().unwrap();
        assert!(text.contains("kind = \"mmrfc\""));
        assert_eq!(GraphSpec::from_toml(&text).unwrap(), g);
    }

    #[test]
    fn rejects_unaligned_input() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = EadnetConfig {
            num_classes: 4,
            ..EadnetConfig::default()
        }
        .with_blocks(1, 1);
        let model = build_eadnet(&cfg, &mut store, &mut rng).unwrap();
        let err = model.predict(&store, &Tensor::zeros([1, 3, 20, 16])).unwrap_err();
        assert!(err.to_string().contains("multiple of 8"));
        assert_eq!(model.predict(&store, &Tensor::zeros([1, 3, 16, 16])).unwrap().dims(), [1, 4, 16, 16]);
    }

    #[test]
    fn padding_round_trip() {
        let x = Tensor::<f32>::from_fn([1, 1, 5, 3], |_, _, h, w| (h * 3 + w) as f32);
        let (p, (h, w)) = pad_to_multiple(&x, 8);
        assert_eq!(p.dims(), [1, 1, 8, 8]);
        assert_eq!(p.at(0, 0, 7, 7), x.at(0, 0, 4, 2));
        assert_eq!(crop(&p, h, w).unwrap(), x);
    }
}
