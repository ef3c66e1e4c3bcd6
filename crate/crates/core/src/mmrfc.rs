//! Multi-scale multi-shape receptive field convolution (MMRFC) block.
//!
//! Branch-merge part: four branches, each a 1x1 reduction to `C/8`
//! channels, a vertical 3x1 convolution and a horizontal 1x3 convolution
//! with PReLU in between. Branch 1 uses full convolutions at dilation
//! (1, 1); branches 2-4 are depthwise at dilations `(dr, dr)`,
//! `(2dr, 4dr)` and `(4dr, 2dr)`. The branch outputs are concatenated to
//! `C/2` channels.
//!
//! Transform-fusion part: a 3x3 depthwise convolution over those `C/2`
//! channels, concatenated with its own input back to `C` channels, then a
//! 1x1 convolution `C -> C`.
//!
//! Normalization placement: BN + PReLU after each branch's 1x1 and after its
//! 1x3, and after the fusing 1x1.

use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{self, Mode};
use crate::tensor::{ConvParams, Scalar};

pub const MAX_CHANNELS: usize = 128;
pub const MAX_BASE_DILATION: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MmrfcConfig {
    pub channels: usize,
    pub base_dilation: usize,
}

impl MmrfcConfig {
    pub fn new(channels: usize, base_dilation: usize) -> Result<Self> {
        let cfg = Self {
            channels,
            base_dilation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels % 8 != 0 || self.channels > MAX_CHANNELS {
            return Err(Error::Config(format!(
                "MMRFC channels must be a positive multiple of 8 no larger than {MAX_CHANNELS}, got {}",
                self.channels
            )));
        }
        if !(1..=MAX_BASE_DILATION).contains(&self.base_dilation) {
            return Err(Error::Config(format!(
                "MMRFC base dilation must be in 1..={MAX_BASE_DILATION}, got {}",
                self.base_dilation
            )));
        }
        Ok(())
    }

    /// Channels per branch, `C / 8`.
    pub fn branch_channels(&self) -> usize {
        self.channels / 8
    }

    pub fn branches(&self) -> [BranchSpec; 4] {
        [1, 2, 3, 4].map(|i| BranchSpec::new(i, self.base_dilation).expect("index in 1..=4"))
    }

    /// Largest dilation used by any asymmetric convolution, `4 * dr`.
    pub fn max_dilation(&self) -> usize {
        self.branches()
            .iter()
            .map(|b| b.dilation.0.max(b.dilation.1))
            .max()
            .unwrap_or(0)
    }
}

/// One branch of the branch-merge part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    /// 1-based branch index.
    pub index: usize,
    /// Dilation of the 3x1 convolution, then of the 1x3 convolution.
    pub dilation: (usize, usize),
    pub depthwise: bool,
}

impl BranchSpec {
    pub fn new(index: usize, base_dilation: usize) -> Result<Self> {
        let dr = base_dilation;
        let dilation = match index {
            1 => (1, 1),
            2 => (dr, dr),
            3 => (2 * dr, 4 * dr),
            4 => (4 * dr, 2 * dr),
            _ => return Err(Error::InvalidArgument(format!("branch index {index} not in 1..=4"))),
        };
        Ok(Self {
            index,
            dilation,
            depthwise: index != 1,
        })
    }

    pub fn vertical_conv(&self, channels: usize) -> ConvParams {
        ConvParams::new(3, 1)
            .dilation(self.dilation.0, 1)
            .groups(if self.depthwise { channels } else { 1 })
            .same_padding()
    }

    pub fn horizontal_conv(&self, channels: usize) -> ConvParams {
        ConvParams::new(1, 3)
            .dilation(1, self.dilation.1)
            .groups(if self.depthwise { channels } else { 1 })
            .same_padding()
    }
}

/// `(height, width)` of the rectangle a branch sees: a dilated 3x1 followed
/// by a dilated 1x3 spans `2 * d1 + 1` rows and `2 * d2 + 1` columns.
pub fn branch_receptive_field(spec: &BranchSpec) -> (usize, usize) {
    (2 * spec.dilation.0 + 1, 2 * spec.dilation.1 + 1)
}

/// A registered block: its configuration and parameter-name prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mmrfc {
    pub config: MmrfcConfig,
    pub prefix: String,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct MmrfcTrace {
    /// Output of each branch before merging, `C/8` channels each.
    pub branches: [Var; 4],
    /// Concatenated branches, `C/2` channels.
    pub merged: Var,
    /// Skip plus 3x3 depthwise output, `C` channels.
    pub fusion_concat: Var,
    pub output: Var,
}

fn pointwise() -> ConvParams {
    ConvParams::new(1, 1)
}

fn fusion_depthwise(half: usize) -> ConvParams {
    ConvParams::new(3, 3).groups(half).same_padding()
}

/// Registers every parameter of a block under `prefix` and returns its handle.
pub fn build_mmrfc<T: Scalar, R: Rng>(
    config: MmrfcConfig,
    store: &mut ParamStore<T>,
    prefix: &str,
    rng: &mut R,
) -> Result<Mmrfc> {
    config.validate()?;
    let c = config.channels;
    let cb = config.branch_channels();
    for b in config.branches() {
        let bp = format!("{prefix}.b{}", b.index);
        layers::register_conv(store, rng, &format!("{bp}.pw"), c, cb, &pointwise())?;
        layers::register_bn_prelu(store, &format!("{bp}.pw"), cb)?;
        layers::register_conv(store, rng, &format!("{bp}.conv3x1"), cb, cb, &b.vertical_conv(cb))?;
        layers::register_prelu(store, &format!("{bp}.mid_act"), cb)?;
        layers::register_conv(store, rng, &format!("{bp}.conv1x3"), cb, cb, &b.horizontal_conv(cb))?;
        layers::register_bn_prelu(store, &format!("{bp}.out"), cb)?;
    }
    let half = c / 2;
    layers::register_conv(store, rng, &format!("{prefix}.fuse.dw3x3"), half, half, &fusion_depthwise(half))?;
    layers::register_conv(store, rng, &format!("{prefix}.fuse.pw"), c, c, &pointwise())?;
    layers::register_bn_prelu(store, &format!("{prefix}.fuse.pw"), c)?;
    Ok(Mmrfc {
        config,
        prefix: prefix.to_string(),
    })
}

impl Mmrfc {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        self.forward_traced(tape, store, x, mode).map(|t| t.output)
    }

    /// Output dims equal input dims.
    pub fn forward_traced<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<MmrfcTrace> {
        let c = self.config.channels;
        if tape.value(x).c() != c {
            return Err(Error::Shape(format!(
                "MMRFC `{}` expects {c} channels, got {}",
                self.prefix,
                tape.value(x).c()
            )));
        }
        let cb = self.config.branch_channels();
        let p = &self.prefix;
        let mut outs = Vec::with_capacity(4);
        for b in self.config.branches() {
            let bp = format!("{p}.b{}", b.index);
            let y = layers::conv(tape, store, &format!("{bp}.pw"), x, pointwise())?;
            let y = layers::bn_prelu(tape, store, &format!("{bp}.pw"), y, mode)?;
            let y = layers::conv(tape, store, &format!("{bp}.conv3x1"), y, b.vertical_conv(cb))?;
            let y = layers::prelu(tape, store, &format!("{bp}.mid_act"), y)?;
            let y = layers::conv(tape, store, &format!("{bp}.conv1x3"), y, b.horizontal_conv(cb))?;
            outs.push(layers::bn_prelu(tape, store, &format!("{bp}.out"), y, mode)?);
        }
        let branches: [Var; 4] = outs.try_into().expect("four branches");
        let merged = tape.concat(&branches)?;
        let dw = layers::conv(tape, store, &format!("{p}.fuse.dw3x3"), merged, fusion_depthwise(c / 2))?;
        let fusion_concat = tape.concat(&[merged, dw])?;
        let y = layers::conv(tape, store, &format!("{p}.fuse.pw"), fusion_concat, pointwise())?;
        let output = layers::bn_prelu(tape, store, &format!("{p}.fuse.pw"), y, mode)?;
        Ok(MmrfcTrace {
            branches,
            merged,
            fusion_concat,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_bounds() {
        assert!(MmrfcConfig::new(128, 6).is_ok());
        assert!(MmrfcConfig::new(136, 1).is_err());
        assert!(MmrfcConfig::new(12, 1).is_err());
        assert!(MmrfcConfig::new(0, 1).is_err());
        assert!(MmrfcConfig::new(64, 0).is_err());
        assert!(MmrfcConfig::new(64, 7).is_err());
    }

    #[test]
    fn dilation_scheme() {
        let cfg = MmrfcConfig::new(64, 3).unwrap();
        let d: Vec<_> = cfg.branches().iter().map(|b| b.dilation).collect();
        assert_eq!(d, vec![(1, 1), (3, 3), (6, 12), (12, 6)]);
        assert_eq!(cfg.max_dilation(), 12);
        assert!(!cfg.branches()[0].depthwise);
        assert!(cfg.branches()[1..].iter().all(|b| b.depthwise));
    }

    #[test]
    fn receptive_rectangles() {
        for dr in 1..=6 {
            assert_eq!(branch_receptive_field(&BranchSpec::new(1, dr).unwrap()), (3, 3));
        }
        assert_eq!(branch_receptive_field(&BranchSpec::new(2, 6).unwrap()), (13, 13));
        assert_eq!(branch_receptive_field(&BranchSpec::new(3, 6).unwrap()), (25, 49));
        assert_eq!(branch_receptive_field(&BranchSpec::new(4, 6).unwrap()), (49, 25));
    }

    #[test]
    fn smallest_block_compresses_to_one_channel() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = build_mmrfc(MmrfcConfig::new(8, 1).unwrap(), &mut store, "m", &mut rng).unwrap();
        assert_eq!(store.get("m.b1.pw.weight").unwrap().dims(), [1, 8, 1, 1]);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([1, 8, 5, 5], 0.5));
        let t = block.forward_traced(&mut tape, &store, x, Mode::Eval).unwrap();
        for b in t.branches {
            assert_eq!(tape.value(b).c(), 1);
        }
        assert_eq!(tape.value(t.merged).c(), 4);
        assert_eq!(tape.value(t.fusion_concat).c(), 8);
        assert_eq!(tape.value(t.output).dims(), [1, 8, 5, 5]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = build_mmrfc(MmrfcConfig::new(16, 1).unwrap(), &mut store, "m", &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([1, 8, 4, 4]));
        assert!(block.forward(&mut tape, &store, x, Mode::Eval).is_err());
    }
}
