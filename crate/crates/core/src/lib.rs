pub mod autograd;
pub mod cli;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod labels;
pub mod layers;
pub mod metrics;
pub mod mmrfc;
pub mod netpbm;
pub mod network;
pub mod ops;
pub mod rf_probe;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use labels::{LabelMap, IGNORE_LABEL};
pub use mmrfc::{build_mmrfc, Mmrfc, MmrfcConfig};
pub use network::{build_eadnet, EadnetConfig, GraphSpec, LayerKind, LayerSpec, Model};
pub use tensor::{BatchNormParams, ConvParams, PReluParams, Scalar, Tensor};
