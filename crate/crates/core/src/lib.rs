//! Dual-flow ConvMGU video segmentation built from scratch: tensors and
//! reverse-mode differentiation, colour spaces, recurrent cells, the
//! dual-flow network, losses and metrics, classical thresholding
//! baselines, data handling and a training engine.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file name the common instantiations.

pub mod autodiff;
pub mod baselines;
pub mod color;
pub mod conv;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod network;
pub mod recurrent;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use baselines::{BaselineMethod, ThresholdParams};
pub use color::{ColorImage, ColorSpace};
pub use data::{Dataset, DatasetManifest, FrameSequence, Split};
pub use error::{Error, Result};
pub use metrics::{BinaryMask, FocalParams, LabelMask, SegMask};
pub use network::{build_dflow, DFlowConfig, DFlowModel, FlowColor, FlowInputs, Preset};
pub use recurrent::{ConvMguBlock, ConvMguCell, ConvMguStack, Parameterized, UnitHyperparams};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{
    evaluate, gradcheck, load_checkpoint, save_checkpoint, train, EvalReport, LossKind, OptimizerKind,
    SegmentationModel, TrainConfig, TrainRun,
};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ColorImage64 = ColorImage<f64>;
pub type ColorImage32 = ColorImage<f32>;
pub type DFlowModel64 = DFlowModel<f64>;
pub type DFlowModel32 = DFlowModel<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type TrainRun64 = TrainRun<f64, DFlowModel<f64>>;
pub type TrainRun32 = TrainRun<f32, DFlowModel<f32>>;
