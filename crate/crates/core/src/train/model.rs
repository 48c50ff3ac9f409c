//! The model interface the training engine drives.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::FrameSequence;
use crate::error::{shape_err, Error, Result};
use crate::network::{build_dflow, DFlowConfig, DFlowModel, FlowColor};
use crate::recurrent::Parameterized;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Configuration needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelHeader {
    Dflow {
        config: DFlowConfig,
    },
    DecoderOnly {
        color: FlowColor,
        kernel: usize,
        bias: bool,
    },
}

/// A per-pixel segmentation model over `history() + 1` frames.
pub trait SegmentationModel<T: Scalar>: Parameterized<T> + Sized {
    /// Number of past frames consumed besides the target frame.
    fn history(&self) -> usize;

    /// Records the forward pass on `tape`, returning `1×H×W` logits and the
    /// parameter leaves in [`Parameterized::params`] order.
    fn record(&self, tape: &mut Tape<T>, seq: &FrameSequence<T>) -> Result<(Var, Vec<Var>)>;

    /// `1×H×W` logits without recording.
    fn logits(&self, seq: &FrameSequence<T>) -> Result<Tensor<T>>;

    fn header(&self) -> ModelHeader;

    /// A model with the layout described by `header`; parameter values are
    /// unspecified and expected to be overwritten.
    fn from_header(header: &ModelHeader) -> Result<Self>;
}

impl<T: Scalar> SegmentationModel<T> for DFlowModel<T> {
    fn history(&self) -> usize {
        self.config.k
    }

    fn record(&self, tape: &mut Tape<T>, seq: &FrameSequence<T>) -> Result<(Var, Vec<Var>)> {
        let inputs = self.render_inputs(&seq.frames)?;
        let start = tape.len();
        let bound = self.bind(tape);
        let params = tape.params_since(start);
        let z = self.logits_graph(tape, &bound, &inputs)?;
        Ok((z, params))
    }

    fn logits(&self, seq: &FrameSequence<T>) -> Result<Tensor<T>> {
        DFlowModel::logits(self, &self.render_inputs(&seq.frames)?)
    }

    fn header(&self) -> ModelHeader {
        ModelHeader::Dflow { config: self.config }
    }

    fn from_header(header: &ModelHeader) -> Result<Self> {
        match header {
            ModelHeader::Dflow { config } => build_dflow(*config, 0),
            other => Err(Error::Checkpoint(format!("expected a dflow model, found {other:?}"))),
        }
    }
}

/// One convolution from the final frame, rendered in `color`, to logits.
/// Useful as a linear reference model for the optimizer and gradient checks.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOnlyModel<T> {
    pub color: FlowColor,
    /// `1 × c × d × d`
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> DecoderOnlyModel<T> {
    pub fn new(color: FlowColor, kernel: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let s = kernel.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != color.channels() || s[2] != s[3] {
            return shape_err(
                "DecoderOnlyModel",
                format!("kernel {s:?} for {} input channels", color.channels()),
            );
        }
        if s[2].is_multiple_of(2) {
            return Err(Error::EvenKernel(s[2]));
        }
        if bias.as_ref().is_some_and(|b| b.shape() != [1]) {
            return shape_err("DecoderOnlyModel", "bias must have shape [1]");
        }
        Ok(Self { color, kernel, bias })
    }
}

impl<T: Scalar> Parameterized<T> for DecoderOnlyModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.kernel).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        std::iter::once(&mut self.kernel).chain(self.bias.as_mut()).collect()
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = vec!["decoder.kernel".to_string()];
        if self.bias.is_some() {
            n.push("decoder.bias".into());
        }
        n
    }
}

impl<T: Scalar> SegmentationModel<T> for DecoderOnlyModel<T> {
    fn history(&self) -> usize {
        0
    }

    fn record(&self, tape: &mut Tape<T>, seq: &FrameSequence<T>) -> Result<(Var, Vec<Var>)> {
        let x = tape.constant(self.color.render(seq.final_frame())?);
        let start = tape.len();
        let k = tape.param(self.kernel.clone());
        let b = self.bias.as_ref().map(|b| tape.param(b.clone()));
        let params = tape.params_since(start);
        Ok((tape.conv2d(x, k, b)?, params))
    }

    fn logits(&self, seq: &FrameSequence<T>) -> Result<Tensor<T>> {
        let x = self.color.render(seq.final_frame())?;
        crate::conv::conv2d_same(&x, &self.kernel, self.bias.as_ref())
    }

    fn header(&self) -> ModelHeader {
        ModelHeader::DecoderOnly {
            color: self.color,
            kernel: self.kernel.shape()[2],
            bias: self.bias.is_some(),
        }
    }

    fn from_header(header: &ModelHeader) -> Result<Self> {
        match *header {
            ModelHeader::DecoderOnly { color, kernel, bias } => Self::new(
                color,
                Tensor::zeros(vec![1, color.channels(), kernel, kernel]),
                bias.then(|| Tensor::zeros(vec![1])),
            ),
            ref other => Err(Error::Checkpoint(format!(
                "expected a decoder-only model, found {other:?}"
            ))),
        }
    }
}
