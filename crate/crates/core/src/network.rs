//! The dual-flow segmentation network.
//!
//! Each flow is a two-layer ConvMGU stack (optionally a residual block)
//! over the input frames rendered in its own colour space. The final-step
//! features of both flows are summed and decoded by one convolution and a
//! sigmoid into a per-pixel target probability for the last frame.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{self, ColorImage, ColorSpace};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Eager, Graph};
use crate::metrics::{SegMask, DEFAULT_THRESHOLD};
use crate::recurrent::uniform_tensor;
use crate::recurrent::{
    block_outputs_graph, check_frames, frames_volume, prefixed, stack_states_graph, BoundCell, ConvMguBlock,
    ConvMguStack, Parameterized,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input rendering for one flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowColor {
    Rgb,
    Hsv,
    Yuv,
    /// Luma channel of YUV only.
    #[serde(rename = "y")]
    YOnly,
}

impl FlowColor {
    pub fn channels(self) -> usize {
        match self {
            Self::YOnly => 1,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Rgb => "rgb",
            Self::Hsv => "hsv",
            Self::Yuv => "yuv",
            Self::YOnly => "y",
        }
    }

    /// Renders an RGB frame into this flow's input tensor.
    pub fn render<T: Scalar>(self, rgb: &ColorImage<T>) -> Result<Tensor<T>> {
        if rgb.space() != ColorSpace::Rgb {
            return Err(Error::WrongColorSpace {
                expected: "RGB",
                actual: rgb.space().name(),
            });
        }
        Ok(match self {
            Self::Rgb => rgb.tensor().clone(),
            Self::Hsv => color::rgb_to_hsv(rgb)?.into_tensor(),
            Self::Yuv => color::rgb_to_yuv(rgb)?.into_tensor(),
            Self::YOnly => color::extract_y(&color::rgb_to_yuv(rgb)?)?,
        })
    }
}

impl fmt::Display for FlowColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlowColor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Self::Rgb),
            "hsv" => Ok(Self::Hsv),
            "yuv" => Ok(Self::Yuv),
            "y" | "y-only" | "yonly" => Ok(Self::YOnly),
            other => Err(Error::InvalidConfig(format!("unknown colour `{other}`"))),
        }
    }
}

/// Parses `rgb`, `rgb+yuv`, `rgb+y`, … into first and optional second flow colours.
pub fn parse_colors(s: &str) -> Result<(FlowColor, Option<FlowColor>)> {
    let parts: Vec<&str> = s.split(['+', ',']).map(str::trim).collect();
    match parts.as_slice() {
        [a] => Ok((a.parse()?, None)),
        [a, b] => Ok((a.parse()?, Some(b.parse()?))),
        _ => Err(Error::InvalidConfig(format!("expected one or two colours, got `{s}`"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 16 feature maps per flow.
    Small,
    /// 40 feature maps per flow.
    Base,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Self::Small),
            "base" => Ok(Self::Base),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DFlowConfig {
    pub flow_a: FlowColor,
    /// `None` for a single-flow network.
    pub flow_b: Option<FlowColor>,
    /// Feature maps κ produced by each flow.
    pub channels: usize,
    /// Recurrent convolution kernel size m.
    pub kernel: usize,
    /// History length: each prediction consumes `k + 1` frames.
    pub k: usize,
    /// Use residual ConvMGU blocks instead of plain stacks.
    pub use_block: bool,
    pub decoder_kernel: usize,
    /// 3D shortcut kernel size f, used only with blocks.
    pub shortcut_kernel: usize,
}

impl Default for DFlowConfig {
    fn default() -> Self {
        Self::preset(Preset::Small)
    }
}

impl DFlowConfig {
    pub fn preset(p: Preset) -> Self {
        Self {
            flow_a: FlowColor::Rgb,
            flow_b: Some(FlowColor::Yuv),
            channels: match p {
                Preset::Small => 16,
                Preset::Base => 40,
            },
            kernel: 3,
            k: 4,
            use_block: false,
            decoder_kernel: 3,
            shortcut_kernel: 3,
        }
    }

    pub fn with_colors(mut self, a: FlowColor, b: Option<FlowColor>) -> Self {
        self.flow_a = a;
        self.flow_b = b;
        self
    }

    pub fn is_dual(&self) -> bool {
        self.flow_b.is_some()
    }

    /// Short label such as `rgb+yuv`.
    pub fn colors_label(&self) -> String {
        match self.flow_b {
            Some(b) => format!("{}+{}", self.flow_a, b),
            None => self.flow_a.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channels must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        for (name, v) in [
            ("kernel", self.kernel),
            ("decoder_kernel", self.decoder_kernel),
            ("shortcut_kernel", self.shortcut_kernel),
        ] {
            if v == 0 || v % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a positive odd integer, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The spatio-temporal encoder of one flow.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowUnit<T> {
    Stack(ConvMguStack<T>),
    Block(ConvMguBlock<T>),
}

impl<T: Scalar> FlowUnit<T> {
    pub fn stack(&self) -> &ConvMguStack<T> {
        match self {
            Self::Stack(s) => s,
            Self::Block(b) => &b.stack,
        }
    }

    fn bind<G: Graph<T>>(&self, g: &mut G) -> BoundFlow<G::Value> {
        let st = self.stack();
        let l1 = st.layer1.bind(g);
        let l2 = st.layer2.bind(g);
        let shortcut = match self {
            Self::Stack(_) => None,
            Self::Block(b) => Some((g.parameter(&b.shortcut_kernel), g.parameter(&b.shortcut_bias))),
        };
        BoundFlow { l1, l2, shortcut }
    }
}

impl<T: Scalar> Parameterized<T> for FlowUnit<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Self::Stack(s) => s.params(),
            Self::Block(b) => b.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Self::Stack(s) => s.params_mut(),
            Self::Block(b) => b.params_mut(),
        }
    }

    fn param_names(&self) -> Vec<String> {
        match self {
            Self::Stack(s) => s.param_names(),
            Self::Block(b) => b.param_names(),
        }
    }
}

pub(crate) struct BoundFlow<V> {
    l1: BoundCell<V>,
    l2: BoundCell<V>,
    shortcut: Option<(V, V)>,
}

pub(crate) struct BoundModel<V> {
    a: BoundFlow<V>,
    b: Option<BoundFlow<V>>,
    dk: V,
    db: V,
}

fn flow_features_graph<T: Scalar, G: Graph<T>>(
    g: &mut G,
    flow: &BoundFlow<G::Value>,
    frames: &[Tensor<T>],
) -> Result<G::Value> {
    let xs: Vec<_> = frames.iter().map(|f| g.input(f)).collect();
    let mut out = match &flow.shortcut {
        None => stack_states_graph(g, &flow.l1, &flow.l2, &xs)?,
        Some((k, b)) => {
            let vol = g.input(&frames_volume(frames)?);
            block_outputs_graph(g, &flow.l1, &flow.l2, (k, b), &xs, &vol, true)?
        }
    };
    Ok(out.pop().expect("non-empty sequence"))
}

/// Decoder-ready inputs of both flows for one prediction.
#[derive(Clone, Debug)]
pub struct FlowInputs<T> {
    pub a: Vec<Tensor<T>>,
    pub b: Option<Vec<Tensor<T>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DFlowModel<T> {
    pub config: DFlowConfig,
    pub flow_a: FlowUnit<T>,
    pub flow_b: Option<FlowUnit<T>>,
    /// `1 × κ × d × d`
    pub decoder_kernel: Tensor<T>,
    pub decoder_bias: Tensor<T>,
}

/// Deterministically initialises a network from `seed`.
pub fn build_dflow<T: Scalar>(config: DFlowConfig, seed: u64) -> Result<DFlowModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flow = |color: FlowColor| -> Result<FlowUnit<T>> {
        let c = color.channels();
        Ok(if config.use_block {
            FlowUnit::Block(ConvMguBlock::random(
                c,
                config.channels,
                config.kernel,
                config.shortcut_kernel,
                &mut rng,
            )?)
        } else {
            FlowUnit::Stack(ConvMguStack::random(c, config.channels, config.kernel, &mut rng)?)
        })
    };
    let flow_a = flow(config.flow_a)?;
    let flow_b = config.flow_b.map(&mut flow).transpose()?;
    let d = config.decoder_kernel;
    let bound = 1.0 / ((config.channels * d * d) as f64).sqrt();
    let decoder_kernel = uniform_tensor(vec![1, config.channels, d, d], bound, &mut rng);
    let model = DFlowModel {
        config,
        flow_a,
        flow_b,
        decoder_kernel,
        decoder_bias: Tensor::zeros(vec![1]),
    };
    model.validate()?;
    Ok(model)
}

impl<T: Scalar> DFlowModel<T> {
    /// Checks that tensor extents agree with the configuration.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.flow_b.is_some() != c.flow_b.is_some() {
            return Err(Error::InvalidConfig("flow count disagrees with configuration".into()));
        }
        let flows = std::iter::once((&self.flow_a, c.flow_a)).chain(self.flow_b.as_ref().zip(c.flow_b));
        for (flow, color) in flows {
            let st = flow.stack();
            if st.input_channels() != color.channels() || st.output_channels() != c.channels {
                return shape_err(
                    "DFlowModel",
                    format!(
                        "flow maps {}→{} channels, config needs {}→{}",
                        st.input_channels(),
                        st.output_channels(),
                        color.channels(),
                        c.channels
                    ),
                );
            }
            if matches!(flow, FlowUnit::Block(_)) != c.use_block {
                return Err(Error::InvalidConfig("flow kind disagrees with use_block".into()));
            }
        }
        let d = c.decoder_kernel;
        if self.decoder_kernel.shape() != [1, c.channels, d, d] || self.decoder_bias.shape() != [1] {
            return shape_err(
                "DFlowModel",
                format!(
                    "decoder kernel {:?} / bias {:?}",
                    self.decoder_kernel.shape(),
                    self.decoder_bias.shape()
                ),
            );
        }
        Ok(())
    }

    pub(crate) fn bind<G: Graph<T>>(&self, g: &mut G) -> BoundModel<G::Value> {
        let a = self.flow_a.bind(g);
        let b = self.flow_b.as_ref().map(|f| f.bind(g));
        let dk = g.parameter(&self.decoder_kernel);
        let db = g.parameter(&self.decoder_bias);
        BoundModel { a, b, dk, db }
    }

    fn check_inputs(&self, inputs: &FlowInputs<T>) -> Result<()> {
        let c = &self.config;
        let want = c.k + 1;
        if inputs.a.len() != want {
            return shape_err(
                "dflow_forward",
                format!("flow a has {} frames, expected {want}", inputs.a.len()),
            );
        }
        let dims_a = check_frames(&inputs.a, c.flow_a.channels())?;
        match (&inputs.b, c.flow_b) {
            (Some(b), Some(color)) => {
                if b.len() != inputs.a.len() {
                    return shape_err(
                        "dflow_forward",
                        format!("sequence lengths differ: {} vs {}", inputs.a.len(), b.len()),
                    );
                }
                let dims_b = check_frames(b, color.channels())?;
                if dims_a != dims_b {
                    return shape_err(
                        "dflow_forward",
                        format!("flow extents differ: {dims_a:?} vs {dims_b:?}"),
                    );
                }
                Ok(())
            }
            (None, None) => Ok(()),
            (None, Some(_)) => Err(Error::InvalidConfig(
                "dual-flow model needs inputs for both flows".into(),
            )),
            (Some(_), None) => Err(Error::InvalidConfig(
                "single-flow model given two input sequences".into(),
            )),
        }
    }

    /// Decoder logits `1×H×W` computed on any graph backend.
    pub(crate) fn logits_graph<G: Graph<T>>(
        &self,
        g: &mut G,
        bound: &BoundModel<G::Value>,
        inputs: &FlowInputs<T>,
    ) -> Result<G::Value> {
        self.check_inputs(inputs)?;
        let mut feats = flow_features_graph(g, &bound.a, &inputs.a)?;
        if let (Some(fb), Some(xb)) = (&bound.b, &inputs.b) {
            let other = flow_features_graph(g, fb, xb)?;
            feats = g.add(&feats, &other)?;
        }
        g.conv2d(&feats, &bound.dk, Some(&bound.db))
    }

    pub fn logits(&self, inputs: &FlowInputs<T>) -> Result<Tensor<T>> {
        let mut g = Eager::new();
        let bound = self.bind(&mut g);
        let z = self.logits_graph(&mut g, &bound, inputs)?;
        Ok((*z).clone())
    }

    /// Target probabilities `1×H×W` for the final frame.
    pub fn probabilities(&self, inputs: &FlowInputs<T>) -> Result<Tensor<T>> {
        Ok(self.logits(inputs)?.map(crate::scalar::sigmoid))
    }

    /// Renders RGB frames into each flow's colour space.
    pub fn render_inputs(&self, frames: &[ColorImage<T>]) -> Result<FlowInputs<T>> {
        let a = frames
            .iter()
            .map(|f| self.config.flow_a.render(f))
            .collect::<Result<_>>()?;
        let b = self
            .config
            .flow_b
            .map(|c| frames.iter().map(|f| c.render(f)).collect::<Result<Vec<_>>>())
            .transpose()?;
        Ok(FlowInputs { a, b })
    }

    /// Segments the last of `k + 1` RGB frames.
    pub fn predict(&self, frames: &[ColorImage<T>]) -> Result<SegMask<T>> {
        let inputs = self.render_inputs(frames)?;
        SegMask::from_probs(self.probabilities(&inputs)?, T::lit(DEFAULT_THRESHOLD))
    }
}

impl<T: Scalar> Parameterized<T> for DFlowModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.flow_a.params();
        if let Some(b) = &self.flow_b {
            p.extend(b.params());
        }
        p.push(&self.decoder_kernel);
        p.push(&self.decoder_bias);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.flow_a.params_mut();
        if let Some(b) = &mut self.flow_b {
            p.extend(b.params_mut());
        }
        p.push(&mut self.decoder_kernel);
        p.push(&mut self.decoder_bias);
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n: Vec<String> = prefixed("flow_a", self.flow_a.param_names()).collect();
        if let Some(b) = &self.flow_b {
            n.extend(prefixed("flow_b", b.param_names()));
        }
        n.push("decoder.kernel".into());
        n.push("decoder.bias".into());
        n
    }
}

/// Dual-flow prediction from pre-rendered frame tensors.
pub fn dflow_forward<T: Scalar>(
    model: &DFlowModel<T>,
    frames_a: &[Tensor<T>],
    frames_b: &[Tensor<T>],
) -> Result<Tensor<T>> {
    if !model.config.is_dual() {
        return Err(Error::InvalidConfig("dflow_forward needs a dual-flow model".into()));
    }
    model.probabilities(&FlowInputs {
        a: frames_a.to_vec(),
        b: Some(frames_b.to_vec()),
    })
}

/// Single-flow prediction from pre-rendered frame tensors.
pub fn single_flow_forward<T: Scalar>(model: &DFlowModel<T>, frames: &[Tensor<T>]) -> Result<Tensor<T>> {
    if model.config.is_dual() {
        return Err(Error::InvalidConfig(
            "single_flow_forward called on a dual-flow model".into(),
        ));
    }
    model.probabilities(&FlowInputs {
        a: frames.to_vec(),
        b: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dual: bool) -> DFlowConfig {
        DFlowConfig {
            flow_a: FlowColor::Rgb,
            flow_b: dual.then_some(FlowColor::Yuv),
            channels: 3,
            kernel: 3,
            k: 2,
            use_block: false,
            decoder_kernel: 3,
            shortcut_kernel: 3,
        }
    }

    fn frames(n: usize, c: usize, h: usize, w: usize, phase: f64) -> Vec<Tensor<f64>> {
        (0..n)
            .map(|t| Tensor::from_fn(vec![c, h, w], |i| 0.5 + 0.4 * ((i + 3 * t) as f64 * 0.71 + phase).sin()))
            .collect()
    }

    #[test]
    fn zero_decoder_gives_half() {
        let mut m = build_dflow::<f64>(tiny(true), 3).unwrap();
        m.decoder_kernel = Tensor::zeros(m.decoder_kernel.shape().to_vec());
        let p = dflow_forward(&m, &frames(3, 3, 5, 6, 0.0), &frames(3, 3, 5, 6, 1.0)).unwrap();
        assert_eq!(p.shape(), &[1, 5, 6]);
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn wrong_arity_rejected() {
        let dual = build_dflow::<f64>(tiny(true), 3).unwrap();
        let single = build_dflow::<f64>(tiny(false), 3).unwrap();
        let f = frames(3, 3, 4, 4, 0.0);
        assert!(single_flow_forward(&dual, &f).is_err());
        assert!(dflow_forward(&single, &f, &f).is_err());
        assert!(dflow_forward(&dual, &f, &f[..2]).is_err());
        assert!(dflow_forward(&dual, &f, &frames(3, 3, 4, 5, 0.0)).is_err());
    }

    #[test]
    fn seeding() {
        let a = build_dflow::<f64>(tiny(true), 11).unwrap();
        let b = build_dflow::<f64>(tiny(true), 11).unwrap();
        let c = build_dflow::<f64>(tiny(true), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn names_match_params() {
        let mut cfg = tiny(true);
        cfg.use_block = true;
        let m = build_dflow::<f64>(cfg, 0).unwrap();
        assert_eq!(m.param_names().len(), m.params().len());
        assert_eq!(m.param_names()[0], "flow_a.layer1.w_f");
        assert!(m.param_names().contains(&"flow_b.shortcut.kernel".to_string()));
    }

    #[test]
    fn parse_color_labels() {
        assert_eq!(parse_colors("rgb+yuv").unwrap(), (FlowColor::Rgb, Some(FlowColor::Yuv)));
        assert_eq!(parse_colors("rgb+y").unwrap(), (FlowColor::Rgb, Some(FlowColor::YOnly)));
        assert_eq!(parse_colors("hsv").unwrap(), (FlowColor::Hsv, None));
        assert!(parse_colors("rgb+yuv+hsv").is_err());
        assert!(parse_colors("lab").is_err());
    }
}
