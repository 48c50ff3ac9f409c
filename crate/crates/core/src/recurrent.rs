//! ConvMGU cells, two-layer stacks, residual blocks and their parameter
//! budgets.
//!
//! One cell step computes
//!
//! ```text
//! f_t = sigmoid(W_f * x_t + U_f * h_{t-1} + b_f)
//! h_t = (1 - f_t) ∘ h_{t-1} + f_t ∘ tanh(W_h * x_t + U_h * (f_t ∘ h_{t-1}) + b_h)
//! ```
//!
//! where `*` is a same-padded 2D convolution and `∘` the elementwise product.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{Eager, Graph};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything built from weight and bias tensors.
pub trait Parameterized<T: Scalar> {
    /// Parameter tensors in a fixed order shared with [`Self::params_mut`]
    /// and [`Self::param_names`].
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    fn param_names(&self) -> Vec<String>;

    /// Total number of scalar parameters actually allocated.
    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

pub(crate) fn uniform_tensor<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}

/// A single ConvMGU cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvMguCell<T> {
    pub w_f: Tensor<T>,
    pub u_f: Tensor<T>,
    pub b_f: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_h: Tensor<T>,
}

/// Output of one cell step.
#[derive(Clone, Debug)]
pub struct MguStep<T> {
    pub hidden: Tensor<T>,
    pub gate: Tensor<T>,
}

impl<T: Scalar> ConvMguCell<T> {
    pub fn new(
        w_f: Tensor<T>,
        u_f: Tensor<T>,
        b_f: Tensor<T>,
        w_h: Tensor<T>,
        u_h: Tensor<T>,
        b_h: Tensor<T>,
    ) -> Result<Self> {
        let cell = Self {
            w_f,
            u_f,
            b_f,
            w_h,
            u_h,
            b_h,
        };
        cell.validate()?;
        Ok(cell)
    }

    pub fn zeros(input_channels: usize, hidden_channels: usize, kernel: usize) -> Result<Self> {
        let (c, n, m) = (input_channels, hidden_channels, kernel);
        Self::new(
            Tensor::zeros(vec![n, c, m, m]),
            Tensor::zeros(vec![n, n, m, m]),
            Tensor::zeros(vec![n]),
            Tensor::zeros(vec![n, c, m, m]),
            Tensor::zeros(vec![n, n, m, m]),
            Tensor::zeros(vec![n]),
        )
    }

    /// Uniform fan-in scaled weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (c, n, m) = (input_channels, hidden_channels, kernel);
        let bw = 1.0 / ((c * m * m) as f64).sqrt();
        let bu = 1.0 / ((n * m * m) as f64).sqrt();
        Self::new(
            uniform_tensor(vec![n, c, m, m], bw, rng),
            uniform_tensor(vec![n, n, m, m], bu, rng),
            Tensor::zeros(vec![n]),
            uniform_tensor(vec![n, c, m, m], bw, rng),
            uniform_tensor(vec![n, n, m, m], bu, rng),
            Tensor::zeros(vec![n]),
        )
    }

    fn validate(&self) -> Result<()> {
        let ws = self.w_f.shape();
        if ws.len() != 4 || ws[2] != ws[3] {
            return shape_err("ConvMguCell", format!("W_f must be n×cin×m×m, got {ws:?}"));
        }
        if ws[2].is_multiple_of(2) {
            return Err(Error::EvenKernel(ws[2]));
        }
        let (n, c, m) = (ws[0], ws[1], ws[2]);
        let expect = [
            ("W_h", &self.w_h, vec![n, c, m, m]),
            ("U_f", &self.u_f, vec![n, n, m, m]),
            ("U_h", &self.u_h, vec![n, n, m, m]),
            ("b_f", &self.b_f, vec![n]),
            ("b_h", &self.b_h, vec![n]),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return shape_err(
                    "ConvMguCell",
                    format!("{name} should be {shape:?}, got {:?}", t.shape()),
                );
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.w_f.shape()[1]
    }

    pub fn hidden_channels(&self) -> usize {
        self.w_f.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.w_f.shape()[2]
    }

    pub(crate) fn bind<G: Graph<T>>(&self, g: &mut G) -> BoundCell<G::Value> {
        let mut p = self.params().into_iter().map(|t| g.parameter(t));
        let mut next = || p.next().expect("six cell parameters");
        BoundCell {
            w_f: next(),
            u_f: next(),
            b_f: next(),
            w_h: next(),
            u_h: next(),
            b_h: next(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for ConvMguCell<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w_f, &self.u_f, &self.b_f, &self.w_h, &self.u_h, &self.b_h]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w_f,
            &mut self.u_f,
            &mut self.b_f,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    fn param_names(&self) -> Vec<String> {
        ["w_f", "u_f", "b_f", "w_h", "u_h", "b_h"].map(String::from).to_vec()
    }
}

/// Cell parameters bound into a [`Graph`].
#[derive(Clone, Debug)]
pub(crate) struct BoundCell<V> {
    w_f: V,
    u_f: V,
    b_f: V,
    w_h: V,
    u_h: V,
    b_h: V,
}

/// One cell step on a graph. `h_prev = None` stands for the all-zero
/// initial state, whose recurrent convolutions vanish and are skipped.
pub(crate) fn mgu_step_graph<T: Scalar, G: Graph<T>>(
    g: &mut G,
    cell: &BoundCell<G::Value>,
    x: &G::Value,
    h_prev: Option<&G::Value>,
) -> Result<(G::Value, G::Value)> {
    let wx_f = g.conv2d(x, &cell.w_f, Some(&cell.b_f))?;
    let pre_f = match h_prev {
        Some(h) => {
            let uh = g.conv2d(h, &cell.u_f, None)?;
            g.add(&wx_f, &uh)?
        }
        None => wx_f,
    };
    let f = g.sigmoid(&pre_f);
    let wx_h = g.conv2d(x, &cell.w_h, Some(&cell.b_h))?;
    let h = match h_prev {
        Some(h) => {
            let gated = g.hadamard(&f, h)?;
            let ug = g.conv2d(&gated, &cell.u_h, None)?;
            let pre_c = g.add(&wx_h, &ug)?;
            let cand = g.tanh(&pre_c);
            let keep = g.sub_from_one(&f);
            let kept = g.hadamard(&keep, h)?;
            let fresh = g.hadamard(&f, &cand)?;
            g.add(&kept, &fresh)?
        }
        None => {
            let cand = g.tanh(&wx_h);
            g.hadamard(&f, &cand)?
        }
    };
    Ok((h, f))
}

fn check_step_inputs<T: Scalar>(cell: &ConvMguCell<T>, x: &Tensor<T>, h_prev: &Tensor<T>) -> Result<()> {
    let (xs, hs) = (x.shape(), h_prev.shape());
    if xs.len() != 3 || hs.len() != 3 {
        return shape_err("convmgu_step", format!("x {xs:?}, h {hs:?}"));
    }
    if xs[1..] != hs[1..] {
        return shape_err("convmgu_step", format!("spatial extents differ: x {xs:?}, h {hs:?}"));
    }
    if xs[0] != cell.input_channels() || hs[0] != cell.hidden_channels() {
        return shape_err(
            "convmgu_step",
            format!(
                "cell expects {} input / {} hidden channels, got x {xs:?}, h {hs:?}",
                cell.input_channels(),
                cell.hidden_channels()
            ),
        );
    }
    Ok(())
}

/// Advances a cell by one frame, returning the new hidden state and the gate map.
pub fn convmgu_step<T: Scalar>(cell: &ConvMguCell<T>, x: &Tensor<T>, h_prev: &Tensor<T>) -> Result<MguStep<T>> {
    check_step_inputs(cell, x, h_prev)?;
    let mut g = Eager::new();
    let bound = cell.bind(&mut g);
    let (xv, hv) = (g.input(x), g.input(h_prev));
    let (h, f) = mgu_step_graph(&mut g, &bound, &xv, Some(&hv))?;
    Ok(MguStep {
        hidden: (*h).clone(),
        gate: (*f).clone(),
    })
}

/// Two ConvMGU layers where layer 2 consumes layer 1's hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvMguStack<T> {
    pub layer1: ConvMguCell<T>,
    pub layer2: ConvMguCell<T>,
}

impl<T: Scalar> ConvMguStack<T> {
    pub fn new(layer1: ConvMguCell<T>, layer2: ConvMguCell<T>) -> Result<Self> {
        if layer2.input_channels() != layer1.hidden_channels() {
            return shape_err(
                "ConvMguStack",
                format!(
                    "layer 2 takes {} channels, layer 1 emits {}",
                    layer2.input_channels(),
                    layer1.hidden_channels()
                ),
            );
        }
        Ok(Self { layer1, layer2 })
    }

    pub fn random<R: Rng + ?Sized>(
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let l1 = ConvMguCell::random(input_channels, hidden_channels, kernel, rng)?;
        let l2 = ConvMguCell::random(hidden_channels, hidden_channels, kernel, rng)?;
        Self::new(l1, l2)
    }

    pub fn input_channels(&self) -> usize {
        self.layer1.input_channels()
    }

    pub fn output_channels(&self) -> usize {
        self.layer2.hidden_channels()
    }
}

impl<T: Scalar> Parameterized<T> for ConvMguStack<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.layer1.params();
        p.extend(self.layer2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.layer1.params_mut();
        p.extend(self.layer2.params_mut());
        p
    }

    fn param_names(&self) -> Vec<String> {
        prefixed("layer1", self.layer1.param_names())
            .chain(prefixed("layer2", self.layer2.param_names()))
            .collect()
    }
}

pub(crate) fn prefixed(prefix: &str, names: Vec<String>) -> impl Iterator<Item = String> + '_ {
    names.into_iter().map(move |n| format!("{prefix}.{n}"))
}

/// Runs both layers over `frames` from a zero state; returns the layer-2
/// hidden state after every frame.
pub(crate) fn stack_states_graph<T: Scalar, G: Graph<T>>(
    g: &mut G,
    l1: &BoundCell<G::Value>,
    l2: &BoundCell<G::Value>,
    frames: &[G::Value],
) -> Result<Vec<G::Value>> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut h1: Option<G::Value> = None;
    let mut h2: Option<G::Value> = None;
    let mut out = Vec::with_capacity(frames.len());
    for x in frames {
        let (n1, _) = mgu_step_graph(g, l1, x, h1.as_ref())?;
        let (n2, _) = mgu_step_graph(g, l2, &n1, h2.as_ref())?;
        out.push(n2.clone());
        h1 = Some(n1);
        h2 = Some(n2);
    }
    Ok(out)
}

pub(crate) fn check_frames<T: Scalar>(frames: &[Tensor<T>], channels: usize) -> Result<(usize, usize)> {
    let first = frames.first().ok_or(Error::EmptySequence)?;
    let fs = first.shape();
    if fs.len() != 3 {
        return shape_err("frames", format!("expected C×H×W, got {fs:?}"));
    }
    if fs[0] != channels {
        return shape_err("frames", format!("expected {channels} channels, got {}", fs[0]));
    }
    if let Some(bad) = frames.iter().find(|f| f.shape() != fs) {
        return shape_err("frames", format!("{:?} vs {fs:?}", bad.shape()));
    }
    Ok((fs[1], fs[2]))
}

/// Unrolls a two-layer stack over `frames` from zero state and returns the
/// final layer-2 hidden state.
pub fn stack2_forward<T: Scalar>(
    layer1: &ConvMguCell<T>,
    layer2: &ConvMguCell<T>,
    frames: &[Tensor<T>],
) -> Result<Tensor<T>> {
    let stack = ConvMguStack::new(layer1.clone(), layer2.clone())?;
    check_frames(frames, stack.input_channels())?;
    let mut g = Eager::new();
    let l1 = stack.layer1.bind(&mut g);
    let l2 = stack.layer2.bind(&mut g);
    let xs: Vec<_> = frames.iter().map(|f| g.input(f)).collect();
    let states = stack_states_graph(&mut g, &l1, &l2, &xs)?;
    Ok((**states.last().expect("non-empty")).clone())
}

/// Two-layer stack plus a 3D-convolution shortcut from the raw frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvMguBlock<T> {
    pub stack: ConvMguStack<T>,
    /// `n × γ × f × f × f`
    pub shortcut_kernel: Tensor<T>,
    pub shortcut_bias: Tensor<T>,
}

impl<T: Scalar> ConvMguBlock<T> {
    pub fn new(stack: ConvMguStack<T>, shortcut_kernel: Tensor<T>, shortcut_bias: Tensor<T>) -> Result<Self> {
        let ks = shortcut_kernel.shape();
        if ks.len() != 5 || ks[2] != ks[3] || ks[3] != ks[4] {
            return shape_err("ConvMguBlock", format!("shortcut kernel must be n×γ×f×f×f, got {ks:?}"));
        }
        if ks[2].is_multiple_of(2) {
            return Err(Error::EvenKernel(ks[2]));
        }
        if ks[0] != stack.output_channels() || ks[1] != stack.input_channels() {
            return shape_err(
                "ConvMguBlock",
                format!(
                    "shortcut maps {}→{} channels, stack maps {}→{}",
                    ks[1],
                    ks[0],
                    stack.input_channels(),
                    stack.output_channels()
                ),
            );
        }
        if shortcut_bias.shape() != [ks[0]] {
            return shape_err("ConvMguBlock", format!("shortcut bias {:?}", shortcut_bias.shape()));
        }
        Ok(Self {
            stack,
            shortcut_kernel,
            shortcut_bias,
        })
    }

    pub fn random<R: Rng + ?Sized>(
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        shortcut_kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let stack = ConvMguStack::random(input_channels, hidden_channels, kernel, rng)?;
        let f = shortcut_kernel;
        let bound = 1.0 / ((input_channels * f * f * f) as f64).sqrt();
        let k = uniform_tensor(vec![hidden_channels, input_channels, f, f, f], bound, rng);
        Self::new(stack, k, Tensor::zeros(vec![hidden_channels]))
    }

    pub fn layer1(&self) -> &ConvMguCell<T> {
        &self.stack.layer1
    }

    pub fn layer2(&self) -> &ConvMguCell<T> {
        &self.stack.layer2
    }
}

impl<T: Scalar> Parameterized<T> for ConvMguBlock<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.stack.params();
        p.push(&self.shortcut_kernel);
        p.push(&self.shortcut_bias);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.stack.params_mut();
        p.push(&mut self.shortcut_kernel);
        p.push(&mut self.shortcut_bias);
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = self.stack.param_names();
        n.push("shortcut.kernel".into());
        n.push("shortcut.bias".into());
        n
    }
}

/// Per-step block outputs: layer-2 state at step j plus the shortcut
/// response's time slice j. `volume` is the frames stacked as `γ×T×H×W`.
pub(crate) fn block_outputs_graph<T: Scalar, G: Graph<T>>(
    g: &mut G,
    l1: &BoundCell<G::Value>,
    l2: &BoundCell<G::Value>,
    shortcut: (&G::Value, &G::Value),
    frames: &[G::Value],
    volume: &G::Value,
    only_last: bool,
) -> Result<Vec<G::Value>> {
    let states = stack_states_graph(g, l1, l2, frames)?;
    let residual = g.conv3d(volume, shortcut.0, Some(shortcut.1))?;
    let first = if only_last { states.len() - 1 } else { 0 };
    let mut out = Vec::with_capacity(states.len() - first);
    for (j, s) in states.iter().enumerate().skip(first) {
        let r = g.slice_time(&residual, j)?;
        out.push(g.add(s, &r)?);
    }
    Ok(out)
}

/// Frames `T × (γ×H×W)` rearranged into the `γ×T×H×W` volume the
/// shortcut convolves.
pub(crate) fn frames_volume<T: Scalar>(frames: &[Tensor<T>]) -> Result<Tensor<T>> {
    Tensor::stack(frames)?.swap_outer()
}

/// Runs a block over `frames`, returning per-step outputs stacked as
/// `(k+1) × n × H × W`.
pub fn block_forward<T: Scalar>(block: &ConvMguBlock<T>, frames: &[Tensor<T>]) -> Result<Tensor<T>> {
    check_frames(frames, block.stack.input_channels())?;
    let mut g = Eager::new();
    let l1 = block.stack.layer1.bind(&mut g);
    let l2 = block.stack.layer2.bind(&mut g);
    let sk = g.parameter(&block.shortcut_kernel);
    let sb = g.parameter(&block.shortcut_bias);
    let xs: Vec<_> = frames.iter().map(|f| g.input(f)).collect();
    let vol = g.input(&frames_volume(frames)?);
    let outs = block_outputs_graph(&mut g, &l1, &l2, (&sk, &sb), &xs, &vol, false)?;
    let owned: Vec<Tensor<T>> = outs.iter().map(|o| (**o).clone()).collect();
    Tensor::stack(&owned)
}

/// Topology hyperparameters of a recurrent unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitHyperparams {
    /// 2D convolution kernel size.
    pub m: u64,
    /// Input channels.
    pub gamma: u64,
    /// Number of feature maps.
    pub kappa: u64,
    /// Output channels.
    pub n: u64,
    /// 3D convolution kernel size.
    pub f: u64,
    /// Frames before the current one.
    pub k: u64,
}

impl Default for UnitHyperparams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

impl UnitHyperparams {
    /// The analysis setting: m = 3, γ = 3, κ = 40, n = 40, f = 3.
    pub const REFERENCE: Self = Self {
        m: 3,
        gamma: 3,
        kappa: 40,
        n: 40,
        f: 3,
        k: 4,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("m", self.m),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("n", self.n),
            ("f", self.f),
            ("k", self.k),
        ];
        if let Some((name, _)) = all.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("hyperparameter {name} must be positive")));
        }
        if self.m.is_multiple_of(2) {
            return Err(Error::EvenKernel(self.m as usize));
        }
        if self.f.is_multiple_of(2) {
            return Err(Error::EvenKernel(self.f as usize));
        }
        Ok(())
    }
}

/// The closed-form parameter budgets being compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamFormula {
    /// Two-layer ConvLSTM: `2·4·(m²(γ+κ)+1)·n`.
    ConvLstm2,
    /// ConvMGU block: `2·(m²(γ+κ)+1)·n + (f³·γ+1)·n`.
    MguBlock,
    /// Two-layer ConvMGU stack: `2·(m²(γ+κ)+1)·n`.
    MguStack2,
}

impl ParamFormula {
    pub const ALL: [Self; 3] = [Self::ConvLstm2, Self::MguBlock, Self::MguStack2];

    pub fn name(self) -> &'static str {
        match self {
            Self::ConvLstm2 => "convlstm2",
            Self::MguBlock => "mgu_block",
            Self::MguStack2 => "mgu_stack2",
        }
    }
}

/// Evaluates a parameter-count formula exactly as written, with the
/// `(γ+κ)` factor applied to both layers.
pub fn param_count(kind: ParamFormula, hp: &UnitHyperparams) -> Result<u64> {
    hp.validate()?;
    let gated = (hp.m * hp.m * (hp.gamma + hp.kappa) + 1) * hp.n;
    let shortcut = (hp.f.pow(3) * hp.gamma + 1) * hp.n;
    Ok(match kind {
        ParamFormula::ConvLstm2 => 2 * 4 * gated,
        ParamFormula::MguBlock => 2 * gated + shortcut,
        ParamFormula::MguStack2 => 2 * gated,
    })
}

/// Fractional size reduction of the ConvMGU block relative to the two-layer ConvLSTM.
pub fn block_reduction(hp: &UnitHyperparams) -> Result<f64> {
    let block = param_count(ParamFormula::MguBlock, hp)? as f64;
    let lstm = param_count(ParamFormula::ConvLstm2, hp)? as f64;
    Ok(1.0 - block / lstm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_counts() {
        let hp = UnitHyperparams::REFERENCE;
        assert_eq!(param_count(ParamFormula::ConvLstm2, &hp).unwrap(), 124_160);
        assert_eq!(param_count(ParamFormula::MguBlock, &hp).unwrap(), 34_320);
        assert_eq!(param_count(ParamFormula::MguStack2, &hp).unwrap(), 31_040);
        let r = block_reduction(&hp).unwrap();
        assert!((r - 0.7236).abs() < 1e-4, "{r}");
    }

    #[test]
    fn invalid_hyperparams() {
        let mut hp = UnitHyperparams::REFERENCE;
        hp.n = 0;
        assert!(param_count(ParamFormula::MguStack2, &hp).is_err());
        let mut hp = UnitHyperparams::REFERENCE;
        hp.m = 4;
        assert!(matches!(
            param_count(ParamFormula::ConvLstm2, &hp),
            Err(Error::EvenKernel(4))
        ));
    }

    #[test]
    fn actual_sizes() {
        let cell = ConvMguCell::<f64>::zeros(1, 1, 1).unwrap();
        assert_eq!(cell.num_params(), 6);
        let cell = ConvMguCell::<f64>::zeros(3, 40, 3).unwrap();
        assert_eq!(cell.num_params(), 31_040);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = ConvMguBlock::<f64>::random(3, 40, 3, 3, &mut rng).unwrap();
        assert_eq!(block.shortcut_kernel.len() + block.shortcut_bias.len(), 3280);
        // Layer 2 really sees n input channels, unlike the closed form.
        assert_eq!(block.stack.num_params(), 31_040 + 57_680);
        assert_eq!(block.num_params(), 31_040 + 57_680 + 3280);
    }

    #[test]
    fn zero_cell_halves_state() {
        let cell = ConvMguCell::<f64>::zeros(2, 3, 3).unwrap();
        let x = Tensor::from_fn(vec![2, 4, 4], |i| i as f64);
        let h = Tensor::from_fn(vec![3, 4, 4], |i| (i as f64 * 0.1).sin());
        let s = convmgu_step(&cell, &x, &h).unwrap();
        assert!(s.gate.data().iter().all(|&v| v == 0.5));
        assert_eq!(s.hidden, h.scale(0.5));
    }

    #[test]
    fn saturated_gate_with_zero_candidate() {
        let mut cell = ConvMguCell::<f64>::zeros(1, 2, 3).unwrap();
        cell.b_f = Tensor::full(vec![2], 20.0);
        let x = Tensor::full(vec![1, 4, 4], 0.3);
        let h = Tensor::from_fn(vec![2, 4, 4], |i| ((i % 5) as f64 - 2.0) / 2.0);
        let s = convmgu_step(&cell, &x, &h).unwrap();
        assert!(s.hidden.data().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn step_input_errors() {
        let cell = ConvMguCell::<f64>::zeros(2, 3, 3).unwrap();
        let x = Tensor::zeros(vec![2, 4, 4]);
        assert!(convmgu_step(&cell, &x, &Tensor::zeros(vec![3, 4, 5])).is_err());
        assert!(convmgu_step(&cell, &Tensor::zeros(vec![1, 4, 4]), &Tensor::zeros(vec![3, 4, 4])).is_err());
        assert!(ConvMguCell::<f64>::zeros(2, 3, 2).is_err());
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = ConvMguStack::<f64>::random(3, 2, 3, &mut rng).unwrap();
        assert!(matches!(
            stack2_forward(&st.layer1, &st.layer2, &[]),
            Err(Error::EmptySequence)
        ));
        let b = ConvMguBlock::<f64>::random(3, 2, 3, 3, &mut rng).unwrap();
        assert!(matches!(block_forward(&b, &[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn zero_stack_on_single_frame_is_zero() {
        let l1 = ConvMguCell::<f64>::zeros(3, 4, 3).unwrap();
        let l2 = ConvMguCell::<f64>::zeros(4, 4, 3).unwrap();
        let x = Tensor::from_fn(vec![3, 5, 5], |i| i as f64 / 75.0);
        let y = stack2_forward(&l1, &l2, &[x]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
