//! Optimization loop, gradient checking, evaluation and checkpoints.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, gradcheck_with, GradcheckOptions, GradcheckReport, TensorCheck};
pub use model::{DecoderOnlyModel, ModelHeader, SegmentationModel};
pub use optim::{Optimizer, OptimizerKind};

use crate::autodiff::{bce_with_logits_value, focal_with_logits_value, Tape};
use crate::data::{Dataset, FrameSequence, Split, WindowRef};
use crate::error::{Error, Result};
use crate::metrics::{
    dice_coefficient, silhouette_score, BinaryMask, FocalParams, SegMask, DEFAULT_SILHOUETTE_SAMPLES, DEFAULT_THRESHOLD,
};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

/// Seed of the pixel sampling used by the silhouette metric in evaluation.
pub const EVAL_SILHOUETTE_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum LossKind {
    #[default]
    Bce,
    Focal {
        alpha: f64,
        gamma: f64,
    },
}

impl LossKind {
    pub fn focal(p: FocalParams) -> Self {
        Self::Focal {
            alpha: p.alpha,
            gamma: p.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Bce => Ok(()),
            Self::Focal { alpha, gamma } => FocalParams { alpha, gamma }.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bce => "bce",
            Self::Focal { .. } => "focal",
        }
    }

    /// Mean loss of logits `z` against a 0/1 target of the same shape.
    pub fn value<T: Scalar>(&self, z: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        match *self {
            Self::Bce => bce_with_logits_value(z, target),
            Self::Focal { alpha, gamma } => focal_with_logits_value(z, target, T::lit(alpha), T::lit(gamma)),
        }
    }

    fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        z: crate::autodiff::Var,
        target: &Tensor<T>,
    ) -> Result<crate::autodiff::Var> {
        match *self {
            Self::Bce => tape.bce_with_logits(z, target),
            Self::Focal { alpha, gamma } => tape.focal_with_logits(z, target, T::lit(alpha), T::lit(gamma)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub steps: u64,
    /// Windows averaged per update.
    pub batch_size: usize,
    /// Seed of the window shuffle.
    pub seed: u64,
    /// Validation runs after every `eval_interval` updates.
    pub eval_interval: u64,
    /// Where [`train`] saves the finished run, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Bce,
            optimizer: OptimizerKind::default(),
            steps: 1000,
            batch_size: 1,
            seed: 0,
            eval_interval: 50,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::InvalidConfig("eval interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the learning curve; `step` counts completed updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_dice: Option<f64>,
}

/// A model together with its optimizer state and learning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun<T, M> {
    pub model: M,
    pub config: TrainConfig,
    pub optimizer: Optimizer<T>,
    pub step: u64,
    pub curve: Vec<CurveRecord>,
}

/// Deterministic window order: epoch `e` is a fresh shuffle drawn from
/// stream `e` of the configured seed, so any step can be located without
/// replaying earlier ones.
struct WindowOrder {
    seed: u64,
    n: usize,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl WindowOrder {
    fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            epoch: None,
            perm: Vec::new(),
        }
    }

    fn at(&mut self, j: u64) -> usize {
        let n = self.n as u64;
        let epoch = j / n;
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        self.perm[(j % n) as usize]
    }
}

fn label_target<T: Scalar>(seq: &FrameSequence<T>) -> Tensor<T> {
    seq.label.to_tensor()
}

/// Loss of one window and its gradient for every parameter tensor.
pub fn loss_and_gradients<T: Scalar, M: SegmentationModel<T>>(
    model: &M,
    seq: &FrameSequence<T>,
    loss: LossKind,
) -> Result<(T, Vec<Tensor<T>>)> {
    loss_and_gradients_on(Tape::new(), model, seq, loss)
}

fn loss_and_gradients_on<T: Scalar, M: SegmentationModel<T>>(
    mut tape: Tape<T>,
    model: &M,
    seq: &FrameSequence<T>,
    loss: LossKind,
) -> Result<(T, Vec<Tensor<T>>)> {
    let (z, params) = model.record(&mut tape, seq)?;
    let l = loss.record(&mut tape, z, &label_target(seq))?;
    let value = tape.value(l).data()[0];
    let mut grads = tape.backward(l)?;
    let out = params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    Ok((value, out))
}

impl<T: Scalar, M: SegmentationModel<T>> TrainRun<T, M> {
    pub fn new(model: M, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, &model.params());
        Ok(Self {
            model,
            config,
            optimizer,
            step: 0,
            curve: Vec::new(),
        })
    }

    /// Trains until `self.step == total_steps`. Calling this on a resumed
    /// run continues the same window order and optimizer state.
    pub fn train_until(&mut self, dataset: &Dataset<T>, total_steps: u64) -> Result<()> {
        let k = self.model.history();
        let train = dataset.windows(Split::Train, k);
        if train.is_empty() {
            return Err(Error::EmptySplit("train".into()));
        }
        let val = dataset.windows(Split::Val, k);
        let batch = self.config.batch_size;
        let mut order = WindowOrder::new(self.config.seed, train.len());
        while self.step < total_steps {
            let mut loss_sum = T::zero();
            let mut grad_sum: Option<Vec<Tensor<T>>> = None;
            for b in 0..batch as u64 {
                let r = train[order.at(self.step * batch as u64 + b)];
                let seq = dataset.sequence(r, k)?;
                let (l, g) = loss_and_gradients(&self.model, &seq, self.config.loss)?;
                loss_sum += l;
                match &mut grad_sum {
                    None => grad_sum = Some(g),
                    Some(acc) => {
                        for (a, gi) in acc.iter_mut().zip(&g) {
                            a.add_assign(gi)?;
                        }
                    }
                }
            }
            let inv = T::one() / T::from_usize_lossy(batch);
            let loss = (loss_sum * inv).as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { step: self.step, loss });
            }
            let mut grads = grad_sum.expect("batch >= 1");
            if batch > 1 {
                for g in &mut grads {
                    *g = g.scale(inv);
                }
            }
            if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
                let name = &self.model.param_names()[pos];
                return Err(Error::NonFinite(format!("gradient of `{name}` at step {}", self.step)));
            }
            self.optimizer.step(self.model.params_mut(), &grads)?;
            self.step += 1;

            let (val_loss, val_dice) = if self.step.is_multiple_of(self.config.eval_interval) && !val.is_empty() {
                let (l, d) = validation(&self.model, dataset, &val, self.config.loss)?;
                info!(
                    "step {}: train loss {loss:.5}, val loss {l:.5}, val dice {d:.4}",
                    self.step
                );
                (Some(l), Some(d))
            } else {
                debug!("step {}: train loss {loss:.5}", self.step);
                (None, None)
            };
            self.curve.push(CurveRecord {
                step: self.step,
                train_loss: loss,
                val_loss,
                val_dice,
            });
        }
        Ok(())
    }
}

/// Runs `config.steps` optimizer updates from a fresh optimizer state and
/// saves a checkpoint if the configuration names one.
pub fn train<T: Scalar, M: SegmentationModel<T>>(
    model: M,
    dataset: &Dataset<T>,
    config: TrainConfig,
) -> Result<TrainRun<T, M>> {
    let steps = config.steps;
    let mut run = TrainRun::new(model, config)?;
    run.train_until(dataset, steps)?;
    if let Some(path) = run.config.checkpoint.clone() {
        save_checkpoint(&run, &path)?;
    }
    Ok(run)
}

fn validation<T: Scalar, M: SegmentationModel<T>>(
    model: &M,
    dataset: &Dataset<T>,
    windows: &[WindowRef],
    loss: LossKind,
) -> Result<(f64, f64)> {
    let k = model.history();
    let (mut l_sum, mut d_sum) = (0.0, 0.0);
    for &r in windows {
        let seq = dataset.sequence(r, k)?;
        let z = model.logits(&seq)?;
        l_sum += loss.value(&z, &label_target(&seq))?.as_f64();
        d_sum += dice_coefficient(&threshold_logits(z)?, &seq.label)?;
    }
    let n = windows.len() as f64;
    Ok((l_sum / n, d_sum / n))
}

fn threshold_logits<T: Scalar>(z: Tensor<T>) -> Result<BinaryMask> {
    Ok(SegMask::from_probs(z.map(sigmoid), T::lit(DEFAULT_THRESHOLD))?.binary)
}

/// Binary prediction for one window.
pub fn predict_mask<T: Scalar, M: SegmentationModel<T>>(model: &M, seq: &FrameSequence<T>) -> Result<BinaryMask> {
    threshold_logits(model.logits(seq)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub source_id: String,
    /// Index of the segmented (final) frame within its source.
    pub frame: usize,
    pub dice: f64,
    pub silhouette: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_dice: f64,
    pub mean_silhouette: f64,
    pub n_windows: usize,
    pub windows: Vec<WindowMetrics>,
}

/// Dice and silhouette of `model` over every window of `split`.
pub fn evaluate<T: Scalar, M: SegmentationModel<T>>(
    model: &M,
    dataset: &Dataset<T>,
    split: Split,
) -> Result<EvalReport> {
    evaluate_with(dataset, split, model.history(), |seq| predict_mask(model, seq))
}

/// Like [`evaluate`] with predictions supplied by `predict`.
pub fn evaluate_with<T: Scalar>(
    dataset: &Dataset<T>,
    split: Split,
    k: usize,
    mut predict: impl FnMut(&FrameSequence<T>) -> Result<BinaryMask>,
) -> Result<EvalReport> {
    let refs = dataset.windows(split, k);
    if refs.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let mut windows = Vec::with_capacity(refs.len());
    for r in refs {
        let seq = dataset.sequence(r, k)?;
        let pred = predict(&seq)?;
        windows.push(WindowMetrics {
            source_id: seq.source_id.clone(),
            frame: r.end,
            dice: dice_coefficient(&pred, &seq.label)?,
            silhouette: silhouette_score(
                &pred,
                seq.final_frame(),
                DEFAULT_SILHOUETTE_SAMPLES,
                EVAL_SILHOUETTE_SEED,
            )?,
        });
    }
    let n = windows.len() as f64;
    Ok(EvalReport {
        mean_dice: windows.iter().map(|w| w.dice).sum::<f64>() / n,
        mean_silhouette: windows.iter().map(|w| w.silhouette).sum::<f64>() / n,
        n_windows: windows.len(),
        windows,
    })
}

/// Learning curve as CSV with header `step,train_loss,val_loss,val_dice`;
/// missing validation values are empty cells.
pub fn curve_csv(curve: &[CurveRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("step,train_loss,val_loss,val_dice\n");
    for r in curve {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.step,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_dice)
        ));
    }
    s
}

pub fn write_curve_csv(path: &Path, curve: &[CurveRecord]) -> Result<()> {
    fs::write(path, curve_csv(curve))?;
    Ok(())
}
