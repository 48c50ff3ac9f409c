//! Central finite-difference verification of the analytic gradients.

use log::warn;
use serde::{Deserialize, Serialize};

use super::{label_target, loss_and_gradients_on, LossKind, SegmentationModel};
use crate::autodiff::Tape;
use crate::data::FrameSequence;
use crate::error::{Error, Result};

/// Parameter count above which a full check gets slow.
const LARGE_MODEL: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error. Central
    /// differences at `step = 1e-6` carry round-off near `1e-10` for losses
    /// of order one, so entries whose gradient is below this floor are
    /// judged on absolute error (`tolerance × floor`) instead.
    pub denominator_floor: f64,
    /// Negates every sigmoid adjoint in the analytic pass. Exists only to
    /// show that the check detects a broken backward pass.
    #[doc(hidden)]
    pub corrupt_sigmoid_backward: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-4,
            denominator_floor: 1e-5,
            corrupt_sigmoid_backward: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

/// Checks every parameter at the default step and floor.
pub fn gradcheck<M: SegmentationModel<f64> + Clone>(
    model: &M,
    sample: &FrameSequence<f64>,
    loss: LossKind,
    tolerance: f64,
) -> Result<GradcheckReport> {
    gradcheck_with(
        model,
        sample,
        loss,
        &GradcheckOptions {
            tolerance,
            ..Default::default()
        },
    )
}

pub fn gradcheck_with<M: SegmentationModel<f64> + Clone>(
    model: &M,
    sample: &FrameSequence<f64>,
    loss: LossKind,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    if !(opts.step > 0.0 && opts.tolerance > 0.0 && opts.denominator_floor >= 0.0) {
        return Err(Error::InvalidConfig(
            "gradcheck step and tolerance must be positive".into(),
        ));
    }
    if model.num_params() > LARGE_MODEL {
        warn!("gradcheck over {} parameters will be slow", model.num_params());
    }
    let mut tape = Tape::new();
    if opts.corrupt_sigmoid_backward {
        tape.corrupt_sigmoid_backward();
    }
    let (value, analytic) = loss_and_gradients_on(tape, model, sample, loss)?;
    let names = model.param_names();
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("analytic gradient of `{}`", names[i])));
    }

    let target = label_target(sample);
    let mut probe = model.clone();
    let eval = |m: &M| -> Result<f64> { loss.value(&m.logits(sample)?, &target) };
    let h = opts.step;
    let mut tensors = Vec::with_capacity(names.len());
    for (t, (name, grad)) in names.into_iter().zip(&analytic).enumerate() {
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for i in 0..grad.len() {
            let orig = probe.params()[t].data()[i];
            probe.params_mut()[t].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.params_mut()[t].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.params_mut()[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("numeric gradient of `{name}`[{i}]")));
            }
            let a = grad.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.denominator_floor);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        tensors.push(TensorCheck {
            name,
            len: grad.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed: max_rel < opts.tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        loss: value,
        passed: tensors.iter().all(|t| t.passed),
        tensors,
    })
}
