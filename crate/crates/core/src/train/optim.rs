//! First-order optimizers.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr } | Self::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            Self::Sgd { .. } => Self::Sgd { lr },
            Self::Adam { beta1, beta2, eps, .. } => Self::Adam { lr, beta1, beta2, eps },
        }
    }

    /// A zero learning rate is accepted so that a frozen run can be used
    /// as a baseline; negative or non-finite rates are not.
    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {lr} must be finite and >= 0"
            )));
        }
        if let Self::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::InvalidConfig(format!(
                    "Adam betas ({beta1}, {beta2}) must lie in [0, 1)"
                )));
            }
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidConfig(format!("Adam epsilon {eps} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Optimizer hyperparameters plus per-parameter state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    /// Number of updates applied so far.
    pub t: u64,
    /// First moments (Adam only; empty for SGD).
    pub m: Vec<Tensor<T>>,
    /// Second moments (Adam only; empty for SGD).
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let (m, v) = match kind {
            OptimizerKind::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (zeros(), zeros()),
        };
        Self { kind, t: 0, m, v }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err(
                "optimizer",
                format!("{} parameters, {} gradients", params.len(), grads.len()),
            );
        }
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g, "optimizer")?;
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                let lr = T::lit(lr);
                for (p, g) in params.into_iter().zip(grads) {
                    for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                if self.m.len() != grads.len() || self.v.len() != grads.len() {
                    return shape_err("adam", "moment count disagrees with parameters");
                }
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let t = T::lit(self.t as f64);
                let c1 = T::one() - b1.powf(t);
                let c2 = T::one() - b2.powf(t);
                let (lr, eps) = (T::lit(lr), T::lit(eps));
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut());
                    for (((pv, &gv), mv), vv) in it {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
