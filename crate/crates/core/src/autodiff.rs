//! Reverse-mode differentiation over a linear tape of tensor primitives.
//!
//! Every operation appends a node holding its output value and the ids of
//! its operands. [`Tape::backward`] walks the nodes in exact reverse
//! order, accumulating gradients additively where a value feeds several
//! consumers. Only nodes downstream of a trainable leaf take part, so
//! gradients with respect to constant inputs (video frames, labels) are
//! never computed.

use crate::conv;
use crate::error::{shape_err, Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
    },
    Conv3d {
        x: Var,
        k: Var,
        b: Option<Var>,
    },
    /// `[:, index]` of a `C×T×…` value.
    SliceTime {
        x: Var,
        index: usize,
    },
    Add(Var, Var),
    Hadamard(Var, Var),
    SubFromOne(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    BceLogits {
        z: Var,
        target: Tensor<T>,
    },
    FocalLogits {
        z: Var,
        target: Tensor<T>,
        alpha: T,
        gamma: T,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    trainable: bool,
    needs_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    negate_sigmoid_grad: bool,
}

/// Gradients of a scalar loss with respect to the trainable leaves of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            negate_sigmoid_grad: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flips the sign of every sigmoid adjoint. Exists only so tests can
    /// prove that a gradient check notices a broken gate backward pass.
    #[doc(hidden)]
    pub fn corrupt_sigmoid_backward(&mut self) {
        self.negate_sigmoid_grad = true;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a trainable tensor; it will receive a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Records a detached input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let value = conv::conv2d_same(self.value(x), self.value(k), b.map(|b| self.value(b)))?;
        let ng = self.needs(x) || self.needs(k) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(value, Op::Conv2d { x, k, b }, ng))
    }

    pub fn conv3d(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let value = conv::conv3d_same(self.value(x), self.value(k), b.map(|b| self.value(b)))?;
        let ng = self.needs(x) || self.needs(k) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(value, Op::Conv3d { x, k, b }, ng))
    }

    /// Selects time step `index` from a `C×T×H×W` value, giving `C×H×W`.
    pub fn slice_time(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() < 3 || index >= xs[1] {
            return shape_err("slice_time", format!("index {index} into {xs:?}"));
        }
        let (c, t) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut shape = vec![c];
        shape.extend_from_slice(&xs[2..]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * inner);
        for ch in 0..c {
            let start = (ch * t + index) * inner;
            data.extend_from_slice(&src[start..start + inner]);
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::SliceTime { x, index }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "hadamard", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Hadamard(a, b), ng))
    }

    pub fn sub_from_one(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| T::one() - v);
        let ng = self.needs(a);
        self.push(value, Op::SubFromOne(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.tanh());
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Mean binary cross entropy of `sigmoid(z)` against `target`, evaluated
    /// in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, z: Var, target: &Tensor<T>) -> Result<Var> {
        let value = bce_with_logits_value(self.value(z), target)?;
        let ng = self.needs(z);
        Ok(self.push(
            Tensor::scalar(value),
            Op::BceLogits {
                z,
                target: target.clone(),
            },
            ng,
        ))
    }

    /// Mean focal loss of `sigmoid(z)` against a binary `target`.
    pub fn focal_with_logits(&mut self, z: Var, target: &Tensor<T>, alpha: T, gamma: T) -> Result<Var> {
        let value = focal_with_logits_value(self.value(z), target, alpha, gamma)?;
        let ng = self.needs(z);
        Ok(self.push(
            Tensor::scalar(value),
            Op::FocalLogits {
                z,
                target: target.clone(),
                alpha,
                gamma,
            },
            ng,
        ))
    }

    /// Trainable leaves recorded at or after `start`, in recording order.
    pub fn params_since(&self, start: usize) -> Vec<Var> {
        (start..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .map(Var)
            .collect()
    }

    /// Back-propagates from a scalar `loss`, returning gradients for every
    /// trainable leaf recorded before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }

        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.trainable {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| -> Result<()> {
            if !self.needs(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b } | Op::Conv3d { x, k, b } => {
                let is_3d = matches!(node.op, Op::Conv3d { .. });
                let (xv, kv) = (self.value(*x), self.value(*k));
                let cg = if is_3d {
                    conv::conv3d_same_backward(xv, kv, g)?
                } else {
                    conv::conv2d_same_backward(xv, kv, g)?
                };
                acc(*x, cg.input)?;
                acc(*k, cg.kernel)?;
                if let Some(b) = b {
                    acc(*b, cg.bias)?;
                }
            }
            Op::SliceTime { x, index } => {
                let xs = self.value(*x).shape();
                let (c, t) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let mut full = Tensor::zeros(xs.to_vec());
                let gd = g.data();
                for ch in 0..c {
                    let dst = (ch * t + index) * inner;
                    full.data_mut()[dst..dst + inner].copy_from_slice(&gd[ch * inner..(ch + 1) * inner]);
                }
                acc(*x, full)?;
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Hadamard(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.zip_map(self.value(*b), "hadamard", |x, y| x * y)?)?;
                }
                if self.needs(*b) {
                    acc(*b, g.zip_map(self.value(*a), "hadamard", |x, y| x * y)?)?;
                }
            }
            Op::SubFromOne(a) => acc(*a, g.map(|v| -v))?,
            Op::Sigmoid(a) => {
                let sign = if self.negate_sigmoid_grad { -T::one() } else { T::one() };
                acc(
                    *a,
                    g.zip_map(&node.value, "sigmoid", |gv, s| sign * gv * s * (T::one() - s))?,
                )?;
            }
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, "tanh", |gv, t| gv * (T::one() - t * t))?)?,
            Op::Sum(a) => {
                let gs = g.data()[0];
                acc(*a, Tensor::full(self.value(*a).shape().to_vec(), gs))?;
            }
            Op::BceLogits { z, target } => {
                let zt = self.value(*z);
                let scale = g.data()[0] / T::from_usize_lossy(zt.len());
                acc(*z, zt.zip_map(target, "bce", |z, y| (sigmoid(z) - y) * scale)?)?;
            }
            Op::FocalLogits {
                z,
                target,
                alpha,
                gamma,
            } => {
                let zt = self.value(*z);
                let scale = g.data()[0] / T::from_usize_lossy(zt.len());
                let (alpha, gamma) = (*alpha, *gamma);
                acc(
                    *z,
                    zt.zip_map(target, "focal", |z, y| {
                        let (s, a) = focal_sign(y, alpha);
                        let pt = sigmoid(s * z);
                        let ln_pt = -softplus(-s * z);
                        let q = T::one() - pt;
                        s * a * (gamma * q.powf(gamma) * pt * ln_pt - q.powf(gamma + T::one())) * scale
                    })?,
                )?;
            }
        }
        Ok(())
    }
}

/// Mean binary cross entropy of `sigmoid(z)` against `target`.
pub fn bce_with_logits_value<T: Scalar>(z: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    z.expect_same_shape(target, "bce_with_logits")?;
    let n = T::from_usize_lossy(z.len());
    let total: T = z
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &y)| softplus(z) - y * z)
        .sum();
    Ok(total / n)
}

/// Mean focal loss of `sigmoid(z)` against a binary `target`.
pub fn focal_with_logits_value<T: Scalar>(z: &Tensor<T>, target: &Tensor<T>, alpha: T, gamma: T) -> Result<T> {
    z.expect_same_shape(target, "focal_with_logits")?;
    let n = T::from_usize_lossy(z.len());
    let total: T = z
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &y)| {
            let (s, a) = focal_sign(y, alpha);
            let ln_pt = -softplus(-s * z);
            let pt = sigmoid(s * z);
            -a * (T::one() - pt).powf(gamma) * ln_pt
        })
        .sum();
    Ok(total / n)
}

#[inline]
fn focal_sign<T: Scalar>(y: T, alpha: T) -> (T, T) {
    if y > T::lit(0.5) {
        (T::one(), alpha)
    } else {
        (-T::one(), T::one() - alpha)
    }
}
