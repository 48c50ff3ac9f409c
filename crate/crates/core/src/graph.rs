//! Evaluation backends for model code.
//!
//! Network definitions are written once against [`Graph`] and run either
//! eagerly ([`Eager`], nothing retained) or recorded on a [`Tape`] for
//! differentiation.

use std::marker::PhantomData;
use std::rc::Rc;

use crate::autodiff::{Tape, Var};
use crate::conv;
use crate::error::Result;
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

pub trait Graph<T: Scalar> {
    type Value: Clone;

    /// Input data that is never differentiated.
    fn input(&mut self, t: &Tensor<T>) -> Self::Value;
    /// A model parameter; on a tape it becomes a trainable leaf.
    fn parameter(&mut self, t: &Tensor<T>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv2d(&mut self, x: &Self::Value, k: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value>;
    fn conv3d(&mut self, x: &Self::Value, k: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value>;
    fn slice_time(&mut self, x: &Self::Value, index: usize) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn hadamard(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub_from_one(&mut self, a: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value;
    fn tanh(&mut self, a: &Self::Value) -> Self::Value;
}

/// Immediate evaluation without recording.
#[derive(Debug, Default)]
pub struct Eager<T>(PhantomData<T>);

impl<T> Eager<T> {
    pub fn new() -> Self {
        Self(PhantomData)
    }
}

impl<T: Scalar> Graph<T> for Eager<T> {
    type Value = Rc<Tensor<T>>;

    fn input(&mut self, t: &Tensor<T>) -> Self::Value {
        Rc::new(t.clone())
    }

    fn parameter(&mut self, t: &Tensor<T>) -> Self::Value {
        Rc::new(t.clone())
    }

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, x: &Self::Value, k: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value> {
        conv::conv2d_same(x, k, b.map(|b| &**b)).map(Rc::new)
    }

    fn conv3d(&mut self, x: &Self::Value, k: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value> {
        conv::conv3d_same(x, k, b.map(|b| &**b)).map(Rc::new)
    }

    fn slice_time(&mut self, x: &Self::Value, index: usize) -> Result<Self::Value> {
        x.swap_outer()?.index_outer(index).map(Rc::new)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.zip_map(b, "add", |x, y| x + y).map(Rc::new)
    }

    fn hadamard(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.zip_map(b, "hadamard", |x, y| x * y).map(Rc::new)
    }

    fn sub_from_one(&mut self, a: &Self::Value) -> Self::Value {
        Rc::new(a.map(|v| T::one() - v))
    }

    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value {
        Rc::new(a.map(sigmoid))
    }

    fn tanh(&mut self, a: &Self::Value) -> Self::Value {
        Rc::new(a.map(|v| v.tanh()))
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Value = Var;

    fn input(&mut self, t: &Tensor<T>) -> Var {
        self.constant(t.clone())
    }

    fn parameter(&mut self, t: &Tensor<T>) -> Var {
        self.param(t.clone())
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        Tape::value(self, *v)
    }

    fn conv2d(&mut self, x: &Var, k: &Var, b: Option<&Var>) -> Result<Var> {
        Tape::conv2d(self, *x, *k, b.copied())
    }

    fn conv3d(&mut self, x: &Var, k: &Var, b: Option<&Var>) -> Result<Var> {
        Tape::conv3d(self, *x, *k, b.copied())
    }

    fn slice_time(&mut self, x: &Var, index: usize) -> Result<Var> {
        Tape::slice_time(self, *x, index)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }

    fn hadamard(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::hadamard(self, *a, *b)
    }

    fn sub_from_one(&mut self, a: &Var) -> Var {
        Tape::sub_from_one(self, *a)
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        Tape::sigmoid(self, *a)
    }

    fn tanh(&mut self, a: &Var) -> Var {
        Tape::tanh(self, *a)
    }
}
