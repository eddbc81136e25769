//! Minimal dense-tensor neural core with reverse-mode differentiation.
//!
//! Everything is 64-bit floats on flat row-major buffers. A [`Tape`] records
//! forward operations and replays them backwards to accumulate gradients
//! into named parameters held by a [`ParamStore`]. The op set is exactly
//! what the message-passing models need: matrix-vector products, elementwise
//! arithmetic, smooth activations, concatenation, and scalar reductions.

mod gradcheck;
mod layers;
mod params;
mod tape;

pub use gradcheck::{grad_check, grad_check_with_hook, GradCheckReport};
pub use layers::{gru_step, linear, mlp, Activation};
pub use params::{Init, ParamStore};
pub use tape::{Gradients, Tape, ValueId};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("parameter {name} already exists with shape {existing:?}, requested {requested:?}")]
    ParamShape {
        name: String,
        existing: Vec<usize>,
        requested: Vec<usize>,
    },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

/// Dense row-major tensor of f64. Shape product always equals the data
/// length; externally supplied data must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                context: "Tensor::from_vec",
                expected: shape,
                got: vec![data.len()],
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite("Tensor::from_vec"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, TensorError> {
        let n = data.len();
        Tensor::from_vec(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single entry of a scalar tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar(self.shape.clone()))
        }
    }
}
