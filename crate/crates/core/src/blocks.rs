//! Parameterized sub-layers shared by encoder and decoder blocks.

use crate::error::{Error, Result};
use crate::numcore::{layer_norm_row, linear_row, relu_in_place, Matrix, LAYER_NORM_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn apply_row(&self, x: &[f32]) -> Vec<f32> {
        layer_norm_row(x, &self.gain, &self.bias, LAYER_NORM_EPS)
    }
}

/// `ReLU(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Vec<f32>,
    pub w2: Matrix,
    pub b2: Vec<f32>,
}

impl FeedForward {
    pub fn validate(&self, d_model: usize, d_ff: usize) -> Result<()> {
        let ok = self.w1.rows() == d_model
            && self.w1.cols() == d_ff
            && self.b1.len() == d_ff
            && self.w2.rows() == d_ff
            && self.w2.cols() == d_model
            && self.b2.len() == d_model;
        if ok {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "feed-forward shapes do not match d_model={d_model}, d_ff={d_ff}"
            )))
        }
    }

    pub fn apply_row(&self, x: &[f32]) -> Vec<f32> {
        let mut h = linear_row(x, &self.w1, &self.b1);
        relu_in_place(&mut h);
        linear_row(&h, &self.w2, &self.b2)
    }
}

/// Elementwise `a + b`.
pub(crate) fn residual(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
