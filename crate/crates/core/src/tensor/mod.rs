//! Dense f32 tensors and a small reverse-mode gradient tape.
//!
//! Storage is always 32-bit; reductions and convolution inner loops accumulate
//! in 64-bit so finite-difference checks stay stable at desk scale.

mod conv;
mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use graph::{Gradients, Graph, Var};

use rand::Rng;

use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure(numel == data.len(), || {
            format!("shape {:?} needs {} values, got {}", shape, numel, data.len())
        })?;
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel], grad: None }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: Vec::new(), data: vec![value], grad: None }
    }

    /// Uniform samples in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f32, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 })
            .collect();
        Tensor { shape: shape.to_vec(), data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        self.data[0]
    }

    /// `(N, C, H, W)` extents of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        ensure(self.shape.len() == 4, || format!("expected rank-4 tensor, got shape {:?}", self.shape))?;
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let (_, ch, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * ch + c) * h + y) * w + x]
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f32]) -> Result<()> {
        ensure(g.len() == self.data.len(), || {
            format!("gradient length {} does not match tensor length {}", g.len(), self.data.len())
        })?;
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}
