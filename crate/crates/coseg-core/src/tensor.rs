//! Dense `f64` tensors, named trainable parameters, and binary masks.
//!
//! A [`Tensor`] is a plain value: shape plus row-major data. Differentiable
//! computation happens on a [`crate::graph::Graph`], which copies tensor
//! values in as nodes and hands gradients back out. A [`Parameter`] wraps a tensor that requires
//! gradients together with a persistent, additively accumulated gradient
//! buffer.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::CoreError;

/// Dense real-valued array in row-major order.
///
/// Zero extents are permitted (an empty matrix is the neutral element of
/// row concatenation); `product(shape) == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, CoreError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::Dimension(format_args_shape(&shape, data.len())));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// r×c matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, CoreError> {
        Self::new(vec![rows, cols], data)
    }

    /// 1×1 tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Column vector (n×1).
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self {
            shape: vec![n, 1],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrix row count. Rank-1 tensors count as single-column matrices.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.shape[0],
        }
    }

    /// Matrix column count.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            2 => self.shape[1],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    /// Accumulated gradient, if any backward pass has written one.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating it at zero first.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<(), CoreError> {
        if delta.len() != self.data.len() {
            return Err(CoreError::Dimension(alloc::format!(
                "gradient length {} does not match tensor of {} elements",
                delta.len(),
                self.data.len()
            )));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(grad) = &mut self.grad {
            grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn format_args_shape(shape: &[usize], len: usize) -> String {
    alloc::format!(
        "shape {shape:?} implies {} elements, got {len}",
        shape.iter().product::<usize>()
    )
}

/// A named trainable tensor. The wrapped tensor always requires gradients.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: &str, mut tensor: Tensor) -> Self {
        tensor.set_requires_grad(true);
        Self {
            name: name.to_string(),
            tensor,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Index of a parameter inside its [`ParamSet`]; stable for the set's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of uniquely named parameters.
///
/// Registration order is the canonical order for optimizers, checkpoints
/// and gradient checks.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, CoreError> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(CoreError::Contract(alloc::format!(
                "parameter name {name:?} registered twice"
            )));
        }
        self.params.push(Parameter::new(name, tensor));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<(ParamId, &Parameter)> {
        self.params
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar weights across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Checks the name-uniqueness invariant explicitly (used by loaders).
    pub fn names_unique(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.params.iter().all(|p| seen.insert(p.name.clone()))
    }
}

impl fmt::Display for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} parameters, {} scalars",
            self.params.len(),
            self.n_scalars()
        )?;
        for p in &self.params {
            writeln!(f, "  {} {:?}", p.name, p.tensor.shape())?;
        }
        Ok(())
    }
}

/// Binary segmentation mask on a pixel grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, CoreError> {
        if data.len() != width * height {
            return Err(CoreError::Dimension(alloc::format!(
                "mask {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_data_mismatch_is_an_error() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, CoreError::Dimension(_)));
    }

    #[test]
    fn zero_extent_tensor_is_valid() {
        let t = Tensor::new(vec![0, 3], vec![]).unwrap();
        assert_eq!(t.rows(), 0);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn grad_accumulates_additively_and_resets() {
        let mut t = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        t.set_requires_grad(true);
        t.accumulate_grad(&[0.5, 1.0]).unwrap();
        t.accumulate_grad(&[0.5, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0, 2.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut set = ParamSet::new();
        set.register("w", Tensor::scalar(1.0)).unwrap();
        let err = set.register("w", Tensor::scalar(2.0)).unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }
}
