//! Dense `f64` tensors and the handful of kernels the networks need.
//!
//! Tensors are row-major. Image-like data uses `(batch, channels, height,
//! width)`; one-dimensional signals are stored with `height == 1`.

mod conv;
mod gradcheck;
mod io;

pub use conv::{conv_backward, conv_forward, ConvGrads, ConvParams, Padding};
pub(crate) use conv::conv_backward_params;
pub use gradcheck::{grad_check, grad_check_at, GradCheckReport};
pub use io::{read_tensor, read_tensors, write_tensor, write_tensors, MAGIC};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape {
                shape,
                reason: "every dimension must be positive".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                shape,
                reason: format!("expected {expected} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// # Panics
    /// If `shape` is empty or contains a zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "invalid tensor shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// A single-channel 1D signal, shape `(1, 1, 1, n)`.
    pub fn signal(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, 1, 1, values.len().max(1)],
            data: if values.is_empty() {
                vec![0.0]
            } else {
                values.to_vec()
            },
        }
    }

    /// A single-channel plane, shape `(1, 1, h, w)`.
    pub fn plane(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![1, 1, h, w], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Shape as `(n, c, h, w)`; rank-4 only.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape {
                shape: self.shape.clone(),
                reason: "expected a rank-4 (batch, channels, height, width) tensor".into(),
            }),
        }
    }

    /// Height and width of a tensor holding exactly one plane.
    pub fn plane_dims(&self) -> Result<(usize, usize)> {
        let s = &self.shape;
        let (h, w) = match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => {
                let lead: usize = s[..s.len() - 2].iter().product();
                if lead != 1 {
                    return Err(Error::Shape {
                        shape: s.clone(),
                        reason: "expected a single plane".into(),
                    });
                }
                (s[s.len() - 2], s[s.len() - 1])
            }
        };
        Ok((h, w))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape.len() != other.shape.len() {
            return Err(Error::Dimension {
                axis: "rank",
                expected: self.shape.len(),
                got: other.shape.len(),
            });
        }
        for (axis, (&a, &b)) in self.shape.iter().zip(&other.shape).enumerate() {
            if a != b {
                return Err(Error::Dimension {
                    axis: axis_name(axis, self.shape.len()),
                    expected: a,
                    got: b,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn axis_name(axis: usize, rank: usize) -> &'static str {
    if rank == 4 {
        ["batch", "channels", "height", "width"][axis]
    } else {
        ["axis 0", "axis 1", "axis 2", "axis 3", "axis 4+"][axis.min(4)]
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of [`relu`]; the subgradient at exactly zero is zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, |v, g| if v > 0.0 { g } else { 0.0 })
}
