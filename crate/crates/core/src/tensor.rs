//! Dense rank-1/rank-2 tensors of `f64` stored row-major.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a tensor. Vectors may be empty; matrices are `rows × cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [n] => Ok(Shape::Vector(n)),
            [r, c] => Ok(Shape::Matrix(r, c)),
            _ => Err(Error::Input(format!(
                "tensors have rank 1 or 2, got dims {dims:?}"
            ))),
        }
    }

    /// `(rows, cols)`, treating a vector as a single column.
    pub fn as_matrix(&self) -> (usize, usize) {
        match *self {
            Shape::Vector(n) => (n, 1),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}×{c}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.len() != data.len() {
            return Err(Error::Input(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(Shape::Matrix(rows, cols), data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged rows".into()));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(Shape::Matrix(n, n));
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `r` of a matrix.
    pub fn row(&self, r: usize) -> &[f64] {
        let (rows, cols) = self.shape.as_matrix();
        assert!(r < rows, "row {r} out of range for {}", self.shape);
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let (rows, cols) = self.shape.as_matrix();
        assert!(r < rows, "row {r} out of range for {}", self.shape);
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Matrix product. A vector right operand is treated as a column and the
    /// result is again a vector.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let Shape::Matrix(m, k) = self.shape else {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape,
                right: rhs.shape,
            });
        };
        let (k2, n) = rhs.shape.as_matrix();
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape,
                right: rhs.shape,
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &rhs.data, &mut out, m, k, n);
        let shape = match rhs.shape {
            Shape::Vector(_) => Shape::Vector(m),
            Shape::Matrix(..) => Shape::Matrix(m, n),
        };
        Ok(Tensor { shape, data: out })
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.shape.as_matrix();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: Shape::Matrix(c, r),
            data: out,
        }
    }

    pub fn zip_map(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape,
                right: rhs.shape,
            });
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Concatenates two vectors, or two matrices with the same row count
    /// along columns.
    pub fn concat(&self, rhs: &Tensor) -> Result<Tensor> {
        match (self.shape, rhs.shape) {
            (Shape::Vector(p), Shape::Vector(q)) => {
                let mut data = Vec::with_capacity(p + q);
                data.extend_from_slice(&self.data);
                data.extend_from_slice(&rhs.data);
                Ok(Tensor::vector(data))
            }
            (Shape::Matrix(r, p), Shape::Matrix(r2, q)) if r == r2 => {
                let mut data = Vec::with_capacity(r * (p + q));
                for i in 0..r {
                    data.extend_from_slice(self.row(i));
                    data.extend_from_slice(rhs.row(i));
                }
                Tensor::matrix(r, p + q, data)
            }
            _ => Err(Error::Dimension {
                op: "concat",
                left: self.shape,
                right: rhs.shape,
            }),
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, all row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if n == 1 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&a[i * k..(i + 1) * k], b);
        }
        return;
    }
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Dimension {
            op: "softmax",
            left: Shape::Vector(0),
            right: Shape::Vector(1),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log(softmax(logits))[index]`, computed without forming the probabilities.
pub(crate) fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits[index] - lse
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
