//! Dense row-major tensors.
//!
//! Only the ranks the two-head model needs are supported: vectors
//! (`[n]`) and matrices (`[m, n]`). Elementwise arithmetic works on any
//! shape; the structured operations (matmul, bias broadcast, row
//! reductions) are matrix-specific. There is no general broadcasting.

use crate::scalar::{pairwise_sum, Scalar};

/// A dense n-dimensional array of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor from raw parts. Panics if the shape does not
    /// cover the data exactly.
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} does not match {} values",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// A rank-1 tensor holding a single scalar.
    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The value of a `[1]` tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "matrix op on shape {:?}", self.shape);
        self.shape[0]
    }

    fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "matrix op on shape {:?}", self.shape);
        self.shape[1]
    }

    fn zip_map(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
        assert_eq!(
            self.shape, other.shape,
            "elementwise op on shapes {:?} and {:?}",
            self.shape, other.shape
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor<S>) -> Tensor<S> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<S>) -> Tensor<S> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<S>) -> Tensor<S> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn neg(&self) -> Tensor<S> {
        self.map(|a| -a)
    }

    pub fn scale(&self, factor: S) -> Tensor<S> {
        self.map(|a| a * factor)
    }

    /// Rectifier with the subgradient-zero convention at the origin.
    pub fn relu(&self) -> Tensor<S> {
        self.map(|a| if a > S::zero() { a } else { S::zero() })
    }

    /// Indicator of strictly positive entries; the derivative of [`relu`](Self::relu).
    pub fn relu_mask(&self) -> Tensor<S> {
        self.map(|a| if a > S::zero() { S::one() } else { S::zero() })
    }

    /// Pairwise sum of all entries as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<S> {
        Tensor::scalar(pairwise_sum(&self.data))
    }

    /// `[m, k] x [k, n] -> [m, n]`, plain triple loop with a fixed
    /// accumulation order.
    pub fn matmul(&self, other: &Tensor<S>) -> Tensor<S> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dims {} vs {}", k, k2);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == S::zero() {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    pub fn transpose(&self) -> Tensor<S> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    /// Adds a length-`n` bias vector to every row of an `[m, n]` matrix.
    pub fn add_bias(&self, bias: &Tensor<S>) -> Tensor<S> {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(bias.shape, [n], "bias shape {:?} for {} cols", bias.shape, n);
        let mut out = self.data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bias.data[j];
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Column sums: `[m, n] -> [n]`.
    pub fn sum_axis0(&self) -> Tensor<S> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); n];
        for i in 0..m {
            for j in 0..n {
                out[j] += self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n],
            data: out,
        }
    }

    /// Row sums: `[m, n] -> [m]`.
    pub fn sum_axis1(&self) -> Tensor<S> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); m];
        for i in 0..m {
            out[i] = pairwise_sum(&self.data[i * n..(i + 1) * n]);
        }
        Tensor {
            shape: vec![m],
            data: out,
        }
    }

    /// Replicates a length-`n` vector over `m` rows: `[n] -> [m, n]`.
    pub fn broadcast_axis0(&self, m: usize) -> Tensor<S> {
        assert_eq!(self.shape.len(), 1, "broadcast of shape {:?}", self.shape);
        let n = self.shape[0];
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&self.data);
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Replicates a length-`m` vector over `n` columns: `[m] -> [m, n]`.
    pub fn broadcast_axis1(&self, n: usize) -> Tensor<S> {
        assert_eq!(self.shape.len(), 1, "broadcast of shape {:?}", self.shape);
        let m = self.shape[0];
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for _ in 0..n {
                out.push(self.data[i]);
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Row-wise softmax of an `[m, n]` matrix, stabilized by the row max.
    pub fn softmax_rows(&self) -> Tensor<S> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let dst = &mut out[i * n..(i + 1) * n];
            let mut denom = S::zero();
            for (d, &z) in dst.iter_mut().zip(row) {
                *d = (z - max).exp();
                denom += *d;
            }
            for d in dst.iter_mut() {
                *d = *d / denom;
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Per-row cross-entropy `logsumexp(z) - z[label]` of an `[m, n]`
    /// logit matrix, stabilized by the row max.
    pub fn xent_rows(&self, labels: &[usize]) -> Vec<S> {
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(labels.len(), m, "{} labels for {} rows", labels.len(), m);
        let mut losses = Vec::with_capacity(m);
        for (i, &label) in labels.iter().enumerate() {
            assert!(label < n, "label {} for {} classes", label, n);
            let row = &self.data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut denom = S::zero();
            for &z in row {
                denom += (z - max).exp();
            }
            losses.push(max + denom.ln() - row[label]);
        }
        losses
    }
}
