//! Dense row-major tensors and the forward kernels shared by the tape and
//! by plain inference code.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::scalar::{c, Element};

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor, checking that `data` fills `shape` exactly and that
    /// every extent is positive.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(alloc::format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor::new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Identity matrix of order `n`.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensors have rank >= 1")
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::shape(op, &self.shape, &[0, 0])),
        }
    }

    pub fn at2(&self, row: usize, col: usize) -> T {
        self.data[row * self.shape[1] + col]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| if v.abs() > acc { v.abs() } else { acc })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Adds a bias vector of length `n` to every last-dimension slice of
    /// `self`. This is the only broadcast the crate supports.
    pub fn add_bias(&self, bias: &Self) -> Result<Self> {
        let n = self.last_dim();
        if bias.rank() != 1 || bias.len() != n {
            return Err(Error::shape("add_bias", &self.shape, &bias.shape));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(n) {
            for (a, &b) in row.iter_mut().zip(&bias.data) {
                *a = *a + b;
            }
        }
        Ok(out)
    }

    /// Column sums of a tensor viewed as `[rows x last_dim]`.
    pub(crate) fn sum_leading(&self) -> Self {
        let n = self.last_dim();
        let mut out = vec![T::zero(); n];
        for row in self.data.chunks(n) {
            for (a, &b) in out.iter_mut().zip(row) {
                *a = *a + b;
            }
        }
        Tensor {
            shape: vec![n],
            data: out,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose")?;
        Ok(Tensor::from_fn(&[n, m], |idx| {
            let (j, i) = (idx / m, idx % m);
            self.data[i * n + j]
        }))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&self, index: usize) -> Result<Self> {
        let (m, n) = self.dims2("row")?;
        if index >= m {
            return Err(Error::shape("row", &self.shape, &[index]));
        }
        Ok(Tensor {
            shape: vec![n],
            data: self.data[index * n..(index + 1) * n].to_vec(),
        })
    }

    /// Columns `start..start + width` of a matrix.
    pub fn narrow_cols(&self, start: usize, width: usize) -> Result<Self> {
        let (m, n) = self.dims2("narrow_cols")?;
        if width == 0 || start + width > n {
            return Err(Error::shape("narrow_cols", &self.shape, &[start, width]));
        }
        let mut data = Vec::with_capacity(m * width);
        for row in self.data.chunks(n) {
            data.extend_from_slice(&row[start..start + width]);
        }
        Ok(Tensor {
            shape: vec![m, width],
            data,
        })
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_cols")?;
            if pm != m {
                return Err(Error::shape("concat_cols", &first.shape, &p.shape));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, n) = first.dims2("concat_rows")?;
        let mut m = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pm, pn) = p.dims2("concat_rows")?;
            if pn != n {
                return Err(Error::shape("concat_rows", &first.shape, &p.shape));
            }
            m += pm;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    /// Softmax over every last-dimension slice, with max subtraction.
    pub fn softmax_lastdim(&self) -> Self {
        let n = self.last_dim();
        let mut out = self.clone();
        for row in out.data.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp_m();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        out
    }

    /// Layer normalization over the last dimension. Also returns the
    /// standardized input and the per-slice inverse standard deviation,
    /// which the backward rule reuses.
    pub fn layer_norm(
        &self,
        gain: &Self,
        bias: &Self,
        eps: T,
    ) -> Result<(Self, Self, Vec<T>)> {
        let n = self.last_dim();
        if n < 2 {
            return Err(Error::Contract("layer_norm needs at least 2 features".into()));
        }
        if gain.shape != [n] {
            return Err(Error::shape("layer_norm", &self.shape, &gain.shape));
        }
        if bias.shape != [n] {
            return Err(Error::shape("layer_norm", &self.shape, &bias.shape));
        }
        let nf: T = c(n as f64);
        let mut xhat = self.clone();
        let mut inv_stds = Vec::with_capacity(self.len() / n);
        for row in xhat.data.chunks_mut(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv_std = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
            inv_stds.push(inv_std);
        }
        let mut out = xhat.clone();
        for row in out.data.chunks_mut(n) {
            for ((v, &g), &b) in row.iter_mut().zip(&gain.data).zip(&bias.data) {
                *v = *v * g + b;
            }
        }
        Ok((out, xhat, inv_stds))
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn gelu(&self) -> Self {
        self.map(gelu)
    }

    /// Index of the largest entry of every last-dimension slice; ties go to
    /// the lowest index.
    pub fn argmax_lastdim(&self) -> Vec<usize> {
        let n = self.last_dim();
        self.data
            .chunks(n)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp_m())
    } else {
        let e = v.exp_m();
        e / (T::one() + e)
    }
}

/// Standard normal CDF.
pub(crate) fn normal_cdf<T: Element>(v: T) -> T {
    c::<T>(0.5) * (T::one() + (v * c(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu<T: Element>(v: T) -> T {
    v * normal_cdf(v)
}

pub(crate) fn gelu_grad<T: Element>(v: T) -> T {
    let pdf = (-(v * v) * c(0.5)).exp_m() * c(0.398_942_280_401_432_7);
    normal_cdf(v) + v * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        t(&[m, n], &out)
    }

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn matmul_examples() {
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Tensor::eye(2).matmul(&m).unwrap(), m);
        let z = Tensor::<f64>::zeros(&[2, 2]);
        assert_eq!(Tensor::eye(2).matmul(&z).unwrap(), z);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let expected = naive_matmul(&m, &b);
        assert_eq!(expected.data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(m.matmul(&b).unwrap(), expected);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        assert_eq!(err, Error::shape("matmul", &[2, 3], &[2, 3]));
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = t(&[2], &[0.0, 0.0]).softmax_lastdim();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t(&[2], &[1000.0, 1000.0]).softmax_lastdim();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t(&[2], &[core::f64::consts::LN_2, 0.0]).softmax_lastdim();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let (y, _, _) = t(&[4], &[5.0; 4]).layer_norm(&g, &b, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);

        let (y, _, _) = t(&[2], &[1.0, 3.0])
            .layer_norm(&Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-12)
            .unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_matches_recomputation() {
        let x = t(&[6], &[0.3, -1.2, 2.0, 0.7, -0.4, 1.1]);
        let g = t(&[6], &[1.5, 0.2, -0.7, 1.0, 0.9, 2.0]);
        let b = t(&[6], &[0.1, 0.0, -0.3, 0.5, 1.0, -2.0]);
        let eps = 1e-5;
        let (y, _, _) = x.layer_norm(&g, &b, eps).unwrap();
        let mean = x.data().iter().sum::<f64>() / 6.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        for i in 0..6 {
            let want = (x.data()[i] - mean) / libm::sqrt(var + eps) * g.data()[i] + b.data()[i];
            assert!((y.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let r = t(&[2], &[-3.0, 3.0]).relu();
        assert_eq!(r.data(), &[0.0, 3.0]);
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu_grad(0.0f64) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = Tensor::<f64>::from_fn(&[3, 5], |i| i as f64);
        let left = a.narrow_cols(0, 2).unwrap();
        let right = a.narrow_cols(2, 3).unwrap();
        assert_eq!(Tensor::concat_cols(&[&left, &right]).unwrap(), a);
        let top = Tensor::new(&[1, 5], a.data()[..5].to_vec()).unwrap();
        let rest = Tensor::new(&[2, 5], a.data()[5..].to_vec()).unwrap();
        assert_eq!(Tensor::concat_rows(&[&top, &rest]).unwrap(), a);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let x = t(&[2, 3], &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert_eq!(x.argmax_lastdim(), vec![0, 1]);
    }
}
