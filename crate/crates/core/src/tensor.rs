//! Dense real third-order tensors and their mode unfoldings.
//!
//! Storage is frontal-slice major: slice `k` is a contiguous row-major
//! `I x J` block, so element `(i, j, k)` lives at `(k * I + i) * J + j`.
//! Slice vectorization ([`vec_slice`]) stacks the rows of the slice, which
//! makes the mode-3 unfolding (`K x IJ`) the raw buffer itself.
//!
//! The unfoldings are laid out so that, for a block-term model with factors
//! `A`, `B`, `C`,
//!
//! * `X(1)^T = (B ⊙ C) A^T`, column `j * K + k` of `X(1)` holds `X(:, j, k)`,
//! * `X(2)^T = (C ⊙ A) B^T`, column `k * I + i` of `X(2)` holds `X(i, :, k)`,
//! * `X(3)^T = S C^T`, column `i * J + j` of `X(3)` holds `X(i, j, :)`,
//!
//! where the Kronecker products inside `⊙` put the right operand's index
//! fastest.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use crate::error::{BtdError, Result};

/// The three matricizations of a third-order tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnfoldingMode {
    Mode1,
    Mode2,
    Mode3,
}

impl UnfoldingMode {
    pub const ALL: [UnfoldingMode; 3] = [Self::Mode1, Self::Mode2, Self::Mode3];
}

/// Dense `I x J x K` real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(i: usize, j: usize, k: usize) -> Self {
        Self {
            dims: (i, j, k),
            data: vec![0.0; i * j * k],
        }
    }

    /// Wraps a buffer already in the crate's linearization order.
    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (i, j, k) = dims;
        if i == 0 || j == 0 || k == 0 {
            return Err(BtdError::DimensionMismatch(format!(
                "tensor dimensions must be positive, got {i}x{j}x{k}"
            )));
        }
        if data.len() != i * j * k {
            return Err(BtdError::DimensionMismatch(format!(
                "buffer of length {} does not match {i}x{j}x{k}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Builds a tensor from a function of `(i, j, k)`.
    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let (ni, nj, nk) = dims;
        let mut data = Vec::with_capacity(ni * nj * nk);
        for k in 0..nk {
            for i in 0..ni {
                for j in 0..nj {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    /// Stacks `I x J` frontal slices along the third mode.
    pub fn from_slices<'a, It>(slices: It) -> Result<Self>
    where
        It: IntoIterator<Item = ArrayView2<'a, f64>>,
    {
        let mut dims: Option<(usize, usize)> = None;
        let mut data = Vec::new();
        let mut k = 0;
        for s in slices {
            let shape = s.dim();
            match dims {
                None => dims = Some(shape),
                Some(d) if d != shape => {
                    return Err(BtdError::DimensionMismatch(format!(
                        "slice {k} has shape {shape:?}, expected {d:?}"
                    )))
                }
                _ => {}
            }
            data.extend(s.iter().copied());
            k += 1;
        }
        let (i, j) = dims.ok_or_else(|| BtdError::DimensionMismatch("no slices".into()))?;
        Self::from_vec((i, j, k), data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        let (ni, nj, nk) = self.dims;
        assert!(i < ni && j < nj && k < nk, "index ({i},{j},{k}) out of bounds");
        (k * ni + i) * nj + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    /// Frontal slice `X(:, :, k)`.
    pub fn slice(&self, k: usize) -> ArrayView2<'_, f64> {
        let (ni, nj, nk) = self.dims;
        assert!(k < nk, "slice {k} out of bounds ({nk} slices)");
        let len = ni * nj;
        ArrayView2::from_shape((ni, nj), &self.data[k * len..(k + 1) * len]).unwrap()
    }

    pub fn slice_mut(&mut self, k: usize) -> ArrayViewMut2<'_, f64> {
        let (ni, nj, nk) = self.dims;
        assert!(k < nk, "slice {k} out of bounds ({nk} slices)");
        let len = ni * nj;
        ArrayViewMut2::from_shape((ni, nj), &mut self.data[k * len..(k + 1) * len]).unwrap()
    }

    /// Row-vectorized frontal slice, identical to `vec_slice(&self.slice(k))`.
    pub fn slice_vec(&self, k: usize) -> ArrayView1<'_, f64> {
        let (ni, nj, _) = self.dims;
        let len = ni * nj;
        ArrayView1::from(&self.data[k * len..(k + 1) * len])
    }

    /// Mode-3 unfolding as a borrowed `K x IJ` view (no copy).
    pub fn mode3_view(&self) -> ArrayView2<'_, f64> {
        let (ni, nj, nk) = self.dims;
        ArrayView2::from_shape((nk, ni * nj), &self.data).unwrap()
    }

    /// Copies slices `start..end` into a new tensor.
    pub fn sub_slices(&self, start: usize, end: usize) -> Result<Self> {
        let (ni, nj, nk) = self.dims;
        if start >= end || end > nk {
            return Err(BtdError::DimensionMismatch(format!(
                "slice range {start}..{end} invalid for {nk} slices"
            )));
        }
        let len = ni * nj;
        Self::from_vec((ni, nj, end - start), self.data[start * len..end * len].to_vec())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Elementwise `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(BtdError::DimensionMismatch(format!(
                "cannot add {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Tensor3 { dims: self.dims, data })
    }

    pub fn scale(&self, alpha: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mode-n unfolding; see the module docs for the column ordering.
    pub fn unfold(&self, mode: UnfoldingMode) -> Array2<f64> {
        let (ni, nj, nk) = self.dims;
        match mode {
            UnfoldingMode::Mode1 => {
                let mut m = Array2::zeros((ni, nj * nk));
                for k in 0..nk {
                    for i in 0..ni {
                        for j in 0..nj {
                            m[[i, j * nk + k]] = self.get(i, j, k);
                        }
                    }
                }
                m
            }
            UnfoldingMode::Mode2 => {
                let mut m = Array2::zeros((nj, nk * ni));
                for k in 0..nk {
                    for i in 0..ni {
                        for j in 0..nj {
                            m[[j, k * ni + i]] = self.get(i, j, k);
                        }
                    }
                }
                m
            }
            UnfoldingMode::Mode3 => self.mode3_view().to_owned(),
        }
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(m: ArrayView2<'_, f64>, mode: UnfoldingMode, dims: (usize, usize, usize)) -> Result<Self> {
        let (ni, nj, nk) = dims;
        let expected = match mode {
            UnfoldingMode::Mode1 => (ni, nj * nk),
            UnfoldingMode::Mode2 => (nj, nk * ni),
            UnfoldingMode::Mode3 => (nk, ni * nj),
        };
        if m.dim() != expected {
            return Err(BtdError::DimensionMismatch(format!(
                "{mode:?} unfolding of {dims:?} must be {expected:?}, got {:?}",
                m.dim()
            )));
        }
        let t = match mode {
            UnfoldingMode::Mode1 => Self::from_fn(dims, |i, j, k| m[[i, j * nk + k]]),
            UnfoldingMode::Mode2 => Self::from_fn(dims, |i, j, k| m[[j, k * ni + i]]),
            UnfoldingMode::Mode3 => Self::from_fn(dims, |i, j, k| m[[k, i * nj + j]]),
        };
        Ok(t)
    }
}

/// Row vectorization of a matrix: entry `(i, j)` goes to `i * ncols + j`.
pub fn vec_slice(m: &ArrayView2<'_, f64>) -> Array1<f64> {
    Array1::from_iter(m.iter().copied())
}

/// Inverse of [`vec_slice`].
pub fn unvec_slice(v: &ArrayView1<'_, f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    if v.len() != rows * cols {
        return Err(BtdError::DimensionMismatch(format!(
            "vector of length {} cannot hold a {rows}x{cols} slice",
            v.len()
        )));
    }
    Ok(Array2::from_shape_vec((rows, cols), v.iter().copied().collect()).unwrap())
}
