//! Factor matrices of a rank-(L_r, L_r, 1) block-term model.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BtdError, Result};

/// Partition of the `A`/`B` columns into `R` contiguous blocks.
///
/// Block `r` owns columns `offset(r) .. offset(r) + width(r)`. The usual
/// uniform case has every width equal to `L`, so block `r` is
/// `r*L .. (r+1)*L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    widths: Vec<usize>,
    offsets: Vec<usize>,
    column_block: Vec<usize>,
}

impl BlockLayout {
    pub fn uniform(l: usize, r: usize) -> Result<Self> {
        Self::from_widths(vec![l; r])
    }

    pub fn from_widths(widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() {
            return Err(BtdError::InvalidConfig("a model needs at least one block".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(BtdError::InvalidConfig(format!("block widths must be positive: {widths:?}")));
        }
        let mut offsets = Vec::with_capacity(widths.len());
        let mut column_block = Vec::new();
        let mut acc = 0;
        for (r, &w) in widths.iter().enumerate() {
            offsets.push(acc);
            column_block.extend(std::iter::repeat_n(r, w));
            acc += w;
        }
        Ok(Self {
            widths,
            offsets,
            column_block,
        })
    }

    /// Number of block terms `R`.
    pub fn blocks(&self) -> usize {
        self.widths.len()
    }

    /// Total column count `sum_r L_r`.
    pub fn columns(&self) -> usize {
        self.column_block.len()
    }

    pub fn width(&self, r: usize) -> usize {
        self.widths[r]
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn offset(&self, r: usize) -> usize {
        self.offsets[r]
    }

    pub fn range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r] + self.widths[r]
    }

    /// Block index owning column `c`.
    #[inline]
    pub fn block_of(&self, c: usize) -> usize {
        self.column_block[c]
    }

    pub fn column_blocks(&self) -> &[usize] {
        &self.column_block
    }

    /// `Some(L)` when all blocks share the same width.
    pub fn uniform_width(&self) -> Option<usize> {
        let w = self.widths[0];
        self.widths.iter().all(|&x| x == w).then_some(w)
    }

    /// Expands an `R`-vector to the column space: entry `c` is `v[block_of(c)]`.
    pub fn expand_vector(&self, v: &[f64]) -> Vec<f64> {
        self.column_block.iter().map(|&r| v[r]).collect()
    }
}

/// Factor triple `(A, B, C)` of the model `X = sum_r (A_r B_r^T) ∘ c_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct BtdFactors {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
    layout: BlockLayout,
}

impl BtdFactors {
    /// Factors with uniform block width `l`.
    pub fn new(a: Array2<f64>, b: Array2<f64>, c: Array2<f64>, l: usize) -> Result<Self> {
        if l == 0 || c.ncols() == 0 {
            return Err(BtdError::InvalidConfig("L and R must be positive".into()));
        }
        let layout = BlockLayout::uniform(l, c.ncols())?;
        Self::with_layout(a, b, c, layout)
    }

    pub fn with_layout(a: Array2<f64>, b: Array2<f64>, c: Array2<f64>, layout: BlockLayout) -> Result<Self> {
        let lr = layout.columns();
        if a.ncols() != lr || b.ncols() != lr {
            return Err(BtdError::DimensionMismatch(format!(
                "A and B need {lr} columns, got {} and {}",
                a.ncols(),
                b.ncols()
            )));
        }
        if c.ncols() != layout.blocks() {
            return Err(BtdError::DimensionMismatch(format!(
                "C needs {} columns, got {}",
                layout.blocks(),
                c.ncols()
            )));
        }
        if a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
            return Err(BtdError::DimensionMismatch("factor matrices must have rows".into()));
        }
        Ok(Self { a, b, c, layout })
    }

    /// Factors with i.i.d. standard normal entries.
    pub fn random<G: Rng + ?Sized>(dims: (usize, usize, usize), layout: BlockLayout, rng: &mut G) -> Self {
        let (i, j, k) = dims;
        let lr = layout.columns();
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
        };
        let a = draw(i, lr);
        let b = draw(j, lr);
        let c = draw(k, layout.blocks());
        Self { a, b, c, layout }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Tensor dimensions `(I, J, K)` of the represented model.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    pub fn blocks(&self) -> usize {
        self.layout.blocks()
    }

    pub fn a_block(&self, r: usize) -> ArrayView2<'_, f64> {
        self.a.slice(s![.., self.layout.range(r)])
    }

    pub fn b_block(&self, r: usize) -> ArrayView2<'_, f64> {
        self.b.slice(s![.., self.layout.range(r)])
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).chain(self.c.iter()).all(|v| v.is_finite())
    }

    /// Euclidean norms of the columns of `C`.
    pub fn c_column_norms(&self) -> Vec<f64> {
        column_norms_sq(&self.c.view()).into_iter().map(f64::sqrt).collect()
    }

    /// `sqrt(|a_c|^2 + |b_c|^2)` for every column `c` of `A`/`B`.
    pub fn ab_column_norms(&self) -> Vec<f64> {
        column_norms_sq(&self.a.view())
            .into_iter()
            .zip(column_norms_sq(&self.b.view()))
            .map(|(x, y)| (x + y).sqrt())
            .collect()
    }
}

pub(crate) fn column_norms_sq(m: &ArrayView2<'_, f64>) -> Vec<f64> {
    m.columns().into_iter().map(|c| c.dot(&c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_layout_partitions_columns() {
        let l = BlockLayout::uniform(3, 4).unwrap();
        assert_eq!(l.columns(), 12);
        assert_eq!(l.range(2), 6..9);
        assert_eq!(l.block_of(8), 2);
        assert_eq!(l.uniform_width(), Some(3));
    }

    #[test]
    fn ragged_layout() {
        let l = BlockLayout::from_widths(vec![2, 1, 3]).unwrap();
        assert_eq!(l.columns(), 6);
        assert_eq!(l.offset(2), 3);
        assert_eq!(l.column_blocks(), &[0, 0, 1, 2, 2, 2]);
        assert_eq!(l.uniform_width(), None);
        assert_eq!(l.expand_vector(&[1.0, 2.0, 3.0]), vec![1.0, 1.0, 2.0, 3.0, 3.0, 3.0]);
        assert!(BlockLayout::from_widths(vec![2, 0]).is_err());
        assert!(BlockLayout::from_widths(vec![]).is_err());
    }

    #[test]
    fn shape_validation() {
        let a = Array2::zeros((4, 6));
        let b = Array2::zeros((3, 6));
        let c = Array2::zeros((5, 3));
        assert!(BtdFactors::new(a.clone(), b.clone(), c.clone(), 2).is_ok());
        assert!(BtdFactors::new(a.clone(), b.clone(), c.clone(), 3).is_err());
        assert!(BtdFactors::new(a, Array2::zeros((3, 5)), c, 2).is_err());
    }

    #[test]
    fn random_is_seed_deterministic() {
        let layout = BlockLayout::uniform(2, 3).unwrap();
        let f1 = BtdFactors::random((4, 3, 5), layout.clone(), &mut ChaCha8Rng::seed_from_u64(9));
        let f2 = BtdFactors::random((4, 3, 5), layout, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(f1, f2);
        assert_eq!(f1.dims(), (4, 3, 5));
        assert_eq!(f1.a_block(1).ncols(), 2);
    }
}
