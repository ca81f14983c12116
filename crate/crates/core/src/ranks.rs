//! Rank revelation by column-magnitude thresholding, and column pruning.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{BtdError, Result};
use crate::factors::{BlockLayout, BtdFactors};

/// Estimated number of block terms and per-block ranks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub r_hat: usize,
    pub l_hat: Vec<usize>,
    /// Indices of the kept blocks (columns of `C`).
    pub kept_blocks: Vec<usize>,
    /// For each kept block, the kept global column indices of `A`/`B`.
    pub kept_columns: Vec<Vec<usize>>,
    /// Set when every column is zero and nothing can be kept.
    pub degenerate: bool,
}

impl RankEstimate {
    /// Whether the estimate equals `R` blocks of rank `L` each.
    pub fn matches(&self, r: usize, l: usize) -> bool {
        self.r_hat == r && self.l_hat.iter().all(|&x| x == l)
    }
}

/// Applies the thresholding rule to the factor column norms.
///
/// Block `r` is kept iff `|c_r| >= threshold * max |c|`; inside kept blocks,
/// column `l` is kept iff `sqrt(|a_rl|^2 + |b_rl|^2)` reaches `threshold`
/// times the largest such norm over all kept blocks. A kept block left with
/// no columns is dropped.
pub fn estimate_ranks(f: &BtdFactors, threshold: f64) -> Result<RankEstimate> {
    estimate_ranks_from_norms(&f.c_column_norms(), &f.ab_column_norms(), f.layout(), threshold)
}

/// [`estimate_ranks`] on precomputed norms (e.g. windowed `C` energies in
/// the streaming solver).
pub fn estimate_ranks_from_norms(
    c_norms: &[f64],
    ab_norms: &[f64],
    layout: &BlockLayout,
    threshold: f64,
) -> Result<RankEstimate> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(BtdError::InvalidConfig(format!(
            "rank threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if c_norms.len() != layout.blocks() || ab_norms.len() != layout.columns() {
        return Err(BtdError::DimensionMismatch("norm vectors do not match the block layout".into()));
    }
    let c_max = c_norms.iter().copied().fold(0.0, f64::max);
    let degenerate = RankEstimate {
        r_hat: 0,
        l_hat: vec![],
        kept_blocks: vec![],
        kept_columns: vec![],
        degenerate: true,
    };
    if c_max <= 0.0 || !c_max.is_finite() {
        return Ok(degenerate);
    }
    let candidate: Vec<usize> = (0..layout.blocks())
        .filter(|&r| c_norms[r] >= threshold * c_max)
        .collect();
    let ab_max = candidate
        .iter()
        .flat_map(|&r| layout.range(r))
        .map(|c| ab_norms[c])
        .fold(0.0, f64::max);
    if ab_max <= 0.0 {
        return Ok(degenerate);
    }
    let mut est = RankEstimate {
        r_hat: 0,
        l_hat: vec![],
        kept_blocks: vec![],
        kept_columns: vec![],
        degenerate: false,
    };
    for r in candidate {
        let cols: Vec<usize> = layout.range(r).filter(|&c| ab_norms[c] >= threshold * ab_max).collect();
        if cols.is_empty() {
            continue;
        }
        est.l_hat.push(cols.len());
        est.kept_blocks.push(r);
        est.kept_columns.push(cols);
    }
    est.r_hat = est.kept_blocks.len();
    Ok(est)
}

/// Drops the blocks and columns discarded by `est`.
pub fn prune(f: &BtdFactors, est: &RankEstimate) -> Result<BtdFactors> {
    if est.r_hat == 0 {
        return Err(BtdError::Degenerate("cannot prune to zero block terms".into()));
    }
    if est.kept_blocks.iter().any(|&r| r >= f.blocks())
        || est.kept_columns.iter().flatten().any(|&c| c >= f.layout().columns())
    {
        return Err(BtdError::DimensionMismatch("rank estimate does not belong to these factors".into()));
    }
    let cols: Vec<usize> = est.kept_columns.iter().flatten().copied().collect();
    let a: Array2<f64> = f.a.select(Axis(1), &cols);
    let b: Array2<f64> = f.b.select(Axis(1), &cols);
    let c: Array2<f64> = f.c.select(Axis(1), &est.kept_blocks);
    let layout = BlockLayout::from_widths(est.l_hat.clone())?;
    BtdFactors::with_layout(a, b, c, layout)
}
