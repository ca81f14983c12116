//! Reconstruction metrics and block matching.

use btd_core::{BtdError, BtdFactors, Result, Tensor3};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// `|Y - X_hat|_F / |Y|_F`.
pub fn relative_error(y: &Tensor3, x_hat: &Tensor3) -> Result<f64> {
    let den = y.frobenius_norm();
    if den == 0.0 {
        return Err(BtdError::Degenerate("relative error against a zero tensor".into()));
    }
    Ok(y.add_scaled(-1.0, x_hat)?.frobenius_norm() / den)
}

/// `|X - X_hat|_F^2 / |X|_F^2` for a single slice.
pub fn nse(x: &ArrayView2<'_, f64>, x_hat: &ArrayView2<'_, f64>) -> Result<f64> {
    if x.dim() != x_hat.dim() {
        return Err(BtdError::DimensionMismatch(format!("{:?} vs {:?}", x.dim(), x_hat.dim())));
    }
    let den: f64 = x.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(BtdError::Degenerate("NSE against a zero slice".into()));
    }
    let num: f64 = x.iter().zip(x_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

/// Solves the square linear assignment problem; returns `assign[row] = col`
/// minimizing the total cost (shortest augmenting paths with potentials,
/// `O(n^3)`).
pub fn hungarian(cost: &ArrayView2<'_, f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(BtdError::DimensionMismatch(format!("assignment needs a square matrix, got {:?}", cost.dim())));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(BtdError::NonFinite("assignment cost"));
    }
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum();
    Ok((assign, total))
}

/// Exhaustive assignment over all permutations (reference for small `n`).
pub fn assignment_brute_force(cost: &ArrayView2<'_, f64>) -> f64 {
    fn rec(cost: &ArrayView2<'_, f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = cost.nrows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                rec(cost, row + 1, used, acc + cost[[row, c]], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockNmse {
    pub nmse: f64,
    /// `assignment[r]` is the estimated block matched to true block `r`, or
    /// `None` when the estimate has too few blocks.
    pub assignment: Vec<Option<usize>>,
    /// Set when the number of blocks differs; unmatched true blocks then
    /// count with cost 1 (the error of estimating them as zero).
    pub mismatch: bool,
}

/// Per-block NMSE `(1/R) sum_r |X_r - X_hat_pi(r)|^2 / |X_r|^2` with
/// `X_r = (A_r B_r^T) ∘ c_r`, minimized over block assignments.
pub fn nmse_blocks(truth: &BtdFactors, est: &BtdFactors) -> Result<BlockNmse> {
    if truth.dims() != est.dims() {
        return Err(BtdError::DimensionMismatch(format!("{:?} vs {:?}", truth.dims(), est.dims())));
    }
    let r = truth.blocks();
    let r_hat = est.blocks();
    let inner = |f: &BtdFactors, p: usize, g: &BtdFactors, q: usize| -> f64 {
        let ab = (f.a_block(p).t().dot(&g.a_block(q)) * f.b_block(p).t().dot(&g.b_block(q))).sum();
        ab * f.c.column(p).dot(&g.c.column(q))
    };
    let t_norms: Vec<f64> = (0..r).map(|p| inner(truth, p, truth, p)).collect();
    let e_norms: Vec<f64> = (0..r_hat).map(|q| inner(est, q, est, q)).collect();
    if t_norms.iter().any(|n| *n <= 0.0) {
        return Err(BtdError::Degenerate("a true block is zero".into()));
    }
    let n = r.max(r_hat);
    let mut cost = Array2::from_elem((n, n), 1.0);
    for p in 0..r {
        for q in 0..r_hat {
            let d = t_norms[p] - 2.0 * inner(truth, p, est, q) + e_norms[q];
            cost[[p, q]] = d.max(0.0) / t_norms[p];
        }
    }
    let (assign, _) = hungarian(&cost.view())?;
    let total: f64 = (0..r).map(|p| cost[[p, assign[p]]]).sum();
    Ok(BlockNmse {
        nmse: total / r as f64,
        assignment: (0..r).map(|p| (assign[p] < r_hat).then_some(assign[p])).collect(),
        mismatch: r != r_hat,
    })
}
