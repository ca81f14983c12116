//! Cholesky factorization for the regularized normal equations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{BtdError, Result};

/// Cholesky factor `M = L L^T` of a symmetric positive definite matrix.
///
/// `L` is kept row-major together with its transpose so that both triangular
/// sweeps run over contiguous memory.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Dot product with four independent partial sums, which lets the compiler
/// vectorize the loop.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    let mut acc = [0.0; 4];
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Cholesky {
    /// Factors `m`, reading only its lower triangle.
    pub fn factor(m: &ArrayView2<'_, f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(BtdError::DimensionMismatch(format!("Cholesky of a {:?} matrix", m.dim())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(BtdError::NonFinite("SPD system matrix"));
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (row_i, row_j) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let s = m[[i, j]] - dot(row_i, row_j);
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(BtdError::NotPositiveDefinite { pivot: j, value: s });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        let mut upper = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                upper[j * n + i] = l[i * n + j];
            }
        }
        Ok(Self { n, lower: l, upper })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `M x = b`.
    pub fn solve_vec(&self, b: &ArrayView1<'_, f64>) -> Array1<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Array1::from(x)
    }

    /// Returns `G M^{-1}` (row-wise solves, valid since `M` is symmetric).
    pub fn solve_right(&self, g: &ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(g.ncols(), self.dim(), "right-hand side width mismatch");
        let mut out = g.as_standard_layout().into_owned();
        for mut row in out.rows_mut() {
            self.solve_in_place(row.as_slice_mut().unwrap());
        }
        out
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lower[i * n..(i + 1) * n];
            x[i] = (x[i] - dot(&row[..i], &x[..i])) / row[i];
        }
        for i in (0..n).rev() {
            let row = &self.upper[i * n..(i + 1) * n];
            x[i] = (x[i] - dot(&row[i + 1..], &x[i + 1..])) / row[i];
        }
    }
}

/// Solves `(gram + diag(shift)) x = rhs` for SPD `gram + diag(shift)`.
pub fn spd_solve_vec(gram: &Array2<f64>, shift: &[f64], rhs: &ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let m = shifted(gram, shift);
    Ok(Cholesky::factor(&m.view())?.solve_vec(rhs))
}

/// Returns `G (gram + diag(shift))^{-1}`.
///
/// Unknowns that are decoupled from all others (zero off-diagonal row and
/// column, positive diagonal) and have a zero right-hand side are exactly
/// zero in the solution; they are removed before factoring. Pruned factor
/// columns produce exactly this structure, so the cost follows the number of
/// live columns.
pub fn spd_solve_right(gram: &Array2<f64>, shift: &[f64], g: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(BtdError::NonFinite("right-hand side"));
    }
    let m = shifted(gram, shift);
    let live = coupled_unknowns(&m, g);
    if live.len() == m.nrows() {
        return Ok(Cholesky::factor(&m.view())?.solve_right(g));
    }
    let sub = m.select(Axis(0), &live).select(Axis(1), &live);
    let x = Cholesky::factor(&sub.view())?.solve_right(&g.select(Axis(1), &live).view());
    let mut out = Array2::zeros(g.dim());
    for (n, &c) in live.iter().enumerate() {
        out.column_mut(c).assign(&x.column(n));
    }
    Ok(out)
}

/// Indices that cannot be eliminated as exact zeros of `x M = G`.
fn coupled_unknowns(m: &Array2<f64>, g: &ArrayView2<'_, f64>) -> Vec<usize> {
    (0..m.nrows())
        .filter(|&c| {
            let d = m[[c, c]];
            let isolated = m.row(c).iter().chain(m.column(c).iter()).enumerate().all(|(p, v)| p % m.nrows() == c || *v == 0.0);
            !(isolated && d > 0.0 && d.is_finite() && g.column(c).iter().all(|v| *v == 0.0))
        })
        .collect()
}

pub(crate) fn shifted(gram: &Array2<f64>, shift: &[f64]) -> Array2<f64> {
    let mut m = gram.clone();
    for (i, s) in shift.iter().enumerate() {
        m[[i, i]] += s;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_system() {
        let m = array![[4.0, 2.0], [2.0, 3.0]];
        let ch = Cholesky::factor(&m.view()).unwrap();
        let x = ch.solve_vec(&array![2.0, 1.0].view());
        let back = m.dot(&x);
        assert!((back[0] - 2.0).abs() < 1e-14 && (back[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn right_solve_rows() {
        let m = array![[5.0, 1.0, 0.5], [1.0, 4.0, 0.2], [0.5, 0.2, 3.0]];
        let g = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]];
        let x = Cholesky::factor(&m.view()).unwrap().solve_right(&g.view());
        let back = x.dot(&m);
        for (a, b) in back.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            Cholesky::factor(&m.view()),
            Err(BtdError::NotPositiveDefinite { pivot: 1, .. })
        ));
        let nan = array![[f64::NAN]];
        assert!(matches!(Cholesky::factor(&nan.view()), Err(BtdError::NonFinite(_))));
    }

    #[test]
    fn decoupled_zero_unknowns_are_eliminated() {
        let gram = array![[4.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 3.0]];
        let g = array![[1.0, 0.0, 2.0], [0.5, 0.0, -1.0]];
        let x = spd_solve_right(&gram, &[0.0, 2.0, 0.0], &g.view()).unwrap();
        assert_eq!(x.column(1).to_vec(), vec![0.0, 0.0]);
        let full = Cholesky::factor(&shifted(&gram, &[0.0, 2.0, 0.0]).view()).unwrap().solve_right(&g.view());
        for (a, b) in x.iter().zip(full.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        // A zero pivot is still reported, not skipped.
        let singular = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            spd_solve_right(&singular, &[0.0, 0.0], &array![[1.0, 0.0]].view()),
            Err(BtdError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn shift_makes_singular_gram_definite() {
        let gram = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(Cholesky::factor(&gram.view()).is_err());
        let x = spd_solve_vec(&gram, &[1e-3, 1e-3], &array![1.0, 1.0].view()).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
