//! Khatri-Rao products, the `S` matrix and model reconstruction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{BtdError, Result};
use crate::factors::{BlockLayout, BtdFactors};
use crate::tensor::Tensor3;

/// Partition-wise Khatri-Rao product with explicit partition widths.
///
/// Partition `r` of the result is the Kronecker product `X_r ⊗ Y_r`; rows
/// are ordered `u * n + v` and, inside the partition, columns `a * q_r + b`
/// (right operand fastest).
pub fn khatri_rao_partitioned(
    x: &ArrayView2<'_, f64>,
    x_widths: &[usize],
    y: &ArrayView2<'_, f64>,
    y_widths: &[usize],
) -> Result<Array2<f64>> {
    if x_widths.len() != y_widths.len() {
        return Err(BtdError::DimensionMismatch(format!(
            "partition counts differ: {} vs {}",
            x_widths.len(),
            y_widths.len()
        )));
    }
    if x_widths.iter().sum::<usize>() != x.ncols() || y_widths.iter().sum::<usize>() != y.ncols() {
        return Err(BtdError::DimensionMismatch(
            "partition widths do not cover the operand columns".into(),
        ));
    }
    let (m, n) = (x.nrows(), y.nrows());
    let out_cols: usize = x_widths.iter().zip(y_widths).map(|(p, q)| p * q).sum();
    let mut out = Array2::zeros((m * n, out_cols));
    let (mut xo, mut yo, mut oc) = (0, 0, 0);
    for (&p, &q) in x_widths.iter().zip(y_widths) {
        for a in 0..p {
            for b in 0..q {
                let xc = x.column(xo + a);
                let yc = y.column(yo + b);
                let mut col = out.column_mut(oc + a * q + b);
                for u in 0..m {
                    for v in 0..n {
                        col[u * n + v] = xc[u] * yc[v];
                    }
                }
            }
        }
        xo += p;
        yo += q;
        oc += p * q;
    }
    Ok(out)
}

/// Partition-wise Khatri-Rao product with `partitions` equal-width partitions
/// in each operand.
pub fn khatri_rao(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>, partitions: usize) -> Result<Array2<f64>> {
    if partitions == 0 || x.ncols() % partitions != 0 || y.ncols() % partitions != 0 {
        return Err(BtdError::DimensionMismatch(format!(
            "{} and {} columns cannot be split into {partitions} partitions",
            x.ncols(),
            y.ncols()
        )));
    }
    let xw = vec![x.ncols() / partitions; partitions];
    let yw = vec![y.ncols() / partitions; partitions];
    khatri_rao_partitioned(x, &xw, y, &yw)
}

/// Column-wise Khatri-Rao product `x ⊙_c y`.
pub fn khatri_rao_cw(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(BtdError::DimensionMismatch(format!(
            "column-wise Khatri-Rao needs equal column counts, got {} and {}",
            x.ncols(),
            y.ncols()
        )));
    }
    khatri_rao(x, y, x.ncols())
}

/// `P = B ⊙ C`, the `JK x LR` matrix with `X(1)^T = P A^T`.
pub fn p_matrix(f: &BtdFactors) -> Array2<f64> {
    let layout = f.layout();
    khatri_rao_partitioned(&f.b.view(), layout.widths(), &f.c.view(), &vec![1; layout.blocks()]).unwrap()
}

/// `Q = C ⊙ A`, the `KI x LR` matrix with `X(2)^T = Q B^T`.
pub fn q_matrix(f: &BtdFactors) -> Array2<f64> {
    let layout = f.layout();
    khatri_rao_partitioned(&f.c.view(), &vec![1; layout.blocks()], &f.a.view(), layout.widths()).unwrap()
}

/// `S`, whose column `r` is the row vectorization of `A_r B_r^T`.
pub fn build_s(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, layout: &BlockLayout) -> Result<Array2<f64>> {
    check_ab(a, b, layout)?;
    let (ni, nj) = (a.nrows(), b.nrows());
    let mut s = Array2::zeros((ni * nj, layout.blocks()));
    for c in 0..layout.columns() {
        let r = layout.block_of(c);
        let (ac, bc) = (a.column(c), b.column(c));
        let mut col = s.column_mut(r);
        for i in 0..ni {
            let ai = ac[i];
            for j in 0..nj {
                col[i * nj + j] += ai * bc[j];
            }
        }
    }
    Ok(s)
}

/// Dense tensor of the model `sum_r (A_r B_r^T) ∘ c_r`.
pub fn reconstruct(f: &BtdFactors) -> Tensor3 {
    let s = build_s(&f.a.view(), &f.b.view(), f.layout()).unwrap();
    let x3 = f.c.dot(&s.t());
    let dims = f.dims();
    Tensor3::from_vec(dims, x3.iter().copied().collect()).unwrap()
}

/// `M (diag(gamma) ⊗ I_L)`: column `c` of `m` scaled by `gamma[block_of(c)]`.
pub fn scale_columns_by_block(m: &ArrayView2<'_, f64>, gamma: &ArrayView1<'_, f64>, layout: &BlockLayout) -> Array2<f64> {
    let mut out = m.to_owned();
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        col *= gamma[layout.block_of(c)];
    }
    out
}

/// Frontal slice `A (diag(gamma) ⊗ I_L) B^T` of the model.
pub fn frontal_slice_model(
    a: &ArrayView2<'_, f64>,
    b: &ArrayView2<'_, f64>,
    gamma: &ArrayView1<'_, f64>,
    layout: &BlockLayout,
) -> Result<Array2<f64>> {
    check_ab(a, b, layout)?;
    if gamma.len() != layout.blocks() {
        return Err(BtdError::DimensionMismatch(format!(
            "gamma has {} entries, model has {} blocks",
            gamma.len(),
            layout.blocks()
        )));
    }
    Ok(scale_columns_by_block(a, gamma, layout).dot(&b.t()))
}

fn check_ab(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, layout: &BlockLayout) -> Result<()> {
    if a.ncols() != layout.columns() || b.ncols() != layout.columns() {
        return Err(BtdError::DimensionMismatch(format!(
            "A and B need {} columns, got {} and {}",
            layout.columns(),
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

// Gram-matrix shortcuts shared by the solvers. They avoid forming the
// Khatri-Rao products explicitly:
//   (B ⊙ C)^T (B ⊙ C) = (B^T B) * expand(C^T C)
//   S^T S              = blocksum((A^T A) * (B^T B))

/// Elementwise product of an `LR x LR` matrix with the block expansion of an
/// `R x R` matrix.
pub(crate) fn hadamard_expand(g: &Array2<f64>, small: &ArrayView2<'_, f64>, layout: &BlockLayout) -> Array2<f64> {
    let mut out = g.clone();
    let blocks = layout.column_blocks();
    for ((p, q), v) in out.indexed_iter_mut() {
        *v *= small[[blocks[p], blocks[q]]];
    }
    out
}

/// Sums each `L_r x L_s` block of an `LR x LR` matrix into an `R x R` matrix.
pub(crate) fn block_sum(g: &Array2<f64>, layout: &BlockLayout) -> Array2<f64> {
    let r = layout.blocks();
    let blocks = layout.column_blocks();
    let mut out = Array2::zeros((r, r));
    for ((p, q), v) in g.indexed_iter() {
        out[[blocks[p], blocks[q]]] += v;
    }
    out
}

/// Sums entries of an `LR`-vector per block.
pub(crate) fn block_sum_vec(v: &Array1<f64>, layout: &BlockLayout) -> Array1<f64> {
    let mut out = Array1::zeros(layout.blocks());
    for (c, x) in v.iter().enumerate() {
        out[layout.block_of(c)] += x;
    }
    out
}

/// `S^T S` computed from the factor Grams.
pub fn s_gram(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, layout: &BlockLayout) -> Array2<f64> {
    let ata = a.t().dot(a);
    let btb = b.t().dot(b);
    block_sum(&(ata * btb), layout)
}
