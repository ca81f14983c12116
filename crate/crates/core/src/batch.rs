//! Batch rank-revealing BTD solver (IRLS).
//!
//! Minimizes
//!
//! ```text
//! 1/2 |Y - sum_r (A_r B_r^T) ∘ c_r|_F^2
//!   + lambda * sum_{r,l} sqrt(|a_rl|^2 + |b_rl|^2 + eta2)
//!   + mu     * sum_r     sqrt(|c_r|^2 + eta2)
//! ```
//!
//! by block coordinate descent over `A`, `B`, `C`, each block solved in
//! closed form through a quadratic majorizer of the regularizer (the
//! reweighting matrices `D1`, `D2`). Starting from overestimated `R`, `L`,
//! unneeded columns are driven to negligible magnitude and the ranks are read
//! off with [`estimate_ranks`].

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BtdError, Result};
use crate::factors::{column_norms_sq, BlockLayout, BtdFactors};
use crate::linalg::spd_solve_right;
use crate::multilinear::{build_s, hadamard_expand, reconstruct, s_gram};
use crate::ranks::{estimate_ranks, prune, RankEstimate};
use crate::tensor::Tensor3;

/// Default smoothing constant added under the square roots.
pub const DEFAULT_ETA2: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Weight of the joint `A`/`B` column-sparsity term.
    pub lambda: f64,
    /// Weight of the `C` column-sparsity term.
    pub mu: f64,
    pub eta2: f64,
    pub r_ini: usize,
    pub l_ini: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub rank_threshold: f64,
    /// Prune negligible columns after every sweep instead of only at the end.
    pub prune_in_loop: bool,
}

impl BatchConfig {
    pub fn new(lambda: f64, mu: f64, r_ini: usize, l_ini: usize) -> Self {
        Self {
            lambda,
            mu,
            eta2: DEFAULT_ETA2,
            r_ini,
            l_ini,
            max_iters: 500,
            rel_tol: 1e-5,
            seed: 0,
            rank_threshold: 1e-2,
            prune_in_loop: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BtdError::InvalidConfig(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a finite nonnegative number, got {}", self.lambda));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be a finite nonnegative number, got {}", self.mu));
        }
        if !(self.eta2 > 0.0 && self.eta2.is_finite()) {
            return bad(format!("eta2 must be positive, got {}", self.eta2));
        }
        if self.r_ini == 0 || self.l_ini == 0 {
            return bad("r_ini and l_ini must be positive".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold < 1.0) {
            return bad(format!("rank_threshold must lie in (0, 1), got {}", self.rank_threshold));
        }
        Ok(())
    }
}

/// Output of [`btd_irls`].
#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Converged factors at the initial (overestimated) size, unless
    /// in-loop pruning was enabled.
    pub factors: BtdFactors,
    pub ranks: RankEstimate,
    /// Objective value at the initial point followed by one entry per sweep.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BatchResult {
    /// Factors restricted to the revealed blocks and columns.
    pub fn pruned(&self) -> Result<BtdFactors> {
        prune(&self.factors, &self.ranks)
    }
}

/// Regularization part of the objective.
pub fn regularizer(f: &BtdFactors, lambda: f64, mu: f64, eta2: f64) -> f64 {
    let ab: f64 = column_norms_sq(&f.a.view())
        .into_iter()
        .zip(column_norms_sq(&f.b.view()))
        .map(|(x, y)| (x + y + eta2).sqrt())
        .sum();
    let c: f64 = column_norms_sq(&f.c.view()).into_iter().map(|x| (x + eta2).sqrt()).sum();
    lambda * ab + mu * c
}

/// Full objective, evaluated through an explicit reconstruction.
pub fn objective_batch(y: &Tensor3, f: &BtdFactors, cfg: &BatchConfig) -> Result<f64> {
    check_dims(y, f)?;
    let resid = y.add_scaled(-1.0, &reconstruct(f))?;
    Ok(0.5 * resid.frobenius_norm_sq() + regularizer(f, cfg.lambda, cfg.mu, cfg.eta2))
}

/// `D1(r, r) = (|c_r|^2 + eta2)^{-1/2}`.
pub fn weights_d1(c: &ArrayView2<'_, f64>, eta2: f64) -> Array1<f64> {
    column_norms_sq(c).into_iter().map(|x| 1.0 / (x + eta2).sqrt()).collect()
}

/// `D2(c, c) = (|a_c|^2 + |b_c|^2 + eta2)^{-1/2}`, in the column order of `A`.
pub fn weights_d2(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, eta2: f64) -> Array1<f64> {
    column_norms_sq(a)
        .into_iter()
        .zip(column_norms_sq(b))
        .map(|(x, y)| 1.0 / (x + y + eta2).sqrt())
        .collect()
}

fn check_dims(y: &Tensor3, f: &BtdFactors) -> Result<()> {
    if y.dims() != f.dims() {
        return Err(BtdError::DimensionMismatch(format!(
            "tensor is {:?} but factors describe {:?}",
            y.dims(),
            f.dims()
        )));
    }
    Ok(())
}

/// `T = Y(3)^T C` reshaped per block: `T_r = sum_k c_kr Y(:, :, k)`.
pub(crate) fn contract_mode3(y: &Tensor3, c: &ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    let (ni, nj, _) = y.dims();
    let t = y.mode3_view().t().dot(c);
    t.columns()
        .into_iter()
        .map(|col| Array2::from_shape_vec((ni, nj), col.to_vec()).unwrap())
        .collect()
}

/// `Y(1) P` with `P = B ⊙ C`, given the mode-3 contractions `T_r`.
pub(crate) fn mttkrp_mode1(t: &[Array2<f64>], b: &ArrayView2<'_, f64>, layout: &BlockLayout) -> Array2<f64> {
    let ni = t[0].nrows();
    let mut out = Array2::zeros((ni, layout.columns()));
    for (r, tr) in t.iter().enumerate() {
        let range = layout.range(r);
        let block = tr.dot(&b.slice(ndarray::s![.., range.clone()]));
        out.slice_mut(ndarray::s![.., range]).assign(&block);
    }
    out
}

/// `Y(2) Q` with `Q = C ⊙ A`, given the mode-3 contractions `T_r`.
pub(crate) fn mttkrp_mode2(t: &[Array2<f64>], a: &ArrayView2<'_, f64>, layout: &BlockLayout) -> Array2<f64> {
    let nj = t[0].ncols();
    let mut out = Array2::zeros((nj, layout.columns()));
    for (r, tr) in t.iter().enumerate() {
        let range = layout.range(r);
        let block = tr.t().dot(&a.slice(ndarray::s![.., range.clone()]));
        out.slice_mut(ndarray::s![.., range]).assign(&block);
    }
    out
}

/// Per-sweep sufficient statistics used to evaluate the objective cheaply.
struct FitTerms {
    /// `<Y, X_hat>`
    cross: f64,
    /// `|X_hat|^2`
    model_sq: f64,
}

fn fit_terms(y: &Tensor3, f: &BtdFactors) -> FitTerms {
    let s = build_s(&f.a.view(), &f.b.view(), f.layout()).unwrap();
    let ys = y.mode3_view().dot(&s);
    fit_terms_from(&ys, f)
}

fn fit_terms_from(ys: &Array2<f64>, f: &BtdFactors) -> FitTerms {
    let cross = (ys * &f.c).sum();
    let sts = s_gram(&f.a.view(), &f.b.view(), f.layout());
    let ctc = f.c.t().dot(&f.c);
    FitTerms {
        cross,
        model_sq: (sts * ctc).sum(),
    }
}

fn objective_from_terms(y_norm_sq: f64, terms: &FitTerms, f: &BtdFactors, cfg: &BatchConfig) -> f64 {
    let fit = (0.5 * (y_norm_sq - 2.0 * terms.cross + terms.model_sq)).max(0.0);
    fit + regularizer(f, cfg.lambda, cfg.mu, cfg.eta2)
}

/// One closed-form `A` update; the other factors are held fixed.
pub fn update_a(y: &Tensor3, f: &BtdFactors, cfg: &BatchConfig) -> Result<BtdFactors> {
    let t = contract_mode3(y, &f.c.view());
    let mut next = f.clone();
    next.a = solve_a(&t, f, cfg)?;
    Ok(next)
}

/// One closed-form `B` update; the other factors are held fixed.
pub fn update_b(y: &Tensor3, f: &BtdFactors, cfg: &BatchConfig) -> Result<BtdFactors> {
    let t = contract_mode3(y, &f.c.view());
    let mut next = f.clone();
    next.b = solve_b(&t, f, cfg)?;
    Ok(next)
}

/// One closed-form `C` update; the other factors are held fixed.
pub fn update_c(y: &Tensor3, f: &BtdFactors, cfg: &BatchConfig) -> Result<BtdFactors> {
    let (c, _) = solve_c(y, f, cfg)?;
    let mut next = f.clone();
    next.c = c;
    Ok(next)
}

fn solve_a(t: &[Array2<f64>], f: &BtdFactors, cfg: &BatchConfig) -> Result<Array2<f64>> {
    let layout = f.layout();
    let d2 = weights_d2(&f.a.view(), &f.b.view(), cfg.eta2);
    let rhs = mttkrp_mode1(t, &f.b.view(), layout);
    let ctc = f.c.t().dot(&f.c);
    let gram = hadamard_expand(&f.b.t().dot(&f.b), &ctc.view(), layout);
    let shift: Vec<f64> = d2.iter().map(|d| cfg.lambda * d).collect();
    spd_solve_right(&gram, &shift, &rhs.view())
}

fn solve_b(t: &[Array2<f64>], f: &BtdFactors, cfg: &BatchConfig) -> Result<Array2<f64>> {
    let layout = f.layout();
    let d2 = weights_d2(&f.a.view(), &f.b.view(), cfg.eta2);
    let rhs = mttkrp_mode2(t, &f.a.view(), layout);
    let ctc = f.c.t().dot(&f.c);
    let gram = hadamard_expand(&f.a.t().dot(&f.a), &ctc.view(), layout);
    let shift: Vec<f64> = d2.iter().map(|d| cfg.lambda * d).collect();
    spd_solve_right(&gram, &shift, &rhs.view())
}

/// Returns the new `C` together with `Y(3) S` for the objective.
fn solve_c(y: &Tensor3, f: &BtdFactors, cfg: &BatchConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    let s = build_s(&f.a.view(), &f.b.view(), f.layout())?;
    let ys = y.mode3_view().dot(&s);
    let gram = s.t().dot(&s);
    let d1 = weights_d1(&f.c.view(), cfg.eta2);
    let shift: Vec<f64> = d1.iter().map(|d| cfg.mu * d).collect();
    let c = spd_solve_right(&gram, &shift, &ys.view())?;
    Ok((c, ys))
}

/// One IRLS sweep: `A`, then `B`, then `C`.
///
/// Each block update minimizes a quadratic majorizer of the objective that
/// touches it at the current point. The reweighting matrix `D2` is
/// refreshed after the `A` update so that the `B` majorizer touches at
/// `(A_new, B_old)`; this keeps the sweep monotone.
pub fn irls_sweep(y: &Tensor3, f: &BtdFactors, cfg: &BatchConfig) -> Result<BtdFactors> {
    check_dims(y, f)?;
    Ok(sweep_inner(y, f, cfg)?.0)
}

fn sweep_inner(y: &Tensor3, f: &BtdFactors, cfg: &BatchConfig) -> Result<(BtdFactors, FitTerms)> {
    if !y.is_finite() {
        return Err(BtdError::NonFinite("input tensor"));
    }
    if !f.is_finite() {
        return Err(BtdError::NonFinite("factors"));
    }
    let t = contract_mode3(y, &f.c.view());
    let mut next = f.clone();
    next.a = solve_a(&t, &next, cfg)?;
    next.b = solve_b(&t, &next, cfg)?;
    let (c, ys) = solve_c(y, &next, cfg)?;
    next.c = c;
    if !next.is_finite() {
        return Err(BtdError::NonFinite("updated factors"));
    }
    let terms = fit_terms_from(&ys, &next);
    Ok((next, terms))
}

/// Random initial factors: i.i.d. standard normal entries from `seed`.
pub fn random_init(dims: (usize, usize, usize), cfg: &BatchConfig) -> Result<BtdFactors> {
    let layout = BlockLayout::uniform(cfg.l_ini, cfg.r_ini)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(BtdFactors::random(dims, layout, &mut rng))
}

/// Runs the batch solver from a seeded random start.
pub fn btd_irls(y: &Tensor3, cfg: &BatchConfig) -> Result<BatchResult> {
    cfg.validate()?;
    let init = random_init(y.dims(), cfg)?;
    btd_irls_from(y, init, cfg)
}

/// Runs the batch solver from the given starting factors.
///
/// Iterates until the relative objective change drops below `rel_tol` or
/// `max_iters` sweeps have run.
pub fn btd_irls_from(y: &Tensor3, init: BtdFactors, cfg: &BatchConfig) -> Result<BatchResult> {
    cfg.validate()?;
    check_dims(y, &init)?;
    let y_norm_sq = y.frobenius_norm_sq();
    let mut f = init;
    let mut obj = objective_from_terms(y_norm_sq, &fit_terms(y, &f), &f, cfg);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let (next, terms) = sweep_inner(y, &f, cfg)?;
        f = next;
        iterations += 1;
        let mut new_obj = objective_from_terms(y_norm_sq, &terms, &f, cfg);
        if cfg.prune_in_loop {
            let est = estimate_ranks(&f, cfg.rank_threshold)?;
            if !est.degenerate && est.l_hat.iter().sum::<usize>() < f.layout().columns() {
                f = prune(&f, &est)?;
                new_obj = objective_from_terms(y_norm_sq, &fit_terms(y, &f), &f, cfg);
            }
        }
        trace.push(new_obj);
        let change = (obj - new_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = new_obj;
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    let ranks = estimate_ranks(&f, cfg.rank_threshold)?;
    Ok(BatchResult {
        factors: f,
        ranks,
        trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilinear::{p_matrix, q_matrix};
    use crate::tensor::UnfoldingMode;
    use ndarray::array;

    fn planted(dims: (usize, usize, usize), l: usize, r: usize, seed: u64) -> (Tensor3, BtdFactors) {
        let layout = BlockLayout::uniform(l, r).unwrap();
        let f = BtdFactors::random(dims, layout, &mut ChaCha8Rng::seed_from_u64(seed));
        (reconstruct(&f), f)
    }

    #[test]
    fn objective_zero_at_exact_fit_without_regularization() {
        let (y, f) = planted((4, 3, 5), 2, 2, 1);
        let mut cfg = BatchConfig::new(0.0, 0.0, 2, 2);
        cfg.eta2 = 1e-300;
        assert!(objective_batch(&y, &f, &cfg).unwrap().abs() < 1e-20);
    }

    #[test]
    fn objective_of_zero_factors_is_half_norm() {
        let (y, f) = planted((4, 3, 5), 2, 2, 2);
        let zero = BtdFactors::new(
            Array2::zeros(f.a.dim()),
            Array2::zeros(f.b.dim()),
            Array2::zeros(f.c.dim()),
            2,
        )
        .unwrap();
        let cfg = BatchConfig::new(0.0, 0.0, 2, 2);
        let obj = objective_batch(&y, &zero, &cfg).unwrap();
        assert!((obj - 0.5 * y.frobenius_norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_scalar_loops() {
        let (_, f) = planted((3, 2, 4), 2, 2, 3);
        let (y, _) = planted((3, 2, 4), 1, 1, 4);
        let mut cfg = BatchConfig::new(0.7, 1.3, 2, 2);
        cfg.eta2 = 0.01;
        let mut fit = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    let mut m = 0.0;
                    for col in 0..4 {
                        m += f.a[[i, col]] * f.b[[j, col]] * f.c[[k, col / 2]];
                    }
                    fit += (y.get(i, j, k) - m).powi(2);
                }
            }
        }
        let mut reg = 0.0;
        for col in 0..4 {
            let mut e = cfg.eta2;
            for i in 0..3 {
                e += f.a[[i, col]].powi(2);
            }
            for j in 0..2 {
                e += f.b[[j, col]].powi(2);
            }
            reg += cfg.lambda * e.sqrt();
        }
        for r in 0..2 {
            let mut e = cfg.eta2;
            for k in 0..4 {
                e += f.c[[k, r]].powi(2);
            }
            reg += cfg.mu * e.sqrt();
        }
        let expect = 0.5 * fit + reg;
        assert!((objective_batch(&y, &f, &cfg).unwrap() - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn fast_objective_matches_direct() {
        let (y, _) = planted((5, 4, 6), 2, 2, 5);
        let (_, f) = planted((5, 4, 6), 3, 2, 6);
        let cfg = BatchConfig::new(0.3, 0.2, 2, 3);
        let fast = objective_from_terms(y.frobenius_norm_sq(), &fit_terms(&y, &f), &f, &cfg);
        let direct = objective_batch(&y, &f, &cfg).unwrap();
        assert!((fast - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn d1_entries() {
        let c = array![[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let d1 = weights_d1(&c.view(), 1.0);
        assert_eq!(d1[0], 1.0);
        assert!((d1[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn d2_entries() {
        let a = Array2::zeros((3, 2));
        let b = Array2::zeros((2, 2));
        let d2 = weights_d2(&a.view(), &b.view(), 4.0);
        assert_eq!(d2.to_vec(), vec![0.5, 0.5]);
        let a = array![[1.0, 0.0], [1.0, 0.0]];
        let b = array![[1.0, 0.0]];
        let d2 = weights_d2(&a.view(), &b.view(), 1.0);
        assert!((d2[0] - 0.5).abs() < 1e-15);
        assert_eq!(d2[1], 1.0);
    }

    #[test]
    fn mttkrps_match_explicit_unfoldings() {
        let (y, _) = planted((5, 4, 6), 2, 3, 7);
        let (_, f) = planted((5, 4, 6), 2, 3, 8);
        let t = contract_mode3(&y, &f.c.view());
        let m1 = mttkrp_mode1(&t, &f.b.view(), f.layout());
        let m1_ref = y.unfold(UnfoldingMode::Mode1).dot(&p_matrix(&f));
        assert!((&m1 - &m1_ref).iter().all(|v| v.abs() < 1e-10));
        let m2 = mttkrp_mode2(&t, &f.a.view(), f.layout());
        let m2_ref = y.unfold(UnfoldingMode::Mode2).dot(&q_matrix(&f));
        assert!((&m2 - &m2_ref).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn updates_match_textbook_formulas() {
        // A <- Y(1) P (P^T P + lambda D2)^{-1} etc., with explicit Khatri-Rao products.
        let (y, _) = planted((5, 4, 6), 2, 2, 9);
        let (_, f) = planted((5, 4, 6), 2, 2, 10);
        let cfg = BatchConfig::new(0.5, 0.8, 2, 2);
        let explicit = |design: Array2<f64>, data: Array2<f64>, w: Array1<f64>, reg: f64| {
            let mut g = design.t().dot(&design);
            for (i, d) in w.iter().enumerate() {
                g[[i, i]] += reg * d;
            }
            let rhs = data.dot(&design);
            crate::linalg::Cholesky::factor(&g.view()).unwrap().solve_right(&rhs.view())
        };
        let a_ref = explicit(
            p_matrix(&f),
            y.unfold(UnfoldingMode::Mode1),
            weights_d2(&f.a.view(), &f.b.view(), cfg.eta2),
            cfg.lambda,
        );
        let a = update_a(&y, &f, &cfg).unwrap().a;
        assert!((&a - &a_ref).iter().all(|v| v.abs() < 1e-9));
        let b_ref = explicit(
            q_matrix(&f),
            y.unfold(UnfoldingMode::Mode2),
            weights_d2(&f.a.view(), &f.b.view(), cfg.eta2),
            cfg.lambda,
        );
        let b = update_b(&y, &f, &cfg).unwrap().b;
        assert!((&b - &b_ref).iter().all(|v| v.abs() < 1e-9));
        let s = build_s(&f.a.view(), &f.b.view(), f.layout()).unwrap();
        let c_ref = explicit(s, y.unfold(UnfoldingMode::Mode3), weights_d1(&f.c.view(), cfg.eta2), cfg.mu);
        let c = update_c(&y, &f, &cfg).unwrap().c;
        assert!((&c - &c_ref).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_tensor_shrinks_factors() {
        let y = Tensor3::zeros(4, 3, 5);
        let (_, f) = planted((4, 3, 5), 2, 2, 11);
        let cfg = BatchConfig::new(1.0, 1.0, 2, 2);
        let next = irls_sweep(&y, &f, &cfg).unwrap();
        let norm = |f: &BtdFactors| f.a.iter().chain(f.b.iter()).chain(f.c.iter()).map(|v| v * v).sum::<f64>();
        assert!(norm(&next) < norm(&f));
        assert!(objective_batch(&y, &next, &cfg).unwrap() < objective_batch(&y, &f, &cfg).unwrap());
    }

    #[test]
    fn each_partial_update_decreases_objective() {
        let (x, _) = planted((6, 5, 7), 2, 2, 12);
        let (_, init) = planted((6, 5, 7), 3, 3, 13);
        let cfg = BatchConfig::new(0.5, 0.5, 3, 3);
        let mut f = init;
        for _ in 0..5 {
            let o0 = objective_batch(&x, &f, &cfg).unwrap();
            f = update_a(&x, &f, &cfg).unwrap();
            let o1 = objective_batch(&x, &f, &cfg).unwrap();
            f = update_b(&x, &f, &cfg).unwrap();
            let o2 = objective_batch(&x, &f, &cfg).unwrap();
            f = update_c(&x, &f, &cfg).unwrap();
            let o3 = objective_batch(&x, &f, &cfg).unwrap();
            assert!(o1 <= o0 + 1e-10 * o0 && o2 <= o1 + 1e-10 * o1 && o3 <= o2 + 1e-10 * o2);
        }
    }

    #[test]
    fn sweep_equals_sequence_of_partial_updates() {
        let (y, _) = planted((5, 4, 6), 2, 2, 14);
        let (_, f) = planted((5, 4, 6), 2, 3, 15);
        let cfg = BatchConfig::new(0.4, 0.6, 3, 2);
        let swept = irls_sweep(&y, &f, &cfg).unwrap();
        let seq = update_c(&y, &update_b(&y, &update_a(&y, &f, &cfg).unwrap(), &cfg).unwrap(), &cfg).unwrap();
        assert!((&swept.a - &seq.a).iter().all(|v| v.abs() < 1e-10));
        assert!((&swept.c - &seq.c).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn unregularized_sweep_keeps_true_factors() {
        let (y, f) = planted((6, 5, 8), 2, 2, 16);
        let mut cfg = BatchConfig::new(0.0, 0.0, 2, 2);
        cfg.eta2 = 1e-30;
        let next = irls_sweep(&y, &f, &cfg).unwrap();
        for (new, old) in [(&next.a, &f.a), (&next.b, &f.b), (&next.c, &f.c)] {
            let rel = (new - old).iter().map(|v| v * v).sum::<f64>().sqrt() / old.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rel < 1e-8, "rel {rel}");
        }
    }

    #[test]
    fn rank_one_noiseless_fit() {
        let (y, _) = planted((6, 5, 7), 1, 1, 17);
        let mut cfg = BatchConfig::new(1e-6, 1e-6, 1, 1);
        cfg.rel_tol = 1e-12;
        cfg.max_iters = 2000;
        let res = btd_irls(&y, &cfg).unwrap();
        let resid = y.add_scaled(-1.0, &reconstruct(&res.factors)).unwrap().frobenius_norm();
        assert!(resid / y.frobenius_norm() < 1e-3);
    }

    #[test]
    fn reveals_planted_ranks_noiseless() {
        let (y, _) = planted((10, 9, 12), 2, 2, 18);
        // lambda = L(I+J)sigma, mu = 2KR sigma with a noise floor sigma = 1e-2.
        let sigma = 1e-2;
        let mut cfg = BatchConfig::new(4.0 * 19.0 * sigma, 2.0 * 12.0 * 4.0 * sigma, 4, 4);
        cfg.seed = 3;
        cfg.rel_tol = 1e-9;
        cfg.max_iters = 3000;
        let res = btd_irls(&y, &cfg).unwrap();
        assert_eq!(res.ranks.r_hat, 2, "{:?}", res.ranks);
        let big = res.factors.c_column_norms();
        let max = big.iter().copied().fold(0.0, f64::max);
        assert_eq!(big.iter().filter(|&&n| n >= cfg.rank_threshold * max).count(), 2);
    }

    #[test]
    fn trace_is_monotone() {
        let (x, _) = planted((8, 7, 9), 2, 3, 19);
        let mut cfg = BatchConfig::new(0.2, 0.3, 5, 3);
        cfg.seed = 4;
        let res = btd_irls(&x, &cfg).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].max(1.0));
        }
        assert_eq!(res.trace.len(), res.iterations + 1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BatchConfig::new(1.0, 1.0, 2, 2);
        assert!(cfg.validate().is_ok());
        cfg.rank_threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = BatchConfig::new(-1.0, 1.0, 2, 2);
        assert!(cfg.validate().is_err());
        cfg.lambda = 1.0;
        cfg.rel_tol = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let (mut y, f) = planted((3, 3, 3), 1, 1, 20);
        y.set(0, 0, 0, f64::NAN);
        let cfg = BatchConfig::new(1.0, 1.0, 1, 1);
        assert!(irls_sweep(&y, &f, &cfg).is_err());
    }
}
