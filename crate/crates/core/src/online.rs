//! Streaming rank-revealing BTD (online reweighted RLS).
//!
//! Each new frontal slice `Y_k` triggers exactly one pass of
//!
//! 1. reweighting matrices `D1` (from the windowed `C` column energies) and
//!    `D2` (from the step-entry `A`, `B`),
//! 2. the new row `gamma_k` of `C`: `(S^T S + mu D1)^{-1} S^T vec(Y_k)`,
//! 3. `V_A <- xi V_A + (B ⊙ gamma^T)^T (B ⊙ gamma^T)`,
//!    `G_A <- xi G_A + Y_k (B ⊙ gamma^T)`, `A <- G_A (V_A + lambda D2)^{-1}`,
//! 4. the mirror image for `B` using the freshly updated `A`,
//! 5. `e_r <- xi (e_r + gamma_r^2)`.
//!
//! Old rows of `C` are never revisited, so the state holds only `A`, `B`,
//! the four recursive matrices and the `R` windowed energies. The energies
//! are stored pre-multiplied by `xi`, i.e. `e_r = xi * sum_k xi^(n-k) c_kr^2`,
//! which is exactly the quantity under the square root of `D1`.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::batch::{contract_mode3, mttkrp_mode1, mttkrp_mode2, weights_d2, DEFAULT_ETA2};
use crate::error::{BtdError, Result};
use crate::factors::{BlockLayout, BtdFactors};
use crate::linalg::{spd_solve_right, spd_solve_vec};
use crate::multilinear::{block_sum_vec, hadamard_expand, s_gram, scale_columns_by_block};
use crate::ranks::{estimate_ranks_from_norms, RankEstimate};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    /// Forgetting factor in `(0, 1]`.
    pub xi: f64,
    pub lambda: f64,
    pub mu: f64,
    pub eta2: f64,
    pub warmup_slices: usize,
    pub r_ini: usize,
    pub l_ini: usize,
    pub rank_threshold: f64,
    /// Number of recent `gamma` rows kept for diagnostics (0 disables).
    pub history_len: usize,
}

impl OnlineConfig {
    pub fn new(xi: f64, lambda: f64, mu: f64, r_ini: usize, l_ini: usize) -> Self {
        Self {
            xi,
            lambda,
            mu,
            eta2: DEFAULT_ETA2,
            warmup_slices: 50,
            r_ini,
            l_ini,
            rank_threshold: 1e-2,
            history_len: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BtdError::InvalidConfig(msg));
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return bad(format!("forgetting factor must lie in (0, 1], got {}", self.xi));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite() && self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("lambda and mu must be finite and nonnegative".into());
        }
        if !(self.eta2 > 0.0 && self.eta2.is_finite()) {
            return bad(format!("eta2 must be positive, got {}", self.eta2));
        }
        if self.warmup_slices == 0 || self.r_ini == 0 || self.l_ini == 0 {
            return bad("warmup_slices, r_ini and l_ini must be positive".into());
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold < 1.0) {
            return bad(format!("rank_threshold must lie in (0, 1), got {}", self.rank_threshold));
        }
        Ok(())
    }
}

/// Diagnostics of one streaming step.
#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    /// 1-based step index since initialization.
    pub k: u64,
    /// `|X_k - A (diag(gamma) ⊗ I) B^T|_F^2 / |X_k|_F^2` against the
    /// reference slice (the observed slice unless one was supplied).
    pub nse: f64,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
    pub ranks: RankEstimate,
}

mod duration_secs {
    use serde::Serializer;
    use std::time::Duration;
    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }
}

/// Result of [`OnlineState::step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub gamma: Array1<f64>,
    pub metrics: StepMetrics,
}

/// Recursive state of the streaming solver. Its size depends only on
/// `(I, J, L, R)` (plus the optional diagnostics ring buffer).
#[derive(Debug, Clone)]
pub struct OnlineState {
    pub(crate) cfg: OnlineConfig,
    pub(crate) layout: BlockLayout,
    pub(crate) a: Array2<f64>,
    pub(crate) b: Array2<f64>,
    pub(crate) v_a: Array2<f64>,
    pub(crate) g_a: Array2<f64>,
    pub(crate) v_b: Array2<f64>,
    pub(crate) g_b: Array2<f64>,
    pub(crate) c_energy: Array1<f64>,
    pub(crate) k: u64,
    pub(crate) history: VecDeque<Array1<f64>>,
}

/// Closed-form scalar count of an [`OnlineState`] without history:
/// `A`, `G_A` (`I x LR`), `B`, `G_B` (`J x LR`), `V_A`, `V_B` (`LR x LR`)
/// and the `R` energies.
pub fn state_scalar_count(i: usize, j: usize, columns: usize, blocks: usize) -> usize {
    2 * (i + j) * columns + 2 * columns * columns + blocks
}

/// Symmetric Gram `M^T M`, exactly symmetric.
fn sym_gram(m: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut g = m.t().dot(m);
    let n = g.nrows();
    for p in 0..n {
        for q in 0..p {
            let v = 0.5 * (g[[p, q]] + g[[q, p]]);
            g[[p, q]] = v;
            g[[q, p]] = v;
        }
    }
    g
}

/// Builds the initial state from a batch fit of the warm-up slices.
///
/// `V_A`, `G_A`, `V_B`, `G_B` and the energies are computed directly from
/// the warm-up data with exponential weights `xi^(Kw - k)` (the newest
/// slice has weight 1).
pub fn init_online(y_warm: &Tensor3, fit: &BtdFactors, cfg: &OnlineConfig) -> Result<OnlineState> {
    cfg.validate()?;
    if y_warm.dims() != fit.dims() {
        return Err(BtdError::DimensionMismatch(format!(
            "warm-up tensor is {:?} but the fit describes {:?}",
            y_warm.dims(),
            fit.dims()
        )));
    }
    let kw = y_warm.dims().2;
    let weights: Array1<f64> = (0..kw).map(|k| cfg.xi.powi((kw - 1 - k) as i32)).collect();
    let layout = fit.layout().clone();
    let wc = &fit.c * &weights.view().insert_axis(Axis(1));
    let ctwc = fit.c.t().dot(&wc);
    let ctwc = 0.5 * (&ctwc + &ctwc.t());
    let t = contract_mode3(y_warm, &wc.view());
    let v_a = hadamard_expand(&sym_gram(&fit.b.view()), &ctwc.view(), &layout);
    let g_a = mttkrp_mode1(&t, &fit.b.view(), &layout);
    let v_b = hadamard_expand(&sym_gram(&fit.a.view()), &ctwc.view(), &layout);
    let g_b = mttkrp_mode2(&t, &fit.a.view(), &layout);
    let c_energy = (&fit.c * &fit.c * &weights.view().insert_axis(Axis(1))).sum_axis(Axis(0)) * cfg.xi;
    Ok(OnlineState {
        cfg: cfg.clone(),
        layout,
        a: fit.a.clone(),
        b: fit.b.clone(),
        v_a,
        g_a,
        v_b,
        g_b,
        c_energy,
        k: 0,
        history: VecDeque::with_capacity(cfg.history_len),
    })
}

impl OnlineState {
    pub fn config(&self) -> &OnlineConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn v_a(&self) -> &Array2<f64> {
        &self.v_a
    }

    pub fn g_a(&self) -> &Array2<f64> {
        &self.g_a
    }

    pub fn v_b(&self) -> &Array2<f64> {
        &self.v_b
    }

    pub fn g_b(&self) -> &Array2<f64> {
        &self.g_b
    }

    /// Windowed squared `C` column norms, pre-multiplied by `xi`.
    pub fn c_energy(&self) -> &Array1<f64> {
        &self.c_energy
    }

    /// Number of slices processed since initialization.
    pub fn steps(&self) -> u64 {
        self.k
    }

    /// Most recent `gamma` rows, oldest first.
    pub fn history(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.history.iter()
    }

    pub fn slice_dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.nrows())
    }

    /// Number of scalars held by the state.
    pub fn scalar_count(&self) -> usize {
        self.a.len()
            + self.b.len()
            + self.v_a.len()
            + self.g_a.len()
            + self.v_b.len()
            + self.g_b.len()
            + self.c_energy.len()
            + self.cfg.history_len * self.layout.blocks()
    }

    /// `D1 = diag((e_r + eta2)^{-1/2})`.
    pub fn weights_d1(&self) -> Array1<f64> {
        self.c_energy.mapv(|e| 1.0 / (e + self.cfg.eta2).sqrt())
    }

    /// `D2` from the current `A`, `B`.
    pub fn weights_d2(&self) -> Array1<f64> {
        weights_d2(&self.a.view(), &self.b.view(), self.cfg.eta2)
    }

    /// Effective ranks from `(A, B)` column norms and windowed `C` energies.
    pub fn effective_ranks(&self) -> Result<RankEstimate> {
        let c_norms: Vec<f64> = self.c_energy.iter().map(|e| e.max(0.0).sqrt()).collect();
        let ab: Vec<f64> = self
            .a
            .columns()
            .into_iter()
            .zip(self.b.columns())
            .map(|(x, y)| (x.dot(&x) + y.dot(&y)).sqrt())
            .collect();
        estimate_ranks_from_norms(&c_norms, &ab, &self.layout, self.cfg.rank_threshold)
    }

    fn check_slice(&self, y: &ArrayView2<'_, f64>) -> Result<()> {
        if y.dim() != self.slice_dims() {
            return Err(BtdError::DimensionMismatch(format!(
                "slice is {:?}, state expects {:?}",
                y.dim(),
                self.slice_dims()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(BtdError::NonFinite("input slice"));
        }
        Ok(())
    }

    /// New row of `C` for slice `y`:
    /// `(S^T S + mu D1)^{-1} S^T vec(y)` with `S` from the current `A`, `B`.
    pub fn update_gamma(&self, y: &ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_slice(y)?;
        let yb = y.dot(&self.b);
        self.solve_gamma(&yb)
    }

    fn solve_gamma(&self, yb: &Array2<f64>) -> Result<Array1<f64>> {
        // S^T vec(y) per block: sum_l a_rl^T Y b_rl.
        let per_column: Array1<f64> = (&self.a * yb).sum_axis(Axis(0));
        let sty = block_sum_vec(&per_column, &self.layout);
        let sts = s_gram(&self.a.view(), &self.b.view(), &self.layout);
        let shift: Vec<f64> = self.weights_d1().iter().map(|d| self.cfg.mu * d).collect();
        spd_solve_vec(&sts, &shift, &sty.view())
    }

    /// `e_r <- xi (e_r + gamma_r^2)`.
    pub fn recurse_c_energy(&mut self, gamma: &Array1<f64>) {
        let xi = self.cfg.xi;
        self.c_energy
            .iter_mut()
            .zip(gamma.iter())
            .for_each(|(e, g)| *e = xi * (*e + g * g));
    }

    fn outer_gamma(&self, gamma: &Array1<f64>) -> Array2<f64> {
        let g = gamma.view().insert_axis(Axis(1));
        g.dot(&g.t())
    }

    /// Updates `V_A`, `G_A` and, unless `d2` is `None`, solves for `A`.
    pub fn recurse_a_side(&mut self, gamma: &Array1<f64>, y: &ArrayView2<'_, f64>, d2: Option<&Array1<f64>>) -> Result<()> {
        self.check_slice(y)?;
        let yb = y.dot(&self.b);
        self.recurse_a_inner(gamma, &yb, d2)
    }

    fn recurse_a_inner(&mut self, gamma: &Array1<f64>, yb: &Array2<f64>, d2: Option<&Array1<f64>>) -> Result<()> {
        let xi = self.cfg.xi;
        let gg = self.outer_gamma(gamma);
        let update = hadamard_expand(&sym_gram(&self.b.view()), &gg.view(), &self.layout);
        self.v_a = xi * &self.v_a + update;
        self.g_a = xi * &self.g_a + scale_columns_by_block(&yb.view(), &gamma.view(), &self.layout);
        if let Some(d2) = d2 {
            let shift: Vec<f64> = d2.iter().map(|d| self.cfg.lambda * d).collect();
            self.a = spd_solve_right(&self.v_a, &shift, &self.g_a.view())?;
        }
        Ok(())
    }

    /// Updates `V_B`, `G_B` with the current `A` and, unless `d2` is `None`,
    /// solves for `B`.
    pub fn recurse_b_side(&mut self, gamma: &Array1<f64>, y: &ArrayView2<'_, f64>, d2: Option<&Array1<f64>>) -> Result<()> {
        self.check_slice(y)?;
        let xi = self.cfg.xi;
        let gg = self.outer_gamma(gamma);
        let update = hadamard_expand(&sym_gram(&self.a.view()), &gg.view(), &self.layout);
        self.v_b = xi * &self.v_b + update;
        let ya = y.t().dot(&self.a);
        self.g_b = xi * &self.g_b + scale_columns_by_block(&ya.view(), &gamma.view(), &self.layout);
        if let Some(d2) = d2 {
            let shift: Vec<f64> = d2.iter().map(|d| self.cfg.lambda * d).collect();
            self.b = spd_solve_right(&self.v_b, &shift, &self.g_b.view())?;
        }
        Ok(())
    }

    /// Processes one slice; NSE is measured against the slice itself.
    pub fn step(&mut self, y: &ArrayView2<'_, f64>) -> Result<StepOutcome> {
        self.step_inner(y, None, true)
    }

    /// Processes one slice; NSE is measured against `reference` (for example
    /// the noiseless slice in a simulation).
    pub fn step_with_reference(&mut self, y: &ArrayView2<'_, f64>, reference: &ArrayView2<'_, f64>) -> Result<StepOutcome> {
        if reference.dim() != y.dim() {
            return Err(BtdError::DimensionMismatch("reference slice shape differs".into()));
        }
        self.step_inner(y, Some(reference), true)
    }

    /// Ingests a slice and returns only the metrics.
    pub fn push(&mut self, y: &ArrayView2<'_, f64>) -> Result<StepMetrics> {
        Ok(self.step(y)?.metrics)
    }

    /// Runs the recursions with `A` and `B` held fixed: `gamma`, `V_*`,
    /// `G_*` and the energies advance, the factor solves are skipped.
    pub fn step_frozen(&mut self, y: &ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.step_inner(y, None, false)?.gamma)
    }

    fn step_inner(&mut self, y: &ArrayView2<'_, f64>, reference: Option<&ArrayView2<'_, f64>>, update_factors: bool) -> Result<StepOutcome> {
        let start = Instant::now();
        self.check_slice(y)?;
        let d2 = self.weights_d2();
        let yb = y.dot(&self.b);
        let gamma = self.solve_gamma(&yb)?;
        let d2 = update_factors.then_some(&d2);
        self.recurse_a_inner(&gamma, &yb, d2)?;
        self.recurse_b_side(&gamma, y, d2)?;
        self.recurse_c_energy(&gamma);
        self.k += 1;
        if self.cfg.history_len > 0 {
            if self.history.len() == self.cfg.history_len {
                self.history.pop_front();
            }
            self.history.push_back(gamma.clone());
        }
        let target = reference.unwrap_or(y);
        let model = scale_columns_by_block(&self.a.view(), &gamma.view(), &self.layout).dot(&self.b.t());
        let err: f64 = target.iter().zip(model.iter()).map(|(t, m)| (t - m) * (t - m)).sum();
        let den: f64 = target.iter().map(|t| t * t).sum();
        let nse = if den > 0.0 { err / den } else if err == 0.0 { 0.0 } else { f64::INFINITY };
        let ranks = self.effective_ranks()?;
        Ok(StepOutcome {
            gamma,
            metrics: StepMetrics {
                k: self.k,
                nse,
                wall_time: start.elapsed(),
                ranks,
            },
        })
    }

    /// Current factors `A`, `B` together with the supplied `C`.
    pub fn factors_with(&self, c: Array2<f64>) -> Result<BtdFactors> {
        BtdFactors::with_layout(self.a.clone(), self.b.clone(), c, self.layout.clone())
    }
}
