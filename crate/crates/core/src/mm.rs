//! Majorization-minimization surrogates behind the closed-form updates.
//!
//! Every subproblem solved by the batch and streaming algorithms has the
//! same shape. For an unknown `X` (`n x p`), data `Z` (`T x n`), design `M`
//! (`T x p`), nonnegative row weights `w` (`T`) and per-column offsets `o`:
//!
//! ```text
//! f(X) = 1/2 sum_t w_t |z_t - X m_t|^2 + pen * sum_c sqrt(|x_c|^2 + o_c + eta2)
//! ```
//!
//! * `gamma`: `X = gamma^T` (`n = 1`), `M = S`, `Z = vec(Y_k)`, `w = 1`,
//!   `o_r` = windowed `C` energy, expansion at `gamma = 0`, `pen = mu`.
//! * `A`: `X = A`, `M = B ⊙ C`, `Z = Y(1)^T`, `w` = forgetting weights,
//!   `o_c = |b_c|^2`, `pen = lambda`.
//! * `B`: the mirror image with `M = C ⊙ A`, `Z = Y(2)^T`, `o_c = |a_c|^2`.
//! * batch `C`: `M = S`, `Z = Y(3)^T`, `o = 0`.
//!
//! The surrogate at `X0` replaces the penalty Hessian with
//! `pen * diag(1/s_c(X0))`, giving `H~ = M^T W M + pen * D`. Because
//! `sqrt` is concave, `sqrt(u) <= sqrt(u0) + (u - u0) / (2 sqrt(u0))`, which
//! is exactly this second-order expansion, so the surrogate dominates `f`
//! everywhere and touches it at `X0`. Its minimizer `X0 - grad f(X0) H~^{-1}`
//! is the reweighted closed form used by the solvers.
//!
//! These routines form explicit matrices and are intended as a test oracle
//! on small instances.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{BtdError, Result};
use crate::linalg::spd_solve_right;

/// Group-sparse weighted least squares `f(X)` (see module docs).
#[derive(Debug, Clone)]
pub struct GroupSparseLs {
    z: Array2<f64>,
    m: Array2<f64>,
    w: Array1<f64>,
    penalty: f64,
    offsets: Array1<f64>,
    eta2: f64,
}

/// Quadratic surrogate of a [`GroupSparseLs`] around an expansion point.
#[derive(Debug, Clone)]
pub struct SurrogatePoint {
    pub x0: Array2<f64>,
    pub value: f64,
    pub gradient: Array2<f64>,
    /// `p x p` matrix acting identically on every row of `X - X0`.
    pub hessian: Array2<f64>,
}

impl GroupSparseLs {
    pub fn new(
        z: Array2<f64>,
        m: Array2<f64>,
        w: Option<Array1<f64>>,
        penalty: f64,
        offsets: Array1<f64>,
        eta2: f64,
    ) -> Result<Self> {
        let t = m.nrows();
        let w = w.unwrap_or_else(|| Array1::ones(t));
        if z.nrows() != t || w.len() != t || offsets.len() != m.ncols() {
            return Err(BtdError::DimensionMismatch(format!(
                "Z {:?}, M {:?}, w {}, offsets {}",
                z.dim(),
                m.dim(),
                w.len(),
                offsets.len()
            )));
        }
        if w.iter().any(|v| *v < 0.0) || offsets.iter().any(|v| *v < 0.0) || penalty < 0.0 || eta2 <= 0.0 {
            return Err(BtdError::InvalidConfig("weights, offsets and penalty must be nonnegative, eta2 positive".into()));
        }
        Ok(Self { z, m, w, penalty, offsets, eta2 })
    }

    /// The `gamma` problem for slice `y = vec(Y_k)` with `c_energy` already
    /// multiplied by the forgetting factor.
    pub fn gamma(s: &ArrayView2<'_, f64>, y: &ArrayView1<'_, f64>, c_energy: &ArrayView1<'_, f64>, mu: f64, eta2: f64) -> Result<Self> {
        let z = y.to_owned().insert_axis(Axis(1));
        Self::new(z, s.to_owned(), None, mu, c_energy.to_owned(), eta2)
    }

    /// The `A` problem: `y1` is the (accumulated) mode-1 unfolding
    /// (`I x T`), `p` the matching `B ⊙ C` (`T x LR`), `weights` one entry
    /// per column of `y1`.
    pub fn a_side(
        y1: &ArrayView2<'_, f64>,
        p: &ArrayView2<'_, f64>,
        weights: Option<Array1<f64>>,
        b: &ArrayView2<'_, f64>,
        lambda: f64,
        eta2: f64,
    ) -> Result<Self> {
        let offsets = b.map_axis(Axis(0), |col| col.dot(&col));
        Self::new(y1.t().to_owned(), p.to_owned(), weights, lambda, offsets, eta2)
    }

    /// The `B` problem: `y2` is the mode-2 unfolding, `q` the matching
    /// `C ⊙ A`.
    pub fn b_side(
        y2: &ArrayView2<'_, f64>,
        q: &ArrayView2<'_, f64>,
        weights: Option<Array1<f64>>,
        a: &ArrayView2<'_, f64>,
        lambda: f64,
        eta2: f64,
    ) -> Result<Self> {
        Self::a_side(y2, q, weights, a, lambda, eta2)
    }

    /// The batch `C` problem: `y3` is the mode-3 unfolding, `s` the block
    /// Khatri-Rao matrix.
    pub fn c_side(y3: &ArrayView2<'_, f64>, s: &ArrayView2<'_, f64>, mu: f64, eta2: f64) -> Result<Self> {
        let r = s.ncols();
        Self::new(y3.t().to_owned(), s.to_owned(), None, mu, Array1::zeros(r), eta2)
    }

    /// `(n, p)`, the shape of `X`.
    pub fn shape(&self) -> (usize, usize) {
        (self.z.ncols(), self.m.ncols())
    }

    fn check(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.dim() != self.shape() {
            return Err(BtdError::DimensionMismatch(format!("X is {:?}, expected {:?}", x.dim(), self.shape())));
        }
        Ok(())
    }

    fn scales(&self, x: &ArrayView2<'_, f64>) -> Array1<f64> {
        let sq = x.map_axis(Axis(0), |col| col.dot(&col));
        (sq + &self.offsets).mapv(|u| (u + self.eta2).sqrt())
    }

    fn residual(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        &self.z - &self.m.dot(&x.t())
    }

    fn weighted_gram(&self) -> Array2<f64> {
        let wm = &self.m * &self.w.view().insert_axis(Axis(1));
        self.m.t().dot(&wm)
    }

    pub fn value(&self, x: &ArrayView2<'_, f64>) -> Result<f64> {
        self.check(x)?;
        let r = self.residual(x);
        let data: f64 = r.rows().into_iter().zip(self.w.iter()).map(|(row, w)| w * row.dot(&row)).sum();
        Ok(0.5 * data + self.penalty * self.scales(x).sum())
    }

    pub fn gradient(&self, x: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        let wr = self.residual(x) * &self.w.view().insert_axis(Axis(1));
        let inv = self.scales(x).mapv(|s| self.penalty / s);
        Ok(-wr.t().dot(&self.m) + &x.to_owned() * &inv.view().insert_axis(Axis(0)))
    }

    /// Exact Hessian with respect to the row-major vectorization of `X`
    /// (`np x np`).
    pub fn hessian(&self, x: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        let (n, p) = self.shape();
        let g = self.weighted_gram();
        let s = self.scales(x);
        let mut h = Array2::zeros((n * p, n * p));
        for i in 0..n {
            h.slice_mut(ndarray::s![i * p..(i + 1) * p, i * p..(i + 1) * p]).assign(&g);
        }
        for c in 0..p {
            let (sc, pen) = (s[c], self.penalty);
            for i in 0..n {
                h[[i * p + c, i * p + c]] += pen / sc;
                for j in 0..n {
                    h[[i * p + c, j * p + c]] -= pen * x[[i, c]] * x[[j, c]] / (sc * sc * sc);
                }
            }
        }
        Ok(h)
    }

    /// Builds the surrogate at `x0`.
    pub fn surrogate_at(&self, x0: &ArrayView2<'_, f64>) -> Result<SurrogatePoint> {
        let value = self.value(x0)?;
        let gradient = self.gradient(x0)?;
        let mut hessian = self.weighted_gram();
        for (c, s) in self.scales(x0).iter().enumerate() {
            hessian[[c, c]] += self.penalty / s;
        }
        Ok(SurrogatePoint { x0: x0.to_owned(), value, gradient, hessian })
    }
}

impl SurrogatePoint {
    fn delta(&self, x: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.dim() != self.x0.dim() {
            return Err(BtdError::DimensionMismatch(format!("X is {:?}, expected {:?}", x.dim(), self.x0.dim())));
        }
        Ok(x - &self.x0)
    }

    pub fn value(&self, x: &ArrayView2<'_, f64>) -> Result<f64> {
        let d = self.delta(x)?;
        let lin = (&self.gradient * &d).sum();
        let quad = (&d.dot(&self.hessian) * &d).sum();
        Ok(self.value + lin + 0.5 * quad)
    }

    pub fn gradient(&self, x: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let d = self.delta(x)?;
        Ok(&self.gradient + &d.dot(&self.hessian))
    }

    /// `X0 - grad H~^{-1}`.
    pub fn minimizer(&self) -> Result<Array2<f64>> {
        let step = spd_solve_right(&self.hessian, &vec![0.0; self.hessian.nrows()], &self.gradient.view())?;
        Ok(&self.x0 - &step)
    }
}

fn gamma_row(gamma: &ArrayView1<'_, f64>) -> Array2<f64> {
    gamma.to_owned().insert_axis(Axis(0))
}

/// Objective of the `gamma` subproblem.
pub fn f_gamma(gamma: &ArrayView1<'_, f64>, s: &ArrayView2<'_, f64>, y: &ArrayView1<'_, f64>, c_energy: &ArrayView1<'_, f64>, mu: f64, eta2: f64) -> Result<f64> {
    GroupSparseLs::gamma(s, y, c_energy, mu, eta2)?.value(&gamma_row(gamma).view())
}

/// Surrogate of the `gamma` subproblem around `gamma = 0`.
pub fn gamma_surrogate(s: &ArrayView2<'_, f64>, y: &ArrayView1<'_, f64>, c_energy: &ArrayView1<'_, f64>, mu: f64, eta2: f64) -> Result<SurrogatePoint> {
    let p = GroupSparseLs::gamma(s, y, c_energy, mu, eta2)?;
    p.surrogate_at(&Array2::zeros((1, s.ncols())).view())
}

pub fn g_gamma(gamma: &ArrayView1<'_, f64>, point: &SurrogatePoint) -> Result<f64> {
    point.value(&gamma_row(gamma).view())
}

/// Exact Hessian `S^T S + mu D_gamma` of the `gamma` objective.
pub fn hessian_gamma(gamma: &ArrayView1<'_, f64>, s: &ArrayView2<'_, f64>, c_energy: &ArrayView1<'_, f64>, mu: f64, eta2: f64) -> Result<Array2<f64>> {
    let y = Array1::zeros(s.nrows());
    GroupSparseLs::gamma(s, &y.view(), c_energy, mu, eta2)?.hessian(&gamma_row(gamma).view())
}

/// Diagonal of `H~ - H(gamma)`, the surrogate curvature (taken at
/// `gamma = 0`) minus the exact curvature at `gamma`:
/// `mu [ 1/s0 - 1/s + gamma^2 / s^3 ]`, `s0 = sqrt(e + eta2)`,
/// `s = sqrt(e + gamma^2 + eta2)`.
pub fn gap_d(gamma: &ArrayView1<'_, f64>, c_energy: &ArrayView1<'_, f64>, mu: f64, eta2: f64) -> Array1<f64> {
    gamma
        .iter()
        .zip(c_energy.iter())
        .map(|(&g, &e)| {
            if g == 0.0 {
                return 0.0;
            }
            let s0 = (e + eta2).sqrt();
            let s = (e + g * g + eta2).sqrt();
            mu * ((1.0 / s0 - 1.0 / s) + g * g / (s * s * s))
        })
        .collect()
}
