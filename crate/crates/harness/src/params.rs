//! Regularization weights from the noise level.
//!
//! With `sigma` the noise standard deviation:
//!
//! * batch: `lambda = L (I + J) sigma`, `mu = 0.75 K R sigma` at SNR up to
//!   5 dB and `mu = 2 K R sigma` above;
//! * online: `lambda = mu = L (I + J) sigma`.
//!
//! `L` and `R` are the overestimates the solver starts from, the only ranks
//! known when the weights are chosen.

/// SNR (dB) at or below which the smaller batch `mu` factor applies.
pub const LOW_SNR_DB: f64 = 5.0;

pub fn batch_lambda(sigma: f64, i: usize, j: usize, l_ini: usize) -> f64 {
    l_ini as f64 * (i + j) as f64 * sigma
}

pub fn batch_mu(sigma: f64, k: usize, r_ini: usize, snr_db: f64) -> f64 {
    let factor = if snr_db <= LOW_SNR_DB { 0.75 } else { 2.0 };
    factor * k as f64 * r_ini as f64 * sigma
}

pub fn online_lambda_mu(sigma: f64, i: usize, j: usize, l_ini: usize) -> f64 {
    batch_lambda(sigma, i, j, l_ini)
}
