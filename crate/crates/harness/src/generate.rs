//! Synthetic plants and noise.

use btd_core::{reconstruct, BlockLayout, BtdError, BtdFactors, Result, Tensor3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Block ranks: one value for all blocks, or one per block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockRanks {
    Uniform(usize),
    PerBlock(Vec<usize>),
}

impl BlockRanks {
    pub fn layout(&self, r: usize) -> Result<BlockLayout> {
        match self {
            BlockRanks::Uniform(l) => BlockLayout::uniform(*l, r),
            BlockRanks::PerBlock(widths) => {
                if widths.len() != r {
                    return Err(BtdError::InvalidConfig(format!(
                        "{} block ranks given for R = {r}",
                        widths.len()
                    )));
                }
                BlockLayout::from_widths(widths.clone())
            }
        }
    }
}

/// Abrupt model change: slices `k_star..=K` (1-based) come from a fresh
/// plant with `r_new` blocks of ranks `l_new`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangePoint {
    pub k_star: usize,
    pub r_new: usize,
    pub l_new: BlockRanks,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub r: usize,
    pub l: BlockRanks,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_point: Option<ChangePoint>,
}

impl GenSpec {
    pub fn new(dims: (usize, usize, usize), r: usize, l: usize, seed: u64) -> Self {
        Self {
            i: dims.0,
            j: dims.1,
            k: dims.2,
            r,
            l: BlockRanks::Uniform(l),
            seed,
            change_point: None,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.i, self.j, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == 0 || self.j == 0 || self.k == 0 || self.r == 0 {
            return Err(BtdError::InvalidConfig("I, J, K and R must be positive".into()));
        }
        self.l.layout(self.r)?;
        if let Some(cp) = &self.change_point {
            if cp.k_star < 2 || cp.k_star > self.k {
                return Err(BtdError::InvalidConfig(format!(
                    "change point k* = {} must lie in 2..={}",
                    cp.k_star, self.k
                )));
            }
            if cp.r_new == 0 {
                return Err(BtdError::InvalidConfig("R after the change must be positive".into()));
            }
            cp.l_new.layout(cp.r_new)?;
        }
        Ok(())
    }
}

/// Ground truth of a generated tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Single(BtdFactors),
    /// `before` covers slices `0..at`, `after` slices `at..K` (0-based).
    Changed { before: BtdFactors, after: BtdFactors, at: usize },
}

impl Truth {
    /// Factors that generated 0-based slice `k`, and the row of `C` to use.
    pub fn model_for(&self, k: usize) -> (&BtdFactors, usize) {
        match self {
            Truth::Single(f) => (f, k),
            Truth::Changed { before, after, at } => {
                if k < *at {
                    (before, k)
                } else {
                    (after, k - at)
                }
            }
        }
    }

    pub fn single(&self) -> Option<&BtdFactors> {
        match self {
            Truth::Single(f) => Some(f),
            Truth::Changed { .. } => None,
        }
    }
}

/// Noiseless tensor and its ground truth; entries of `A`, `B`, `C` are
/// i.i.d. standard normal drawn from a ChaCha8 stream seeded by `spec.seed`
/// (`A`, then `B`, then `C`, each row-major).
pub fn generate(spec: &GenSpec) -> Result<(Tensor3, Truth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = spec.l.layout(spec.r)?;
    match &spec.change_point {
        None => {
            let f = BtdFactors::random(spec.dims(), layout, &mut rng);
            Ok((reconstruct(&f), Truth::Single(f)))
        }
        Some(cp) => {
            let at = cp.k_star - 1;
            let before = BtdFactors::random((spec.i, spec.j, at), layout, &mut rng);
            let after = BtdFactors::random((spec.i, spec.j, spec.k - at), cp.l_new.layout(cp.r_new)?, &mut rng);
            let (x1, x2) = (reconstruct(&before), reconstruct(&after));
            let mut data = x1.into_vec();
            data.extend_from_slice(x2.as_slice());
            let x = Tensor3::from_vec(spec.dims(), data)?;
            Ok((x, Truth::Changed { before, after, at }))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// Returns `Y = X + sigma N` with `N` i.i.d. standard normal and
/// `sigma = |X| / (|N| 10^(snr/20))`, so the realized SNR equals the target.
pub fn add_noise(x: &Tensor3, spec: &NoiseSpec) -> Result<(Tensor3, f64)> {
    if !spec.snr_db.is_finite() {
        return Err(BtdError::InvalidConfig(format!("SNR must be finite, got {}", spec.snr_db)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = Tensor3::from_vec(x.dims(), noise)?;
    let sigma = x.frobenius_norm() / (n.frobenius_norm() * 10f64.powf(spec.snr_db / 20.0));
    Ok((x.add_scaled(sigma, &n)?, sigma))
}

/// `10 log10(|X|^2 / |Y - X|^2)`.
pub fn realized_snr_db(x: &Tensor3, y: &Tensor3) -> Result<f64> {
    let noise = y.add_scaled(-1.0, x)?;
    Ok(10.0 * (x.frobenius_norm_sq() / noise.frobenius_norm_sq()).log10())
}
