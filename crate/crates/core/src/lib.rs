//! Rank-revealing rank-(L_r, L_r, 1) block-term decomposition of third-order
//! tensors.
//!
//! * [`batch`]: iteratively reweighted least squares on a whole tensor.
//! * [`online`]: exponentially weighted recursive updates, one frontal slice
//!   at a time, with memory and per-step cost independent of the number of
//!   slices seen.
//! * [`mm`]: the majorizing surrogates behind every closed-form update,
//!   usable as a test oracle.
//!
//! Ranks are overestimated at start-up; group-sparse regularization drives
//! superfluous columns toward zero and [`ranks::estimate_ranks`] reads the
//! surviving structure off the column magnitudes.

pub mod batch;
pub mod error;
pub mod factors;
pub mod io;
pub mod linalg;
pub mod mm;
pub mod multilinear;
pub mod online;
pub mod ranks;
pub mod tensor;

pub use batch::{btd_irls, btd_irls_from, irls_sweep, objective_batch, BatchConfig, BatchResult};
pub use error::{BtdError, Result};
pub use factors::{BlockLayout, BtdFactors};
pub use multilinear::{build_s, frontal_slice_model, khatri_rao, khatri_rao_cw, reconstruct};
pub use online::{init_online, state_scalar_count, OnlineConfig, OnlineState, StepMetrics, StepOutcome};
pub use ranks::{estimate_ranks, prune, RankEstimate};
pub use tensor::{Tensor3, UnfoldingMode};
