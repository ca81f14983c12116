//! Monte Carlo drivers for the two synthetic experiments.
//!
//! Experiment 1 compares the batch and streaming solvers on a stationary
//! plant at several SNRs. Experiment 2 streams a tensor whose underlying
//! model changes abruptly and records the per-slice NSE.

use std::time::Instant;

use btd_core::online::{init_online, OnlineConfig, OnlineState};
use btd_core::{btd_irls, estimate_ranks, prune, reconstruct, BatchConfig, BatchResult, BtdError, BtdFactors, Result, Tensor3};
use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generate::{add_noise, generate, BlockRanks, ChangePoint, GenSpec, NoiseSpec, Truth};
use crate::metrics::{nmse_blocks, nse, relative_error};
use crate::params::{batch_lambda, batch_mu, online_lambda_mu};

/// Environment variable capping the number of worker threads for trials.
pub const THREADS_ENV: &str = "BTD_THREADS";

/// Seed for stream `stream` of trial `trial` derived from a master seed
/// (SplitMix64 finalizer, so nearby inputs give unrelated seeds).
pub fn derive_seed(master: u64, trial: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f` on a pool sized by `threads` or, if unset, by [`THREADS_ENV`].
pub fn with_trial_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let from_env = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    let n = threads.or(from_env).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| BtdError::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Batch,
    Online,
}

/// Which `L`, `R` enter the regularization rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleRanks {
    /// The overestimates the solver is started with.
    Initial,
    /// The true ranks of the plant (before any change point).
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment1Config {
    pub dims: (usize, usize, usize),
    pub r_true: usize,
    pub l_true: usize,
    pub r_ini: usize,
    pub l_ini: usize,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub warmup_slices: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub rank_threshold: f64,
    /// Prune the warm-start fit before streaming.
    pub prune_warm_start: bool,
    /// Multiplier of the warm-start `lambda`; `None` uses
    /// [`warm_lambda_scale`].
    pub warm_lambda_scale: Option<f64>,
    pub rule_ranks: RuleRanks,
    pub solvers: Vec<Solver>,
    pub threads: Option<usize>,
}

impl Default for Experiment1Config {
    fn default() -> Self {
        Self {
            dims: (40, 35, 1250),
            r_true: 5,
            l_true: 4,
            r_ini: 10,
            l_ini: 10,
            snr_db: vec![5.0, 10.0, 15.0],
            trials: 50,
            seed: 2024,
            warmup_slices: 50,
            max_iters: 500,
            rel_tol: 1e-5,
            rank_threshold: 1e-2,
            prune_warm_start: false,
            warm_lambda_scale: None,
            rule_ranks: RuleRanks::Initial,
            solvers: vec![Solver::Batch, Solver::Online],
            threads: None,
        }
    }
}

impl Experiment1Config {
    /// 20-trial variant of the default protocol.
    pub fn quick() -> Self {
        Self { trials: 20, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (i, j, k) = self.dims;
        if i == 0 || j == 0 || k == 0 || self.r_true == 0 || self.l_true == 0 {
            return Err(BtdError::InvalidConfig("dimensions and true ranks must be positive".into()));
        }
        if self.trials == 0 || self.snr_db.is_empty() || self.solvers.is_empty() {
            return Err(BtdError::InvalidConfig("need at least one trial, SNR and solver".into()));
        }
        if self.solvers.contains(&Solver::Online) && self.warmup_slices >= k {
            return Err(BtdError::InvalidConfig(format!(
                "warmup_slices ({}) must be smaller than K ({k})",
                self.warmup_slices
            )));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(BtdError::InvalidConfig("SNR values must be finite".into()));
        }
        self.batch_config(1.0, k, 0.0, 0).validate()?;
        self.online_config(1.0, 1.0).validate()
    }

    fn rule_ranks(&self) -> (usize, usize) {
        match self.rule_ranks {
            RuleRanks::Initial => (self.l_ini, self.r_ini),
            RuleRanks::True => (self.l_true, self.r_true),
        }
    }

    pub fn batch_config(&self, sigma: f64, k: usize, snr_db: f64, seed: u64) -> BatchConfig {
        let (i, j, _) = self.dims;
        let (l, r) = self.rule_ranks();
        let mut cfg = BatchConfig::new(
            batch_lambda(sigma, i, j, l),
            batch_mu(sigma, k, r, snr_db),
            self.r_ini,
            self.l_ini,
        );
        cfg.max_iters = self.max_iters;
        cfg.rel_tol = self.rel_tol;
        cfg.rank_threshold = self.rank_threshold;
        cfg.seed = seed;
        cfg
    }

    pub fn warm_config(&self, sigma: f64, snr_db: f64, seed: u64, xi: f64) -> BatchConfig {
        let mut cfg = self.batch_config(sigma, self.warmup_slices, snr_db, seed);
        cfg.lambda *= self
            .warm_lambda_scale
            .unwrap_or_else(|| warm_lambda_scale(self.warmup_slices, self.dims.2, xi));
        cfg
    }

    pub fn online_config(&self, sigma: f64, xi: f64) -> OnlineConfig {
        let (i, j, _) = self.dims;
        let w = online_lambda_mu(sigma, i, j, self.rule_ranks().0);
        let mut cfg = OnlineConfig::new(xi, w, w, self.r_ini, self.l_ini);
        cfg.warmup_slices = self.warmup_slices;
        cfg.rank_threshold = self.rank_threshold;
        cfg
    }
}

/// Default warm-start `lambda` multiplier: the warm-up length over the
/// data horizon the streaming weights are balanced against (`K` for
/// `xi = 1`, else the effective memory `1 / (1 - xi)`, capped at `K`).
///
/// The `lambda` rule does not depend on the number of slices while the data
/// term grows with it, so applying it unchanged to a short warm-up
/// over-regularizes and can zero out true columns, which the reweighting
/// then never revives.
pub fn warm_lambda_scale(warmup: usize, k: usize, xi: f64) -> f64 {
    let horizon = if xi < 1.0 { (1.0 / (1.0 - xi)).min(k as f64) } else { k as f64 };
    (warmup as f64 / horizon).min(1.0)
}

/// Outcome of one solver on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub solver: Solver,
    pub snr_db: f64,
    pub trial: usize,
    pub sigma: f64,
    pub re: f64,
    pub nmse: f64,
    pub nmse_mismatch: bool,
    pub r_hat: usize,
    pub l_hat: Vec<usize>,
    pub ranks_recovered: bool,
    /// Batch sweeps (full solve, or the warm start for the online solver).
    pub iterations: usize,
    pub converged: bool,
}

/// Aggregates over the completed trials of one `(solver, SNR)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub solver: Solver,
    pub snr_db: f64,
    pub trials: usize,
    pub failed: usize,
    pub median_re: f64,
    pub median_nmse: f64,
    pub rank_recovery_rate: f64,
}

/// Wall-clock time of one trial (kept apart from the reproducible results).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub solver: Solver,
    pub snr_db: f64,
    pub trial: usize,
    /// Total solve time; for the online solver, warm start plus all steps.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub solver: Solver,
    pub snr_db: f64,
    pub mean_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub solver: Solver,
    pub snr_db: f64,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: Experiment1Config,
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<FailedTrial>,
    pub summary: Vec<SummaryRow>,
    pub timings: Vec<TrialTiming>,
    pub timing_summary: Vec<TimingRow>,
}

/// Median of the finite values (NaN if there are none).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Noisy realization shared by both solvers of a trial.
pub struct Realization {
    pub clean: Tensor3,
    pub noisy: Tensor3,
    pub truth: Truth,
    pub sigma: f64,
}

pub fn realize(spec: &GenSpec, snr_db: f64, noise_seed: u64) -> Result<Realization> {
    let (clean, truth) = generate(spec)?;
    let (noisy, sigma) = add_noise(&clean, &NoiseSpec { snr_db, seed: noise_seed })?;
    Ok(Realization { clean, noisy, truth, sigma })
}

/// Streaming run: warm start on the first slices, then one step per slice.
pub struct StreamRun {
    pub state: OnlineState,
    pub warm: BatchResult,
    /// Warm-start `C` rows followed by one `gamma` per streamed slice.
    pub c: Array2<f64>,
    /// NSE of each streamed slice against the reference tensor.
    pub nse: Vec<f64>,
    pub r_hat: Vec<usize>,
    pub step_seconds: Vec<f64>,
    pub warm_seconds: f64,
}

impl StreamRun {
    pub fn total_seconds(&self) -> f64 {
        self.warm_seconds + self.step_seconds.iter().sum::<f64>()
    }

    /// Final `A`, `B` with the accumulated `C`.
    pub fn factors(&self) -> Result<BtdFactors> {
        self.state.factors_with(self.c.clone())
    }
}

/// Warm-starts with the batch solver on the first `cfg.warmup_slices`
/// slices of `y` and streams the rest, measuring NSE against `reference`.
pub fn run_stream(
    y: &Tensor3,
    reference: &Tensor3,
    warm_cfg: &BatchConfig,
    cfg: &OnlineConfig,
    prune_warm_start: bool,
) -> Result<StreamRun> {
    let kw = cfg.warmup_slices;
    let k = y.dims().2;
    if kw >= k {
        return Err(BtdError::InvalidConfig(format!("warm-up of {kw} slices leaves nothing to stream (K = {k})")));
    }
    let start = Instant::now();
    let y_warm = y.sub_slices(0, kw)?;
    let warm = btd_irls(&y_warm, warm_cfg)?;
    let fit = if prune_warm_start && !warm.ranks.degenerate { warm.pruned()? } else { warm.factors.clone() };
    let mut state = init_online(&y_warm, &fit, cfg)?;
    let warm_seconds = start.elapsed().as_secs_f64();

    let mut rows = Vec::with_capacity(k - kw);
    let mut nse_trace = Vec::with_capacity(k - kw);
    let mut r_hat = Vec::with_capacity(k - kw);
    let mut step_seconds = Vec::with_capacity(k - kw);
    for idx in kw..k {
        let out = state.step_with_reference(&y.slice(idx), &reference.slice(idx))?;
        nse_trace.push(out.metrics.nse);
        r_hat.push(out.metrics.ranks.r_hat);
        step_seconds.push(out.metrics.wall_time.as_secs_f64());
        rows.push(out.gamma);
    }
    let gammas = Array2::from_shape_fn((rows.len(), fit.blocks()), |(p, q)| rows[p][q]);
    let c = concatenate(Axis(0), &[fit.c.view(), gammas.view()]).map_err(|e| BtdError::DimensionMismatch(e.to_string()))?;
    Ok(StreamRun {
        state,
        warm,
        c,
        nse: nse_trace,
        r_hat,
        step_seconds,
        warm_seconds,
    })
}

fn score(
    solver: Solver,
    snr_db: f64,
    trial: usize,
    real: &Realization,
    cfg: &Experiment1Config,
    est: &BtdFactors,
    iterations: usize,
    converged: bool,
) -> Result<TrialRecord> {
    let truth = real.truth.single().expect("stationary plant");
    let re = relative_error(&real.noisy, &reconstruct(est))?;
    let ranks = estimate_ranks(est, cfg.rank_threshold)?;
    let (nmse, mismatch) = if ranks.degenerate {
        (1.0, true)
    } else {
        let m = nmse_blocks(truth, &prune(est, &ranks)?)?;
        (m.nmse, m.mismatch)
    };
    Ok(TrialRecord {
        solver,
        snr_db,
        trial,
        sigma: real.sigma,
        re,
        nmse,
        nmse_mismatch: mismatch,
        r_hat: ranks.r_hat,
        ranks_recovered: ranks.matches(cfg.r_true, cfg.l_true),
        l_hat: ranks.l_hat,
        iterations,
        converged,
    })
}

fn run_trial(
    cfg: &Experiment1Config,
    solver: Solver,
    snr_db: f64,
    snr_index: usize,
    trial: usize,
) -> Result<(TrialRecord, f64)> {
    let spec = GenSpec::new(cfg.dims, cfg.r_true, cfg.l_true, derive_seed(cfg.seed, trial as u64, 0));
    let noise_seed = derive_seed(cfg.seed, trial as u64, 1 + snr_index as u64);
    let init_seed = derive_seed(cfg.seed, trial as u64, 1000);
    let real = realize(&spec, snr_db, noise_seed)?;
    match solver {
        Solver::Batch => {
            let bcfg = cfg.batch_config(real.sigma, cfg.dims.2, snr_db, init_seed);
            let start = Instant::now();
            let res = btd_irls(&real.noisy, &bcfg)?;
            let secs = start.elapsed().as_secs_f64();
            Ok((score(solver, snr_db, trial, &real, cfg, &res.factors, res.iterations, res.converged)?, secs))
        }
        Solver::Online => {
            let warm_cfg = cfg.warm_config(real.sigma, snr_db, init_seed, 1.0);
            let ocfg = cfg.online_config(real.sigma, 1.0);
            let run = run_stream(&real.noisy, &real.clean, &warm_cfg, &ocfg, cfg.prune_warm_start)?;
            let est = run.factors()?;
            let rec = score(solver, snr_db, trial, &real, cfg, &est, run.warm.iterations, run.warm.converged)?;
            Ok((rec, run.total_seconds()))
        }
    }
}

/// Runs every `(SNR, trial, solver)` combination of Experiment 1.
pub fn run_experiment1(cfg: &Experiment1Config) -> Result<ExperimentReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, f64, usize, Solver)> = cfg
        .snr_db
        .iter()
        .enumerate()
        .flat_map(|(si, &snr)| (0..cfg.trials).flat_map(move |t| cfg.solvers.iter().map(move |&s| (si, snr, t, s))))
        .collect();
    let outcomes: Vec<_> = with_trial_pool(cfg.threads, || {
        jobs.par_iter()
            .map(|&(si, snr, t, s)| (si, snr, t, s, run_trial(cfg, s, snr, si, t)))
            .collect()
    })?;
    let mut trials = Vec::new();
    let mut timings = Vec::new();
    let mut failures = Vec::new();
    for (_, snr, t, s, out) in outcomes {
        match out {
            Ok((rec, seconds)) => {
                timings.push(TrialTiming { solver: s, snr_db: snr, trial: t, seconds });
                trials.push(rec);
            }
            Err(e) => failures.push(FailedTrial { solver: s, snr_db: snr, trial: t, error: e.to_string() }),
        }
    }
    let mut summary = Vec::new();
    let mut timing_summary = Vec::new();
    for &snr in &cfg.snr_db {
        for &s in &cfg.solvers {
            let cell: Vec<&TrialRecord> = trials.iter().filter(|r| r.solver == s && r.snr_db == snr).collect();
            let failed = failures.iter().filter(|f| f.solver == s && f.snr_db == snr).count();
            let n = cell.len();
            let col = |f: fn(&TrialRecord) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<_>>();
            summary.push(SummaryRow {
                solver: s,
                snr_db: snr,
                trials: n,
                failed,
                median_re: median(&col(|r| r.re)),
                median_nmse: median(&col(|r| r.nmse)),
                rank_recovery_rate: if n == 0 { f64::NAN } else { cell.iter().filter(|r| r.ranks_recovered).count() as f64 / n as f64 },
            });
            let secs: Vec<f64> = timings.iter().filter(|t| t.solver == s && t.snr_db == snr).map(|t| t.seconds).collect();
            let total_s: f64 = secs.iter().sum();
            timing_summary.push(TimingRow {
                solver: s,
                snr_db: snr,
                mean_s: if secs.is_empty() { f64::NAN } else { total_s / secs.len() as f64 },
                total_s,
            });
        }
    }
    Ok(ExperimentReport { config: cfg.clone(), trials, failures, summary, timings, timing_summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment2Config {
    pub dims: (usize, usize, usize),
    pub r_true: usize,
    pub l_true: usize,
    /// 1-based index of the first slice of the new model.
    pub change_at: usize,
    pub r_new: usize,
    pub l_new: usize,
    pub r_ini: usize,
    pub l_ini: usize,
    pub snr_db: f64,
    pub xi: f64,
    pub seeds: usize,
    pub seed: u64,
    pub warmup_slices: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub rank_threshold: f64,
    pub prune_warm_start: bool,
    pub warm_lambda_scale: Option<f64>,
    pub rule_ranks: RuleRanks,
    /// Window (steps) used for the steady-state medians.
    pub window: usize,
    /// Steps after the change by which the NSE must have recovered.
    pub recovery_horizon: usize,
    pub threads: Option<usize>,
}

impl Default for Experiment2Config {
    fn default() -> Self {
        Self {
            dims: (40, 35, 5000),
            r_true: 5,
            l_true: 4,
            change_at: 2001,
            r_new: 4,
            l_new: 2,
            r_ini: 10,
            l_ini: 10,
            snr_db: 10.0,
            xi: 0.985,
            seeds: 1,
            seed: 2024,
            warmup_slices: 50,
            max_iters: 500,
            rel_tol: 1e-5,
            rank_threshold: 1e-2,
            prune_warm_start: false,
            warm_lambda_scale: None,
            rule_ranks: RuleRanks::True,
            window: 100,
            recovery_horizon: 500,
            threads: None,
        }
    }
}

impl Experiment2Config {
    fn as_exp1(&self) -> Experiment1Config {
        Experiment1Config {
            dims: self.dims,
            r_true: self.r_true,
            l_true: self.l_true,
            r_ini: self.r_ini,
            l_ini: self.l_ini,
            snr_db: vec![self.snr_db],
            trials: self.seeds,
            seed: self.seed,
            warmup_slices: self.warmup_slices,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            rank_threshold: self.rank_threshold,
            prune_warm_start: self.prune_warm_start,
            warm_lambda_scale: self.warm_lambda_scale,
            rule_ranks: self.rule_ranks,
            solvers: vec![Solver::Online],
            threads: self.threads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.as_exp1().validate()?;
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(BtdError::InvalidConfig(format!("xi must lie in (0, 1], got {}", self.xi)));
        }
        if self.window == 0 {
            return Err(BtdError::InvalidConfig("window must be positive".into()));
        }
        let first_streamed = self.warmup_slices + 1;
        if self.change_at < first_streamed + self.window || self.change_at + self.recovery_horizon > self.dims.2 + 1 {
            return Err(BtdError::InvalidConfig(format!(
                "change at {} needs {} streamed slices before it and {} after it (K = {})",
                self.change_at, self.window, self.recovery_horizon, self.dims.2
            )));
        }
        if self.recovery_horizon < self.window {
            return Err(BtdError::InvalidConfig("recovery_horizon must be at least one window".into()));
        }
        Ok(())
    }

    pub fn gen_spec(&self, seed: u64) -> GenSpec {
        GenSpec {
            change_point: Some(ChangePoint { k_star: self.change_at, r_new: self.r_new, l_new: BlockRanks::Uniform(self.l_new) }),
            ..GenSpec::new(self.dims, self.r_true, self.l_true, seed)
        }
    }
}

/// Tracking statistics of one Experiment 2 run. Slice indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRun {
    pub seed_index: usize,
    pub sigma: f64,
    /// `(k, NSE)` for every streamed slice.
    pub nse: Vec<(usize, f64)>,
    pub r_hat: Vec<(usize, usize)>,
    pub nse_at_change: f64,
    /// Median NSE of the `window` slices just before the change.
    pub trailing_median: f64,
    /// Median NSE of the `window` slices ending `recovery_horizon` slices
    /// after the change.
    pub post_median: f64,
    /// First `k` after the change whose trailing-window median is within
    /// twice `trailing_median`, if any.
    pub recovered_at: Option<usize>,
    /// Last `k` at which recovery still counts (`change_at + recovery_horizon`).
    pub recovery_deadline: usize,
    pub r_hat_before: usize,
    pub r_hat_after: usize,
}

impl TrackingRun {
    pub fn spike(&self) -> bool {
        self.nse_at_change > self.trailing_median
    }

    /// The trailing-window median came back within twice its pre-change
    /// value by the deadline.
    pub fn recovered(&self) -> bool {
        self.recovered_at.is_some_and(|k| k <= self.recovery_deadline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment2Report {
    pub config: Experiment2Config,
    pub runs: Vec<TrackingRun>,
    pub failures: Vec<FailedTrial>,
    pub spike_rate: f64,
    pub recovery_rate: f64,
    /// Fraction of runs whose revealed `R` moved from the old to the new
    /// value across the change.
    pub rank_transition_rate: f64,
    /// Per-step wall times of each run, in run order.
    pub step_seconds: Vec<Vec<f64>>,
}

fn track_one(cfg: &Experiment2Config, s: usize) -> Result<(TrackingRun, Vec<f64>)> {
    let spec = cfg.gen_spec(derive_seed(cfg.seed, s as u64, 0));
    let real = realize(&spec, cfg.snr_db, derive_seed(cfg.seed, s as u64, 1))?;
    let exp1 = cfg.as_exp1();
    let warm_cfg = exp1.warm_config(real.sigma, cfg.snr_db, derive_seed(cfg.seed, s as u64, 1000), cfg.xi);
    let ocfg = exp1.online_config(real.sigma, cfg.xi);
    let run = run_stream(&real.noisy, &real.clean, &warm_cfg, &ocfg, cfg.prune_warm_start)?;
    let first = cfg.warmup_slices + 1;
    let pos = |k: usize| k - first;
    let w = cfg.window;
    let at = cfg.change_at;
    let trailing_median = median(&run.nse[pos(at) - w..pos(at)]);
    let horizon_end = at + cfg.recovery_horizon;
    let post_median = median(&run.nse[pos(horizon_end) - w..pos(horizon_end)]);
    let recovered_at = (at + w..=run.nse.len() + first - 1)
        .find(|&k| median(&run.nse[pos(k) + 1 - w..=pos(k)]) <= 2.0 * trailing_median);
    let mode = |v: &[usize]| {
        let mut counts = std::collections::BTreeMap::new();
        for &x in v {
            *counts.entry(x).or_insert(0usize) += 1;
        }
        counts.into_iter().max_by_key(|&(_, c)| c).map(|(x, _)| x).unwrap_or(0)
    };
    let run_stats = TrackingRun {
        seed_index: s,
        sigma: real.sigma,
        nse: run.nse.iter().enumerate().map(|(n, &v)| (first + n, v)).collect(),
        r_hat: run.r_hat.iter().enumerate().map(|(n, &v)| (first + n, v)).collect(),
        nse_at_change: run.nse[pos(at)],
        trailing_median,
        post_median,
        recovered_at,
        recovery_deadline: horizon_end,
        r_hat_before: mode(&run.r_hat[pos(at) - w..pos(at)]),
        r_hat_after: mode(&run.r_hat[run.r_hat.len() - w..]),
    };
    Ok((run_stats, run.step_seconds))
}

/// Runs Experiment 2 for `cfg.seeds` independent realizations.
pub fn run_experiment2(cfg: &Experiment2Config) -> Result<Experiment2Report> {
    cfg.validate()?;
    let outcomes: Vec<_> = with_trial_pool(cfg.threads, || (0..cfg.seeds).into_par_iter().map(|s| (s, track_one(cfg, s))).collect())?;
    let mut runs = Vec::new();
    let mut step_seconds = Vec::new();
    let mut failures = Vec::new();
    for (s, out) in outcomes {
        match out {
            Ok((r, secs)) => {
                runs.push(r);
                step_seconds.push(secs);
            }
            Err(e) => failures.push(FailedTrial { solver: Solver::Online, snr_db: cfg.snr_db, trial: s, error: e.to_string() }),
        }
    }
    let rate = |f: &dyn Fn(&TrackingRun) -> bool| {
        if runs.is_empty() {
            f64::NAN
        } else {
            runs.iter().filter(|r| f(r)).count() as f64 / runs.len() as f64
        }
    };
    Ok(Experiment2Report {
        spike_rate: rate(&|r| r.spike()),
        recovery_rate: rate(&|r| r.recovered()),
        rank_transition_rate: rate(&|r| r.r_hat_before == cfg.r_true && r.r_hat_after == cfg.r_new),
        config: cfg.clone(),
        runs,
        failures,
        step_seconds,
    })
}

/// NSE of slice `k` (0-based) of a model against the clean tensor.
pub fn slice_nse(clean: &Tensor3, model: &Tensor3, k: usize) -> Result<f64> {
    nse(&clean.slice(k), &model.slice(k))
}
