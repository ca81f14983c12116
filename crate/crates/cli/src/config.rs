//! The run configuration shared by every subcommand.
//!
//! One flat JSON object covers data generation, noise, both solvers and the
//! output location; the two experiment protocols are nested objects. Every
//! key is optional (defaults reproduce the first synthetic experiment's plant
//! at 10 dB) and unknown keys are rejected.

use std::path::{Path, PathBuf};

use btd_core::batch::DEFAULT_ETA2;
use btd_core::{BatchConfig, BtdError, OnlineConfig, Result};
use btd_harness::experiment::{derive_seed, warm_lambda_scale, RuleRanks};
use btd_harness::params::{batch_lambda, batch_mu, online_lambda_mu};
use btd_harness::{BlockRanks, ChangePoint, Experiment1Config, Experiment2Config, GenSpec, NoiseSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // Synthetic plant.
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub r: usize,
    pub l: BlockRanks,
    pub change_point: Option<ChangePoint>,
    /// Target SNR of the additive noise; `null` generates noiseless data.
    pub snr_db: Option<f64>,
    pub seed: u64,

    // Files.
    /// Tensor to decompose instead of generating one.
    pub input: Option<PathBuf>,
    /// Tensor the streaming NSE is measured against (defaults to the clean
    /// tensor when data is generated, else to the input itself).
    pub reference: Option<PathBuf>,
    pub out: PathBuf,

    // Solvers.
    pub r_ini: usize,
    pub l_ini: usize,
    /// Explicit regularization weights; when absent they follow the noise
    /// level rules, which need `sigma` (known for generated data).
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub rule_ranks: RuleRanks,
    pub eta2: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub rank_threshold: f64,
    pub prune_in_loop: bool,

    // Streaming.
    pub xi: f64,
    pub warmup_slices: usize,
    /// First slice of the warm-up window; a later value re-initializes the
    /// stream from the batch solver at that point.
    pub start_slice: usize,
    pub history_len: usize,
    pub warm_lambda_scale: Option<f64>,
    pub prune_warm_start: bool,
    /// Continue from a checkpoint instead of warm-starting.
    pub resume: Option<PathBuf>,

    // Experiment protocols.
    pub experiment1: Experiment1Config,
    pub experiment2: Experiment2Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            i: 40,
            j: 35,
            k: 1250,
            r: 5,
            l: BlockRanks::Uniform(4),
            change_point: None,
            snr_db: Some(10.0),
            seed: 0,
            input: None,
            reference: None,
            out: PathBuf::from("btd-out"),
            r_ini: 10,
            l_ini: 10,
            lambda: None,
            mu: None,
            sigma: None,
            rule_ranks: RuleRanks::Initial,
            eta2: DEFAULT_ETA2,
            max_iters: 500,
            rel_tol: 1e-5,
            rank_threshold: 1e-2,
            prune_in_loop: false,
            xi: 1.0,
            warmup_slices: 50,
            start_slice: 0,
            history_len: 0,
            warm_lambda_scale: None,
            prune_warm_start: false,
            resume: None,
            experiment1: Experiment1Config::default(),
            experiment2: Experiment2Config::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub snr_db: Option<f64>,
    pub xi: Option<f64>,
    pub quick: bool,
}

fn invalid(msg: impl Into<String>) -> BtdError {
    BtdError::InvalidConfig(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies command-line overrides; `--seed`, `--trials`, `--snr-db` and
    /// `--xi` also reach the experiment protocols.
    pub fn apply(&mut self, o: &Overrides) {
        if o.quick {
            self.experiment1.trials = Experiment1Config::quick().trials;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
            self.experiment1.seed = seed;
            self.experiment2.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(t) = o.trials {
            self.experiment1.trials = t;
            self.experiment2.seeds = t;
        }
        if let Some(snr) = o.snr_db {
            self.snr_db = Some(snr);
            self.experiment1.snr_db = vec![snr];
            self.experiment2.snr_db = snr;
        }
        if let Some(xi) = o.xi {
            self.xi = xi;
            self.experiment2.xi = xi;
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            i: self.i,
            j: self.j,
            k: self.k,
            r: self.r,
            l: self.l.clone(),
            seed: self.seed,
            change_point: self.change_point.clone(),
        }
    }

    /// Noise for generated data, on a stream derived from the seed.
    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        self.snr_db.map(|snr_db| NoiseSpec { snr_db, seed: derive_seed(self.seed, 0, 1) })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_none() {
            self.gen_spec().validate()?;
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(invalid(format!("snr_db must be finite, got {snr}")));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid(format!("{name} must be a finite nonnegative number, got {v}")));
                }
            }
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(format!("sigma must be a finite nonnegative number, got {s}")));
            }
        }
        if let Some(s) = self.warm_lambda_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(format!("warm_lambda_scale must be a finite nonnegative number, got {s}")));
            }
        }
        if self.out.as_os_str().is_empty() {
            return Err(invalid("out must be a directory path"));
        }
        self.batch_config_for(self.i, self.j, self.k, Some(0.0), 1.0)?.validate()?;
        self.online_config_for(self.i, self.j, Some(0.0))?.validate()
    }

    fn rule_ranks_lr(&self) -> (usize, usize) {
        match self.rule_ranks {
            RuleRanks::Initial => (self.l_ini, self.r_ini),
            RuleRanks::True => (self.l.layout(self.r).ok().and_then(|l| l.widths().iter().copied().max()).unwrap_or(self.l_ini), self.r),
        }
    }

    /// Noise level for the weight rules: explicit `sigma`, else the one of
    /// the generated data.
    fn rule_sigma(&self, generated: Option<f64>) -> Option<f64> {
        self.sigma.or(generated)
    }

    /// Batch settings for an `i x j x k` tensor; `generated_sigma` is the
    /// noise level of data produced by this run, if any.
    pub fn batch_config_for(
        &self,
        i: usize,
        j: usize,
        k: usize,
        generated_sigma: Option<f64>,
        lambda_scale: f64,
    ) -> Result<BatchConfig> {
        let (l, r) = self.rule_ranks_lr();
        let sigma = self.rule_sigma(generated_sigma);
        let need = |name: &str| invalid(format!("{name} is not set and there is no sigma to derive it from"));
        let lambda = match self.lambda {
            Some(v) => v,
            None => batch_lambda(sigma.ok_or_else(|| need("lambda"))?, i, j, l) * lambda_scale,
        };
        let mu = match self.mu {
            Some(v) => v,
            None => batch_mu(sigma.ok_or_else(|| need("mu"))?, k, r, self.snr_db.unwrap_or(f64::INFINITY)),
        };
        let mut cfg = BatchConfig::new(lambda, mu, self.r_ini, self.l_ini);
        cfg.eta2 = self.eta2;
        cfg.max_iters = self.max_iters;
        cfg.rel_tol = self.rel_tol;
        cfg.seed = derive_seed(self.seed, 0, 1000);
        cfg.rank_threshold = self.rank_threshold;
        cfg.prune_in_loop = self.prune_in_loop;
        Ok(cfg)
    }

    /// Batch settings for the streaming warm start on `warmup_slices` of a
    /// `k`-slice stream.
    pub fn warm_config_for(&self, i: usize, j: usize, k: usize, generated_sigma: Option<f64>) -> Result<BatchConfig> {
        let scale = self
            .warm_lambda_scale
            .unwrap_or_else(|| warm_lambda_scale(self.warmup_slices, k, self.xi));
        self.batch_config_for(i, j, self.warmup_slices, generated_sigma, scale)
    }

    pub fn online_config_for(&self, i: usize, j: usize, generated_sigma: Option<f64>) -> Result<OnlineConfig> {
        let sigma = self.rule_sigma(generated_sigma);
        let rule = || {
            sigma
                .map(|s| online_lambda_mu(s, i, j, self.rule_ranks_lr().0))
                .ok_or_else(|| invalid("lambda/mu are not set and there is no sigma to derive them from"))
        };
        let lambda = match self.lambda {
            Some(v) => v,
            None => rule()?,
        };
        let mu = match self.mu {
            Some(v) => v,
            None => rule()?,
        };
        let mut cfg = OnlineConfig::new(self.xi, lambda, mu, self.r_ini, self.l_ini);
        cfg.eta2 = self.eta2;
        cfg.warmup_slices = self.warmup_slices;
        cfg.rank_threshold = self.rank_threshold;
        cfg.history_len = self.history_len;
        Ok(cfg)
    }
}
