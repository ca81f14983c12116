//! JSON and CSV renderings of experiment results.
//!
//! Results and wall-clock timings are written to separate files: everything
//! except the timing files is a pure function of the configuration, so a
//! fixed seed reproduces it byte for byte. Floats use Rust's shortest
//! round-trip formatting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use btd_core::{BtdError, Result};
use serde::Serialize;

use crate::experiment::{
    Experiment1Config, Experiment2Config, Experiment2Report, ExperimentReport, FailedTrial, Solver, SummaryRow,
    TrackingRun, TrialRecord,
};

fn solver_name(s: Solver) -> &'static str {
    match s {
        Solver::Batch => "batch",
        Solver::Online => "online",
    }
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| BtdError::Format(format!("JSON encoding: {e}")))?;
    writeln!(w)?;
    Ok(())
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_json(&mut w, value)?;
    w.flush()?;
    Ok(())
}

/// Reproducible part of an Experiment 1 report.
#[derive(Debug, Serialize)]
pub struct Experiment1Results<'a> {
    pub config: &'a Experiment1Config,
    pub summary: &'a [SummaryRow],
    pub trials: &'a [TrialRecord],
    pub failures: &'a [FailedTrial],
}

impl<'a> From<&'a ExperimentReport> for Experiment1Results<'a> {
    fn from(r: &'a ExperimentReport) -> Self {
        Self { config: &r.config, summary: &r.summary, trials: &r.trials, failures: &r.failures }
    }
}

/// Reproducible part of an Experiment 2 report (per-slice traces go to CSV).
#[derive(Debug, Serialize)]
pub struct Experiment2Results<'a> {
    pub config: &'a Experiment2Config,
    pub spike_rate: f64,
    pub recovery_rate: f64,
    pub rank_transition_rate: f64,
    pub runs: Vec<TrackingSummary>,
    pub failures: &'a [FailedTrial],
}

#[derive(Debug, Serialize)]
pub struct TrackingSummary {
    pub seed_index: usize,
    pub sigma: f64,
    pub nse_at_change: f64,
    pub trailing_median: f64,
    pub post_median: f64,
    pub recovered_at: Option<usize>,
    pub recovery_deadline: usize,
    pub r_hat_before: usize,
    pub r_hat_after: usize,
    pub spike: bool,
    pub recovered: bool,
}

impl<'a> From<&'a Experiment2Report> for Experiment2Results<'a> {
    fn from(r: &'a Experiment2Report) -> Self {
        Self {
            config: &r.config,
            spike_rate: r.spike_rate,
            recovery_rate: r.recovery_rate,
            rank_transition_rate: r.rank_transition_rate,
            runs: r
                .runs
                .iter()
                .map(|t| TrackingSummary {
                    seed_index: t.seed_index,
                    sigma: t.sigma,
                    nse_at_change: t.nse_at_change,
                    trailing_median: t.trailing_median,
                    post_median: t.post_median,
                    recovered_at: t.recovered_at,
                    recovery_deadline: t.recovery_deadline,
                    r_hat_before: t.r_hat_before,
                    r_hat_after: t.r_hat_after,
                    spike: t.spike(),
                    recovered: t.recovered(),
                })
                .collect(),
            failures: &r.failures,
        }
    }
}

/// One row per completed trial; block ranks are `;`-separated.
pub fn write_trials_csv<W: Write>(w: &mut W, report: &ExperimentReport) -> Result<()> {
    writeln!(w, "solver,snr_db,trial,sigma,re,nmse,nmse_mismatch,r_hat,l_hat,ranks_recovered,iterations,converged")?;
    for r in &report.trials {
        let l_hat: Vec<String> = r.l_hat.iter().map(|l| l.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            solver_name(r.solver),
            r.snr_db,
            r.trial,
            r.sigma,
            r.re,
            r.nmse,
            r.nmse_mismatch,
            r.r_hat,
            l_hat.join(";"),
            r.ranks_recovered,
            r.iterations,
            r.converged
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: &mut W, report: &ExperimentReport) -> Result<()> {
    writeln!(w, "solver,snr_db,trials,failed,median_re,median_nmse,rank_recovery_rate")?;
    for s in &report.summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            solver_name(s.solver),
            s.snr_db,
            s.trials,
            s.failed,
            s.median_re,
            s.median_nmse,
            s.rank_recovery_rate
        )?;
    }
    Ok(())
}

/// Per-slice trace of one tracking run: `k,nse,r_hat`.
pub fn write_tracking_csv<W: Write>(w: &mut W, run: &TrackingRun) -> Result<()> {
    if run.nse.len() != run.r_hat.len() {
        return Err(BtdError::DimensionMismatch(format!(
            "{} NSE values vs {} rank values",
            run.nse.len(),
            run.r_hat.len()
        )));
    }
    writeln!(w, "k,nse,r_hat")?;
    for (&(k, v), &(_, r)) in run.nse.iter().zip(&run.r_hat) {
        writeln!(w, "{k},{v},{r}")?;
    }
    Ok(())
}

/// One row of headline statistics per tracking run.
pub fn write_tracking_summary_csv<W: Write>(w: &mut W, report: &Experiment2Report) -> Result<()> {
    writeln!(w, "seed_index,sigma,nse_at_change,trailing_median,post_median,recovered_at,recovery_deadline,r_hat_before,r_hat_after")?;
    for r in &report.runs {
        let recovered = r.recovered_at.map(|k| k.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.seed_index,
            r.sigma,
            r.nse_at_change,
            r.trailing_median,
            r.post_median,
            recovered,
            r.recovery_deadline,
            r.r_hat_before,
            r.r_hat_after
        )?;
    }
    Ok(())
}

/// Per-trial wall times: `solver,snr_db,trial,seconds`.
pub fn write_timing_csv<W: Write>(w: &mut W, report: &ExperimentReport) -> Result<()> {
    writeln!(w, "solver,snr_db,trial,seconds")?;
    for t in &report.timings {
        writeln!(w, "{},{},{},{}", solver_name(t.solver), t.snr_db, t.trial, t.seconds)?;
    }
    Ok(())
}

/// Per-step wall times of every tracking run: `run,step,seconds`.
pub fn write_step_timing_csv<W: Write>(w: &mut W, report: &Experiment2Report) -> Result<()> {
    writeln!(w, "run,step,seconds")?;
    for (run, secs) in report.step_seconds.iter().enumerate() {
        for (n, s) in secs.iter().enumerate() {
            writeln!(w, "{run},{n},{s}")?;
        }
    }
    Ok(())
}

/// Writes `name` inside `dir` through `f`.
pub fn save_with(dir: impl AsRef<Path>, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.as_ref().join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
