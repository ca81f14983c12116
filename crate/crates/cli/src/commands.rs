use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use btd_core::io::{load_checkpoint, save_checkpoint, save_factors, save_tensor, tensor_file_size, write_series_csv, write_trace_csv, SliceReader};
use btd_core::{btd_irls, init_online, reconstruct, BtdError, OnlineState, RankEstimate, Result, Tensor3};
use btd_harness::generate::realized_snr_db;
use btd_harness::report::{
    save_json, save_with, write_step_timing_csv, write_summary_csv, write_timing_csv, write_tracking_csv,
    write_tracking_summary_csv, write_trials_csv, Experiment1Results, Experiment2Results,
};
use btd_harness::{add_noise, generate, relative_error, run_experiment1, run_experiment2, GenSpec, NoiseSpec, Truth};
use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

/// How a command that produced its outputs ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Outputs were written but the solver stopped at its iteration cap.
    NotConverged,
    /// Outputs were written but some trials failed numerically.
    PartialFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Done => EXIT_OK,
            Outcome::NotConverged => EXIT_NOT_CONVERGED,
            Outcome::PartialFailure => EXIT_NUMERICAL,
        }
    }
}

/// Exit code for an error: bad input and unusable files are configuration
/// errors, everything else is numerical.
pub fn error_exit_code(e: &BtdError) -> i32 {
    match e {
        BtdError::InvalidConfig(_) | BtdError::Io(_) | BtdError::Format(_) | BtdError::DimensionMismatch(_) => EXIT_CONFIG,
        BtdError::NotPositiveDefinite { .. } | BtdError::NonFinite(_) | BtdError::Degenerate(_) => EXIT_NUMERICAL,
    }
}

/// Creates the output directory and records the effective configuration.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| BtdError::InvalidConfig(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    fs::write(cfg.out.join("config.json"), cfg.to_json()? + "\n")?;
    Ok(cfg.out.clone())
}

struct Data {
    y: Tensor3,
    /// Noiseless tensor (generated data) or the configured reference.
    reference: Option<Tensor3>,
    sigma: Option<f64>,
}

fn generated(cfg: &RunConfig) -> Result<(Tensor3, Truth, Option<(Tensor3, f64)>)> {
    let (x, truth) = generate(&cfg.gen_spec())?;
    let noisy = cfg.noise_spec().map(|n| add_noise(&x, &n)).transpose()?;
    Ok((x, truth, noisy))
}

fn load_or_generate(cfg: &RunConfig) -> Result<Data> {
    match &cfg.input {
        Some(path) => Ok(Data {
            y: load_input(path)?,
            reference: cfg.reference.as_deref().map(load_input).transpose()?,
            sigma: None,
        }),
        None => {
            let (x, _, noisy) = generated(cfg)?;
            Ok(match noisy {
                Some((y, sigma)) => Data { y, reference: Some(x), sigma: Some(sigma) },
                None => Data { y: x, reference: None, sigma: Some(0.0) },
            })
        }
    }
}

fn load_input(path: &Path) -> Result<Tensor3> {
    btd_core::io::load_tensor(path).map_err(|e| match e {
        BtdError::Io(io) => BtdError::InvalidConfig(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

#[derive(Serialize)]
struct GenerateMetadata<'a> {
    spec: &'a GenSpec,
    noise: Option<NoiseSpec>,
    sigma: Option<f64>,
    realized_snr_db: Option<f64>,
    dims: (usize, usize, usize),
    tensor_bytes: u64,
}

/// Writes `tensor.bin` (noisy if an SNR is set), `clean.bin` when noise was
/// added, the true factors and `metadata.json`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let out = prepare_out(cfg)?;
    let (x, truth, noisy) = generated(cfg)?;
    let (sigma, snr) = match &noisy {
        Some((y, sigma)) => {
            save_tensor(out.join("tensor.bin"), y)?;
            save_tensor(out.join("clean.bin"), &x)?;
            (Some(*sigma), Some(realized_snr_db(&x, y)?))
        }
        None => {
            save_tensor(out.join("tensor.bin"), &x)?;
            (None, None)
        }
    };
    match &truth {
        Truth::Single(f) => save_factors(out.join("truth.bin"), f)?,
        Truth::Changed { before, after, .. } => {
            save_factors(out.join("truth_before.bin"), before)?;
            save_factors(out.join("truth_after.bin"), after)?;
        }
    }
    let spec = cfg.gen_spec();
    save_json(
        out.join("metadata.json"),
        &GenerateMetadata {
            spec: &spec,
            noise: cfg.noise_spec(),
            sigma,
            realized_snr_db: snr,
            dims: x.dims(),
            tensor_bytes: tensor_file_size(x.dims()),
        },
    )?;
    println!("wrote {}x{}x{} tensor to {}", x.dims().0, x.dims().1, x.dims().2, out.display());
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct BatchSummary<'a> {
    lambda: f64,
    mu: f64,
    iterations: usize,
    converged: bool,
    final_objective: f64,
    relative_error: f64,
    ranks: &'a RankEstimate,
}

/// Runs the batch solver; writes `factors.bin`, `factors_pruned.bin`,
/// `ranks.json`, `trace.csv` and `result.json`.
pub fn cmd_batch(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let data = load_or_generate(cfg)?;
    let (i, j, k) = data.y.dims();
    let bcfg = cfg.batch_config_for(i, j, k, data.sigma, 1.0)?;
    let out = prepare_out(cfg)?;
    let start = Instant::now();
    let res = btd_irls(&data.y, &bcfg)?;
    let seconds = start.elapsed().as_secs_f64();

    save_factors(out.join("factors.bin"), &res.factors)?;
    if !res.ranks.degenerate {
        save_factors(out.join("factors_pruned.bin"), &res.pruned()?)?;
    }
    save_json(out.join("ranks.json"), &res.ranks)?;
    save_with(&out, "trace.csv", |w| write_trace_csv(w, &res.trace))?;
    let summary = BatchSummary {
        lambda: bcfg.lambda,
        mu: bcfg.mu,
        iterations: res.iterations,
        converged: res.converged,
        final_objective: *res.trace.last().unwrap_or(&f64::NAN),
        relative_error: relative_error(&data.y, &reconstruct(&res.factors))?,
        ranks: &res.ranks,
    };
    save_json(out.join("result.json"), &summary)?;
    println!(
        "R_hat = {}, L_hat = {:?}, RE = {:.4}, {} iterations{} in {:.2} s",
        res.ranks.r_hat,
        res.ranks.l_hat,
        summary.relative_error,
        res.iterations,
        if res.converged { "" } else { " (not converged)" },
        seconds
    );
    Ok(if res.converged { Outcome::Done } else { Outcome::NotConverged })
}

type Slices = Box<dyn Iterator<Item = Result<Array2<f64>>>>;

fn in_memory(t: Tensor3, from: usize) -> Slices {
    let k = t.dims().2;
    Box::new((from..k).map(move |n| Ok(t.slice(n).to_owned())))
}

fn from_file(path: &Path, from: usize) -> Result<((usize, usize, usize), Slices)> {
    let mut reader = SliceReader::open(path)
        .map_err(|e| BtdError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    reader.seek_slice(from.min(reader.dims().2))?;
    Ok((reader.dims(), Box::new(reader)))
}

fn next_slice(src: &mut Slices) -> Result<Option<Array2<f64>>> {
    src.next().transpose()
}

fn stack_slices(slices: &[Array2<f64>]) -> Result<Tensor3> {
    let Some(first) = slices.first() else {
        return Err(BtdError::InvalidConfig("warm-up needs at least one slice".into()));
    };
    let (i, j) = first.dim();
    let mut data = Vec::with_capacity(i * j * slices.len());
    for s in slices {
        data.extend(s.iter().copied());
    }
    Tensor3::from_vec((i, j, slices.len()), data)
}

#[derive(Serialize)]
struct WarmSummary {
    lambda: f64,
    mu: f64,
    iterations: usize,
    converged: bool,
    ranks: RankEstimate,
}

#[derive(Serialize)]
struct StreamSummary {
    /// 1-based index of the first streamed slice.
    first_slice: usize,
    steps: usize,
    lambda: f64,
    mu: f64,
    xi: f64,
    warm_start: Option<WarmSummary>,
    final_ranks: RankEstimate,
    state_scalars: usize,
}

/// Warm-starts (or resumes from a checkpoint) and streams the remaining
/// slices; writes `nse.csv`, `ranks.csv`, `checkpoint.bin`, `stream.json`,
/// the per-step `timing.csv` and `factors.bin` (final `A`, `B` with the `C`
/// rows produced by this run).
pub fn cmd_stream(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let (dims, mut slices, mut reference, sigma): (_, Slices, Option<Slices>, _) = match &cfg.input {
        Some(path) => {
            let (dims, s) = from_file(path, cfg.start_slice)?;
            let r = match &cfg.reference {
                Some(rp) => {
                    let (rdims, r) = from_file(rp, cfg.start_slice)?;
                    if rdims != dims {
                        return Err(BtdError::DimensionMismatch(format!("reference {rdims:?} vs input {dims:?}")));
                    }
                    Some(r)
                }
                None => None,
            };
            (dims, s, r, None)
        }
        None => {
            let data = load_or_generate(cfg)?;
            let dims = data.y.dims();
            let from = cfg.start_slice.min(dims.2);
            (dims, in_memory(data.y, from), data.reference.map(|r| in_memory(r, from)), data.sigma)
        }
    };
    let (i, j, k) = dims;
    if cfg.start_slice >= k {
        return Err(BtdError::InvalidConfig(format!("start_slice {} is beyond K = {k}", cfg.start_slice)));
    }
    let ocfg = cfg.online_config_for(i, j, sigma)?;
    let out = prepare_out(cfg)?;

    let (mut state, mut c_rows, warm_summary, first) = match &cfg.resume {
        Some(path) => {
            let state: OnlineState = load_checkpoint(path)
                .map_err(|e| BtdError::InvalidConfig(format!("cannot resume from {}: {e}", path.display())))?;
            if state.slice_dims() != (i, j) {
                return Err(BtdError::DimensionMismatch(format!("checkpoint slices {:?} vs data {:?}", state.slice_dims(), (i, j))));
            }
            let first = cfg.start_slice + cfg.warmup_slices + state.steps() as usize;
            for _ in cfg.start_slice..first.min(k) {
                next_slice(&mut slices)?;
                if let Some(r) = reference.as_mut() {
                    next_slice(r)?;
                }
            }
            (state, Vec::new(), None, first)
        }
        None => {
            let mut warm = Vec::with_capacity(cfg.warmup_slices);
            for _ in 0..cfg.warmup_slices {
                match next_slice(&mut slices)? {
                    Some(s) => warm.push(s),
                    None => {
                        return Err(BtdError::InvalidConfig(format!(
                            "{} warm-up slices requested but only {} remain after start_slice",
                            cfg.warmup_slices,
                            warm.len()
                        )))
                    }
                }
                if let Some(r) = reference.as_mut() {
                    next_slice(r)?;
                }
            }
            let y_warm = stack_slices(&warm)?;
            let wcfg = cfg.warm_config_for(i, j, k - cfg.start_slice, sigma)?;
            let res = btd_irls(&y_warm, &wcfg)?;
            if !res.converged {
                eprintln!("warning: warm start stopped after {} iterations without converging", res.iterations);
            }
            let fit = if cfg.prune_warm_start && !res.ranks.degenerate { res.pruned()? } else { res.factors.clone() };
            let state = init_online(&y_warm, &fit, &ocfg)?;
            let rows: Vec<Array1<f64>> = fit.c.rows().into_iter().map(|r| r.to_owned()).collect();
            let summary = WarmSummary {
                lambda: wcfg.lambda,
                mu: wcfg.mu,
                iterations: res.iterations,
                converged: res.converged,
                ranks: res.ranks,
            };
            (state, rows, Some(summary), cfg.start_slice + cfg.warmup_slices)
        }
    };

    let mut nse = Vec::new();
    let mut ranks = Vec::new();
    let mut seconds = Vec::new();
    while let Some(y) = next_slice(&mut slices)? {
        let step = match reference.as_mut() {
            Some(r) => {
                let x = next_slice(r)?.ok_or_else(|| BtdError::DimensionMismatch("reference ended early".into()))?;
                state.step_with_reference(&y.view(), &x.view())?
            }
            None => state.step(&y.view())?,
        };
        nse.push(step.metrics.nse);
        seconds.push(step.metrics.wall_time.as_secs_f64());
        ranks.push(step.metrics.ranks);
        c_rows.push(step.gamma);
    }

    let first_k = first + 1;
    save_with(&out, "nse.csv", |w| write_series_csv(w, "k,nse", first_k, &nse))?;
    save_with(&out, "ranks.csv", |w| {
        writeln!(w, "k,r_hat,l_hat")?;
        for (n, r) in ranks.iter().enumerate() {
            let l: Vec<String> = r.l_hat.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{}", first_k + n, r.r_hat, l.join(";"))?;
        }
        Ok(())
    })?;
    save_with(&out, "timing.csv", |w| write_series_csv(w, "k,seconds", first_k, &seconds))?;
    save_checkpoint(out.join("checkpoint.bin"), &state)?;
    if !c_rows.is_empty() {
        let c = Array2::from_shape_fn((c_rows.len(), state.layout().blocks()), |(p, q)| c_rows[p][q]);
        save_factors(out.join("factors.bin"), &state.factors_with(c)?)?;
    }
    let final_ranks = state.effective_ranks()?;
    let summary = StreamSummary {
        first_slice: first_k,
        steps: nse.len(),
        lambda: ocfg.lambda,
        mu: ocfg.mu,
        xi: ocfg.xi,
        warm_start: warm_summary,
        final_ranks,
        state_scalars: state.scalar_count(),
    };
    save_json(out.join("stream.json"), &summary)?;
    let total: f64 = seconds.iter().sum();
    println!(
        "streamed {} slices ({:.3} ms/step); final R_hat = {}, L_hat = {:?}",
        nse.len(),
        if nse.is_empty() { 0.0 } else { 1e3 * total / nse.len() as f64 },
        summary.final_ranks.r_hat,
        summary.final_ranks.l_hat
    );
    Ok(Outcome::Done)
}

/// Runs experiment `which` (1 or 2) from the nested protocol settings.
pub fn cmd_experiment(cfg: &RunConfig, which: u8) -> Result<Outcome> {
    let failed = match which {
        1 => {
            let exp = &cfg.experiment1;
            exp.validate()?;
            let out = prepare_out(cfg)?;
            let rep = run_experiment1(exp)?;
            save_json(out.join("experiment1.json"), &Experiment1Results::from(&rep))?;
            save_with(&out, "summary.csv", |w| write_summary_csv(w, &rep))?;
            save_with(&out, "trials.csv", |w| write_trials_csv(w, &rep))?;
            save_with(&out, "timing.csv", |w| write_timing_csv(w, &rep))?;
            println!("{:<8} {:>7} {:>7} {:>10} {:>12} {:>10} {:>10}", "solver", "SNR dB", "trials", "median RE", "median NMSE", "ranks ok", "mean s");
            for (s, t) in rep.summary.iter().zip(&rep.timing_summary) {
                println!(
                    "{:<8} {:>7} {:>7} {:>10.4} {:>12.3e} {:>9.0}% {:>10.2}",
                    format!("{:?}", s.solver).to_lowercase(),
                    s.snr_db,
                    s.trials,
                    s.median_re,
                    s.median_nmse,
                    100.0 * s.rank_recovery_rate,
                    t.mean_s
                );
            }
            rep.failures.len()
        }
        2 => {
            let exp = &cfg.experiment2;
            exp.validate()?;
            let out = prepare_out(cfg)?;
            let rep = run_experiment2(exp)?;
            save_json(out.join("experiment2.json"), &Experiment2Results::from(&rep))?;
            save_with(&out, "summary.csv", |w| write_tracking_summary_csv(w, &rep))?;
            for run in &rep.runs {
                save_with(&out, &format!("nse_run{}.csv", run.seed_index), |w| write_tracking_csv(w, run))?;
            }
            save_with(&out, "timing.csv", |w| write_step_timing_csv(w, &rep))?;
            println!(
                "{} runs: spike at the change in {:.0}%, recovered within {} steps in {:.0}%, R_hat {}->{} in {:.0}%",
                rep.runs.len(),
                100.0 * rep.spike_rate,
                exp.recovery_horizon,
                100.0 * rep.recovery_rate,
                exp.r_true,
                exp.r_new,
                100.0 * rep.rank_transition_rate
            );
            rep.failures.len()
        }
        other => return Err(BtdError::InvalidConfig(format!("unknown experiment {other}; expected 1 or 2"))),
    };
    if failed > 0 {
        eprintln!("{failed} trial(s) failed; see the failures list in the JSON report");
        return Ok(Outcome::PartialFailure);
    }
    Ok(Outcome::Done)
}
