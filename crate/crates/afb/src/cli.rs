//! Experiment harness behind the `afb` binary: run the algorithm variants of
//! an experiment config, print the convergence-theory constants, and validate
//! persisted traces.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::block::BlockVector;
use crate::config::{Algorithm, BuiltProblem, ExperimentConfig};
use crate::engines::{run_sync_fbs, RunResult, SyncParams, Termination};
use crate::error::{Error, Result};
use crate::protocol::{
    check_coordinate_replay, check_decomposition, run_async, verify_delay_bounds, AsyncRun, Trace,
    TraceConfig, TraceEventKind, UpdateRule,
};
use crate::scheduler::{measure_tau, DurationSampler};
use crate::theory::{check_iss, TheoryConstants, TheoryInputs};

#[derive(Parser)]
#[command(name = "afb", version, about = "Inertial asynchronous forward-backward solver and simulation harness")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm variants and persist traces, distance
    /// curves and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Force an unthinned iterate history regardless of run length.
        #[arg(long)]
        dense_trace: bool,
    },
    /// Print the convergence-theory constants for the configured instance.
    Theory {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Re-derive every number from a persisted trace and check the error
    /// decomposition, the delay bounds and the ISS envelope.
    Validate {
        /// Directory holding trace.csv and iterates.bin; its name selects the
        /// algorithm unless --algorithm is given.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed (must match the seed of the run that
        /// produced the trace).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        algorithm: Option<String>,
    },
}

pub fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, seed, dense_trace } => cmd_run_path(&config, out.as_deref(), seed, dense_trace),
        Command::Theory { config, seed, json } => cmd_theory_path(&config, seed, json),
        Command::Validate { trace, config, seed, algorithm } => {
            cmd_validate_path(&trace, &config, seed, algorithm.as_deref())
        }
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn cmd_run_path(config: &Path, out: Option<&Path>, seed: Option<u64>, dense: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let summary = cmd_run(&cfg, &out_dir, dense)?;
    println!("{}", summary_table(&summary));
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmSummary {
    pub name: String,
    pub final_relative_distance: f64,
    pub final_distance: f64,
    pub final_residual: f64,
    pub iterations: usize,
    pub sim_time_end: f64,
    pub updates_per_agent: Vec<usize>,
    pub tau_obs: Option<usize>,
    pub guard_interventions: usize,
    /// Whether the configured relaxation sits inside the guaranteed bound;
    /// `None` when the theory constants are not computable.
    pub guaranteed: Option<bool>,
    pub terminated_by: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub sim_time_budget_s: f64,
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
    pub reference_norm: f64,
    pub algorithms: Vec<AlgorithmSummary>,
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Tolerance => "tolerance",
        Termination::MaxIters => "max_iters",
        Termination::Budget => "budget",
    }
}

/// Runs every configured algorithm to the simulated budget, writing per-run
/// artifacts under `out_dir/<algorithm>/` and a combined `summary.json`.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, dense: bool) -> Result<Summary> {
    let built = cfg.build()?;
    fs::create_dir_all(out_dir)?;
    if let Some(problem) = &built.dispatch {
        fs::write(out_dir.join("problem.json"), problem.to_json()?)?;
    }
    let reference_norm = built.reference.norm();
    let mut algorithms = Vec::new();
    for algo in &cfg.algorithms {
        let algo_dir = out_dir.join(algo.name());
        fs::create_dir_all(&algo_dir)?;
        let summary = match algo {
            Algorithm::Sync => run_sync_variant(cfg, &built, &algo_dir)?,
            Algorithm::AsyncCoordinate => run_async_variant(cfg, &built, &algo_dir, *algo, dense)?,
            Algorithm::AsyncAggregated => run_async_variant(cfg, &built, &algo_dir, *algo, dense)?,
            Algorithm::AsyncInertial => run_async_variant(cfg, &built, &algo_dir, *algo, dense)?,
        };
        algorithms.push(summary);
    }
    let summary = Summary {
        seed: cfg.seed,
        sim_time_budget_s: cfg.sim_time_budget_s,
        gamma: built.gamma,
        eta: cfg.params.eta,
        beta: cfg.params.beta,
        reference_norm,
        algorithms,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    fs::write(out_dir.join("summary.json"), json)?;
    Ok(summary)
}

fn sync_params_for(cfg: &ExperimentConfig, built: &BuiltProblem, beta: f64) -> SyncParams {
    let mut params = SyncParams::for_pair(&built.pair, built.x0.clone());
    params.eta = cfg.params.eta;
    params.beta = beta;
    params.max_iters = cfg.params.max_iters;
    params.stop_tol = cfg.params.stop_tol;
    params
}

/// Synchronous forward-backward under the simulated clock: every epoch costs
/// the slowest agent's compute plus round-trip latency.
fn run_sync_variant(cfg: &ExperimentConfig, built: &BuiltProblem, dir: &Path) -> Result<AlgorithmSummary> {
    let schedule = cfg.schedule_config(built.profiles.clone());
    let mut sampler = DurationSampler::new(&schedule)?;
    let n = schedule.num_agents();
    let mut times = vec![0.0f64];
    let mut t = 0.0;
    while times.len() <= cfg.params.max_iters {
        let epoch: f64 = (0..n)
            .map(|i| sampler.next_duration(i))
            .fold(0.0, f64::max)
            + 2.0 * schedule.latency_s
            + schedule.coordinator_service_s;
        t += epoch;
        if t > cfg.sim_time_budget_s {
            break;
        }
        times.push(t);
    }
    let budget_iters = times.len() - 1;

    let mut params = sync_params_for(cfg, built, 0.0);
    params.max_iters = budget_iters;
    let run = run_sync_fbs(&built.pair, &params, Some(&built.reference))?;
    write_distances(dir, &run, |k| times.get(k).copied().unwrap_or(t))?;

    let terminated = if run.terminated_by == Termination::MaxIters {
        Termination::Budget
    } else {
        run.terminated_by
    };
    Ok(AlgorithmSummary {
        name: "sync".into(),
        final_relative_distance: run.final_iterate().distance(&built.reference) / built.reference.norm(),
        final_distance: run.final_iterate().distance(&built.reference),
        final_residual: run.final_residual(),
        iterations: run.iterations,
        sim_time_end: times.last().copied().unwrap_or(0.0),
        updates_per_agent: vec![run.iterations; n],
        tau_obs: None,
        guard_interventions: 0,
        guaranteed: guaranteed_flag(cfg, built, cfg.schedule.tau_epochs),
        terminated_by: termination_name(terminated).into(),
    })
}

fn rule_for(algo: Algorithm) -> UpdateRule {
    match algo {
        Algorithm::AsyncCoordinate => UpdateRule::Coordinate,
        _ => UpdateRule::Aggregated,
    }
}

fn beta_for(cfg: &ExperimentConfig, algo: Algorithm) -> f64 {
    match algo {
        Algorithm::AsyncInertial => cfg.params.beta,
        _ => 0.0,
    }
}

fn run_async_variant(
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
    dir: &Path,
    algo: Algorithm,
    dense: bool,
) -> Result<AlgorithmSummary> {
    let params = sync_params_for(cfg, built, beta_for(cfg, algo));
    let schedule = cfg.schedule_config(built.profiles.clone());
    let mut run_cfg = AsyncRun::new(params, schedule, rule_for(algo)).with_budget(cfg.sim_time_budget_s);
    run_cfg.dense_history = dense;
    let (run, trace) = run_async(&built.pair, &run_cfg)?;
    trace.save(dir)?;

    let compute_times: Vec<f64> = trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceEventKind::CoordinatorCompute)
        .map(|e| e.sim_time)
        .collect();
    write_distances_async(dir, &run, &built.reference, &compute_times)?;

    let tau = measure_tau(&trace);
    let mut updates = vec![0usize; trace.num_agents()];
    let mut forced = 0usize;
    for ev in trace.events() {
        if ev.kind == TraceEventKind::CoordinatorCompute {
            updates[ev.agent] += 1;
            if ev.forced {
                forced += 1;
            }
        }
    }
    let sim_time_end = trace.events().last().map_or(0.0, |e| e.sim_time);
    Ok(AlgorithmSummary {
        name: algo.name().into(),
        final_relative_distance: run.final_iterate().distance(&built.reference) / built.reference.norm(),
        final_distance: run.final_iterate().distance(&built.reference),
        final_residual: run.final_residual(),
        iterations: run.iterations,
        sim_time_end,
        updates_per_agent: updates,
        tau_obs: tau.tau_obs,
        guard_interventions: forced,
        guaranteed: tau.tau_obs.and_then(|t| guaranteed_flag(cfg, built, t)),
        terminated_by: termination_name(run.terminated_by).into(),
    })
}

fn guaranteed_flag(cfg: &ExperimentConfig, built: &BuiltProblem, tau: usize) -> Option<bool> {
    let beta = if cfg.algorithms.contains(&Algorithm::AsyncInertial) { cfg.params.beta.max(1e-6) } else { 1e-6 };
    let inputs =
        TheoryInputs::with_defaults(built.pair.num_blocks(), tau.max(1), built.gamma, built.l, built.mu, beta)
            .ok()?;
    let table = TheoryConstants::compute(inputs).ok()?;
    Some(table.guarantees(cfg.params.eta))
}

/// `distances.csv` columns: sim_time, k, dist, residual (17 significant
/// digits).
fn write_distances(dir: &Path, run: &RunResult, time_of: impl Fn(usize) -> f64) -> Result<()> {
    let mut f = fs::File::create(dir.join("distances.csv"))?;
    writeln!(f, "sim_time,k,dist,residual")?;
    let dists = run
        .distances
        .as_ref()
        .ok_or_else(|| Error::Precondition("run carries no distances".into()))?;
    for (idx, (k, _)) in run.iterates.iter().enumerate() {
        writeln!(f, "{:.16e},{},{:.16e},{:.16e}", time_of(*k), k, dists[idx], run.residuals[idx])?;
    }
    Ok(())
}

fn write_distances_async(
    dir: &Path,
    run: &RunResult,
    reference: &BlockVector,
    compute_times: &[f64],
) -> Result<()> {
    let mut f = fs::File::create(dir.join("distances.csv"))?;
    writeln!(f, "sim_time,k,dist,residual")?;
    for (idx, (k, x)) in run.iterates.iter().enumerate() {
        let t = if *k == 0 { 0.0 } else { compute_times[*k - 1] };
        writeln!(f, "{:.16e},{},{:.16e},{:.16e}", t, k, x.distance(reference), run.residuals[idx])?;
    }
    Ok(())
}

fn summary_table(summary: &Summary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "seed {} | budget {:.1}s | gamma {:.3e} | eta {} | beta {}\n",
        summary.seed, summary.sim_time_budget_s, summary.gamma, summary.eta, summary.beta
    ));
    out.push_str("algorithm          rel_dist      residual     iters  tau_obs  guaranteed\n");
    for a in &summary.algorithms {
        out.push_str(&format!(
            "{:<18} {:<12.4e}  {:<12.4e} {:>6}  {:>7}  {}\n",
            a.name,
            a.final_relative_distance,
            a.final_residual,
            a.iterations,
            a.tau_obs.map_or("-".to_string(), |t| t.to_string()),
            a.guaranteed.map_or("n/a".to_string(), |g| if g { "yes".into() } else { "no (unguaranteed)".into() }),
        ));
    }
    out
}

fn cmd_theory_path(config: &Path, seed: Option<u64>, json: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = cmd_theory(&cfg)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| Error::Config(format!("theory serialization: {e}")))?
        );
    } else {
        println!("{}", theory_table(&report, cfg.params.eta));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub l: f64,
    pub mu: f64,
    pub gamma: f64,
    pub tau_epochs: usize,
    pub constants: Option<TheoryConstants>,
    pub configured_eta: f64,
    pub configured_eta_guaranteed: Option<bool>,
    pub note: String,
}

/// Computes the constants table for the configured instance.
pub fn cmd_theory(cfg: &ExperimentConfig) -> Result<TheoryReport> {
    let built = cfg.build()?;
    let beta = cfg.params.beta.max(1e-6);
    let tau = cfg.schedule.tau_epochs;
    let (constants, note) = match TheoryInputs::with_defaults(
        built.pair.num_blocks(),
        tau,
        built.gamma,
        built.l,
        built.mu,
        beta,
    )
    .and_then(TheoryConstants::compute)
    {
        Ok(t) => (Some(t), String::new()),
        Err(e) => (None, format!("no linear-rate guarantee available: {e}")),
    };
    let guaranteed = constants.as_ref().map(|t| t.guarantees(cfg.params.eta));
    Ok(TheoryReport {
        l: built.l,
        mu: built.mu,
        gamma: built.gamma,
        tau_epochs: tau,
        constants,
        configured_eta: cfg.params.eta,
        configured_eta_guaranteed: guaranteed,
        note,
    })
}

fn theory_table(report: &TheoryReport, eta: f64) -> String {
    let mut out = String::new();
    out.push_str("convergence constants\n");
    out.push_str(&format!("  L        {:.6e}\n", report.l));
    out.push_str(&format!("  mu       {:.6e}\n", report.mu));
    out.push_str(&format!("  gamma    {:.6e}\n", report.gamma));
    out.push_str(&format!("  tau      {}\n", report.tau_epochs));
    match &report.constants {
        Some(t) => {
            out.push_str(&format!("  nu       {:.6e}\n", t.nu));
            out.push_str(&format!("  Y        {:.6e}\n", t.y));
            out.push_str(&format!("  X        {:.6e}\n", t.x));
            out.push_str(&format!("  eta_max  {:.6e}\n", t.eta_max));
            out.push_str(&format!("  rate     {:.12}\n", t.rate_at_eta_max));
            out.push_str(&format!("  r(eta)   {:.12}\n", t.r(eta)));
            out.push_str(&format!("  q(eta)   {:.6e}\n", t.q(eta)));
            let status = if t.guarantees(eta) { "guaranteed" } else { "unguaranteed" };
            out.push_str(&format!("  configured eta {} -> {status}\n", eta));
        }
        None => out.push_str(&format!("  {}\n", report.note)),
    }
    out
}

fn cmd_validate_path(trace_dir: &Path, config: &Path, seed: Option<u64>, algorithm: Option<&str>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let algo = match algorithm {
        Some(name) => Algorithm::from_name(name)?,
        None => {
            let name = trace_dir
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config("cannot infer algorithm from trace path".into()))?;
            Algorithm::from_name(name)?
        }
    };
    let report = cmd_validate(&cfg, trace_dir, algo)?;
    println!("{report}");
    if report.contains("FAIL") {
        return Err(Error::Precondition("trace validation failed".into()));
    }
    Ok(())
}

/// Replays a persisted trace: the error-decomposition identity at every
/// epoch, the delay bounds against the observed tau, and (when the
/// configured relaxation carries a guarantee) the ISS envelope on squared
/// distances.
pub fn cmd_validate(cfg: &ExperimentConfig, trace_dir: &Path, algo: Algorithm) -> Result<String> {
    if algo == Algorithm::Sync {
        return Err(Error::Config("the sync variant produces no event trace; validate an async run".into()));
    }
    let built = cfg.build()?;
    let trace_config = TraceConfig {
        eta: cfg.params.eta,
        beta: beta_for(cfg, algo),
        gamma: built.gamma,
        dims: built.pair.partition().dims().to_vec(),
        rule: rule_for(algo),
    };
    let trace = Trace::load(trace_dir, trace_config)?;
    let mut out = String::new();

    let decomposition = match rule_for(algo) {
        UpdateRule::Aggregated => check_decomposition(&trace, &built.pair)?,
        UpdateRule::Coordinate => check_coordinate_replay(&trace, &built.pair)?,
    };
    out.push_str(&format!(
        "decomposition identity: {} (worst relative residual {:.3e} over {} epochs)\n",
        if decomposition.identity_ok { "PASS" } else { "FAIL" },
        decomposition.worst_relative_residual,
        decomposition.checked,
    ));
    if decomposition.bound_checked > 0 {
        out.push_str(&format!(
            "recursive error bound:  {} ({} complete epochs)\n",
            if decomposition.recursive_bound_ok { "PASS" } else { "FAIL" },
            decomposition.bound_checked,
        ));
    }

    let tau = measure_tau(&trace);
    match tau.tau_obs {
        Some(tau_obs) => {
            let delays = verify_delay_bounds(&trace, Some(tau_obs))?;
            out.push_str(&format!(
                "delay bounds (tau_obs={}): {} (read<={}, write<={}, prev<={})\n",
                tau_obs,
                if delays.pass { "PASS" } else { "FAIL" },
                delays.max_read,
                delays.max_write,
                delays.max_write_prev,
            ));
        }
        None => out.push_str("delay bounds: SKIP (some agent consumed fewer than twice)\n"),
    }

    // ISS envelope on squared distances, when the guarantee applies
    let beta_th = trace_config_beta_for_theory(cfg, algo);
    let iss_line = (|| -> Result<String> {
        let tau_obs = tau.tau_obs.ok_or_else(|| Error::Precondition("tau unavailable".into()))?;
        let inputs = TheoryInputs::with_defaults(
            built.pair.num_blocks(),
            tau_obs,
            built.gamma,
            built.l,
            built.mu,
            beta_th,
        )?;
        let table = TheoryConstants::compute(inputs)?;
        if !table.guarantees(cfg.params.eta) {
            return Ok(format!(
                "iss envelope: SKIP (eta {} unguaranteed; eta_max {:.3e})\n",
                cfg.params.eta, table.eta_max
            ));
        }
        // the recursion's delay structure exists once every agent has a
        // consumed write and every referenced window lies past that point
        let mut firsts = vec![None; trace.num_agents()];
        for ev in trace.events() {
            if ev.kind == TraceEventKind::CoordinatorCompute && firsts[ev.agent].is_none() {
                firsts[ev.agent] = Some(ev.k);
            }
        }
        let first_full = firsts
            .iter()
            .map(|f| f.map(|k| k + 1))
            .collect::<Option<Vec<_>>>()
            .and_then(|v| v.into_iter().max())
            .ok_or_else(|| Error::Precondition("some agent never consumed".into()))?;
        let start = (first_full + 6 * tau_obs).min(trace.final_k());
        let v: Vec<f64> = trace.iterates()[start..]
            .iter()
            .map(|x| {
                let d = x.distance(&built.reference);
                d * d
            })
            .collect();
        let r = table.r(cfg.params.eta);
        let q = table.q(cfg.params.eta);
        let rep = check_iss(&v, r, q, 6 * tau_obs)?;
        Ok(format!(
            "iss envelope: {} from epoch {start} (s = {:.12}, recursion fraction {:.3})\n",
            if rep.envelope_ok { "PASS" } else { "FAIL" },
            rep.s,
            rep.recursion_fraction,
        ))
    })();
    match iss_line {
        Ok(line) => out.push_str(&line),
        Err(e) => out.push_str(&format!("iss envelope: SKIP ({e})\n")),
    }
    Ok(out)
}

fn trace_config_beta_for_theory(cfg: &ExperimentConfig, algo: Algorithm) -> f64 {
    beta_for(cfg, algo).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_cfg(dir: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
            "seed": 5,
            "output_dir": "{dir}",
            "sim_time_budget_s": 3.0,
            "problem": {{"kind": "quadratic_box", "block_dims": [2, 2, 2],
                        "curvatures": [1.0, 1.3, 2.0, 2.7, 3.3, 4.0],
                        "linear": [0.5, -4.0, 1.0, -1.5, 2.0, -9.0],
                        "box_lo": -1.0, "box_hi": 1.0}},
            "algorithms": ["sync", "async_coordinate", "async_aggregated", "async_inertial"],
            "params": {{"gamma": null, "eta": 0.9, "beta": 0.5, "stop_tol": 1e-12, "max_iters": 4000}},
            "schedule": {{"tau_epochs": 24}}
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn cmd_run_produces_artifacts_and_validate_passes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = quadratic_cfg(tmp.path().to_str().unwrap());
        let summary = cmd_run(&cfg, tmp.path(), true).unwrap();
        assert_eq!(summary.algorithms.len(), 4);
        assert!(tmp.path().join("summary.json").exists());
        for algo in ["sync", "async_coordinate", "async_aggregated", "async_inertial"] {
            assert!(tmp.path().join(algo).join("distances.csv").exists());
        }
        for algo in [Algorithm::AsyncCoordinate, Algorithm::AsyncAggregated, Algorithm::AsyncInertial] {
            let report = cmd_validate(&cfg, &tmp.path().join(algo.name()), algo).unwrap();
            assert!(!report.contains("FAIL"), "{algo:?}: {report}");
        }
    }

    #[test]
    fn rerun_with_same_seed_is_byte_identical() {
        let tmp_a = tempfile::tempdir().unwrap();
        let tmp_b = tempfile::tempdir().unwrap();
        let cfg = quadratic_cfg("unused");
        cmd_run(&cfg, tmp_a.path(), true).unwrap();
        cmd_run(&cfg, tmp_b.path(), true).unwrap();
        let a = std::fs::read(tmp_a.path().join("summary.json")).unwrap();
        let b = std::fs::read(tmp_b.path().join("summary.json")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(tmp_a.path().join("async_inertial/trace.csv")).unwrap();
        let b = std::fs::read(tmp_b.path().join("async_inertial/trace.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_iterate_fails_validation() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = quadratic_cfg(tmp.path().to_str().unwrap());
        cmd_run(&cfg, tmp.path(), true).unwrap();
        let bin = tmp.path().join("async_aggregated/iterates.bin");
        let mut raw = std::fs::read(&bin).unwrap();
        // perturb one float near the middle by 1e-3
        let mid = (raw.len() / 16) * 8;
        let mut v = f64::from_le_bytes(raw[mid..mid + 8].try_into().unwrap());
        v += 1e-3;
        raw[mid..mid + 8].copy_from_slice(&v.to_le_bytes());
        std::fs::write(&bin, raw).unwrap();
        let report = cmd_validate(&cfg, &tmp.path().join("async_aggregated"), Algorithm::AsyncAggregated).unwrap();
        assert!(report.contains("FAIL"), "{report}");
    }

    #[test]
    fn theory_report_flags_practical_eta_as_unguaranteed() {
        let cfg = ExperimentConfig::from_json(
            r#"{
            "seed": 2,
            "output_dir": "out/t",
            "sim_time_budget_s": 2.0,
            "problem": {"kind": "dispatch", "n_buildings": 1, "horizon": 4, "alpha1": 0.01, "alpha2": 10000.0},
            "algorithms": ["async_inertial"],
            "params": {"gamma": null, "eta": 0.9, "beta": 0.99, "stop_tol": 1e-9, "max_iters": 100},
            "schedule": {"tau_epochs": 8}
        }"#,
        )
        .unwrap();
        let report = cmd_theory(&cfg).unwrap();
        assert_eq!(report.configured_eta_guaranteed, Some(false));
        let t = report.constants.unwrap();
        assert!(t.eta_max < 0.9);
    }
}
