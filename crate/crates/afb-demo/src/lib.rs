//! Browser bindings for the solver: three interactive operations returning
//! JSON, rendered by the static page in `www/`.
//!
//! Everything here is pure computation over in-memory state, so the same
//! functions run natively in tests and under `wasm32-unknown-unknown` in the
//! browser.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use afb::config::{Algorithm, ExperimentConfig, ParamsConfig, ProblemConfig, ScheduleSection};
use afb::engines::{run_sync_fbs, SyncParams};
use afb::protocol::{run_async, AsyncRun, TraceEventKind, UpdateRule};
use afb::scheduler::DurationSampler;
use afb::theory::{compute_nu, compute_y_x, eta_max_from, TheoryConstants, TheoryInputs};

#[derive(Serialize)]
struct Curve {
    name: String,
    /// `(sim_time, relative distance)` samples, thinned for plotting.
    points: Vec<(f64, f64)>,
    updates_per_agent: Vec<usize>,
}

#[derive(Serialize)]
struct Comparison {
    curves: Vec<Curve>,
    tau_obs: Option<usize>,
    reference_norm: f64,
    gamma: f64,
    error: Option<String>,
}

fn experiment_config(n_buildings: usize, horizon: usize, eta: f64, beta: f64, budget_s: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        output_dir: String::new(),
        sim_time_budget_s: budget_s,
        problem: ProblemConfig::Dispatch {
            n_buildings,
            horizon,
            alpha1: 1e-2,
            alpha2: 1e4,
            classes: None,
        },
        algorithms: vec![
            Algorithm::Sync,
            Algorithm::AsyncCoordinate,
            Algorithm::AsyncAggregated,
            Algorithm::AsyncInertial,
        ],
        params: ParamsConfig { gamma: None, eta, beta, stop_tol: 1e-12, max_iters: 500_000 },
        schedule: ScheduleSection {
            profiles: None,
            coordinator_service_s: 0.0,
            latency_s: 0.0,
            tau_epochs: 600,
            starvation_guard: true,
        },
    }
}

fn thin(points: Vec<(f64, f64)>, max_len: usize) -> Vec<(f64, f64)> {
    if points.len() <= max_len {
        return points;
    }
    let stride = points.len().div_ceil(max_len);
    let mut out: Vec<(f64, f64)> = points.iter().step_by(stride).copied().collect();
    if let Some(last) = points.last() {
        if out.last() != Some(last) {
            out.push(*last);
        }
    }
    out
}

fn run_comparison_impl(
    n_buildings: usize,
    horizon: usize,
    eta: f64,
    beta: f64,
    budget_s: f64,
    seed: u64,
) -> Result<Comparison, String> {
    let cfg = experiment_config(n_buildings, horizon, eta, beta, budget_s, seed);
    cfg.validate().map_err(|e| e.to_string())?;
    let built = cfg.build().map_err(|e| e.to_string())?;
    let ref_norm = built.reference.norm();
    let mut curves = Vec::new();
    let mut tau_obs = None;

    // synchronous baseline under the simulated clock
    {
        let schedule = cfg.schedule_config(built.profiles.clone());
        let mut sampler = DurationSampler::new(&schedule).map_err(|e| e.to_string())?;
        let n = schedule.num_agents();
        let mut times = vec![0.0f64];
        let mut t = 0.0;
        loop {
            let epoch: f64 = (0..n).map(|i| sampler.next_duration(i)).fold(0.0, f64::max);
            t += epoch;
            if t > budget_s {
                break;
            }
            times.push(t);
        }
        let mut params = SyncParams::for_pair(&built.pair, built.x0.clone());
        params.eta = eta;
        params.max_iters = times.len() - 1;
        params.stop_tol = 1e-12;
        let run = run_sync_fbs(&built.pair, &params, Some(&built.reference)).map_err(|e| e.to_string())?;
        let points = run
            .iterates
            .iter()
            .enumerate()
            .map(|(idx, (k, x))| {
                let _ = idx;
                (times.get(*k).copied().unwrap_or(t), x.distance(&built.reference) / ref_norm)
            })
            .collect();
        curves.push(Curve {
            name: "sync".into(),
            points: thin(points, 400),
            updates_per_agent: vec![run.iterations; n],
        });
    }

    for (name, rule, b) in [
        ("async_coordinate", UpdateRule::Coordinate, 0.0),
        ("async_aggregated", UpdateRule::Aggregated, 0.0),
        ("async_inertial", UpdateRule::Aggregated, beta),
    ] {
        let mut params = SyncParams::for_pair(&built.pair, built.x0.clone());
        params.eta = eta;
        params.beta = b;
        params.max_iters = 500_000;
        params.stop_tol = 1e-12;
        let schedule = cfg.schedule_config(built.profiles.clone());
        let run_cfg = AsyncRun::new(params, schedule, rule).with_budget(budget_s);
        let (run, trace) = run_async(&built.pair, &run_cfg).map_err(|e| e.to_string())?;
        let mut updates = vec![0usize; trace.num_agents()];
        let mut compute_times = Vec::with_capacity(trace.final_k());
        for ev in trace.events() {
            if ev.kind == TraceEventKind::CoordinatorCompute {
                updates[ev.agent] += 1;
                compute_times.push(ev.sim_time);
            }
        }
        tau_obs = afb::scheduler::measure_tau(&trace).tau_obs.or(tau_obs);
        let points = run
            .iterates
            .iter()
            .map(|(k, x)| {
                let t = if *k == 0 { 0.0 } else { compute_times[*k - 1] };
                (t, x.distance(&built.reference) / ref_norm)
            })
            .collect();
        curves.push(Curve { name: name.into(), points: thin(points, 400), updates_per_agent: updates });
    }

    Ok(Comparison { curves, tau_obs, reference_norm: ref_norm, gamma: built.gamma, error: None })
}

/// Runs the four algorithm variants on a desk-scale dispatch instance and
/// returns relative-distance curves against simulated time, as JSON.
#[wasm_bindgen]
pub fn run_comparison(n_buildings: usize, horizon: usize, eta: f64, beta: f64, budget_s: f64, seed: u64) -> String {
    let out = match run_comparison_impl(n_buildings, horizon, eta, beta, budget_s, seed) {
        Ok(c) => c,
        Err(e) => Comparison {
            curves: Vec::new(),
            tau_obs: None,
            reference_norm: 0.0,
            gamma: 0.0,
            error: Some(e),
        },
    };
    serde_json::to_string(&out).expect("serializable")
}

#[derive(Serialize)]
struct TheoryOut {
    nu: f64,
    y: f64,
    x: f64,
    eta_max: f64,
    rate_at_eta_max: f64,
    r_at_eta: f64,
    q_at_eta: f64,
    guaranteed: bool,
    error: Option<String>,
}

/// Evaluates the convergence-theory constants for given problem constants.
/// `gamma` is taken as a fraction of `2/L`.
#[wasm_bindgen]
pub fn theory_constants(
    n_agents: usize,
    tau: usize,
    gamma_frac: f64,
    l: f64,
    mu: f64,
    beta: f64,
    eta: f64,
) -> String {
    let gamma = gamma_frac * 2.0 / l;
    let result = (|| -> Result<TheoryOut, String> {
        let nu = compute_nu(gamma, mu, l).map_err(|e| e.to_string())?;
        if nu <= 0.0 {
            let (y, x) = compute_y_x(n_agents, tau, gamma, l, beta);
            return Ok(TheoryOut {
                nu,
                y,
                x,
                eta_max: 0.0,
                rate_at_eta_max: 1.0,
                r_at_eta: 1.0,
                q_at_eta: f64::NAN,
                guaranteed: false,
                error: Some("nu = 0: no linear-rate guarantee".into()),
            });
        }
        let inputs = TheoryInputs::with_defaults(n_agents, tau, gamma, l, mu, beta.max(1e-9))
            .map_err(|e| e.to_string())?;
        let table = TheoryConstants::compute(inputs).map_err(|e| e.to_string())?;
        let _ = eta_max_from(nu, table.x, 1.0, nu / 2.0);
        Ok(TheoryOut {
            nu: table.nu,
            y: table.y,
            x: table.x,
            eta_max: table.eta_max,
            rate_at_eta_max: table.rate_at_eta_max,
            r_at_eta: table.r(eta),
            q_at_eta: table.q(eta),
            guaranteed: table.guarantees(eta),
            error: None,
        })
    })();
    let out = result.unwrap_or_else(|e| TheoryOut {
        nu: f64::NAN,
        y: f64::NAN,
        x: f64::NAN,
        eta_max: f64::NAN,
        rate_at_eta_max: f64::NAN,
        r_at_eta: f64::NAN,
        q_at_eta: f64::NAN,
        guaranteed: false,
        error: Some(e),
    });
    serde_json::to_string(&out).expect("serializable")
}

#[derive(Serialize)]
struct Tracking {
    /// Reference signal per step.
    reference: Vec<f64>,
    /// Flexibility contribution per agent per step at the solved dispatch
    /// (battery first).
    contributions: Vec<Vec<f64>>,
    agent_names: Vec<String>,
    error: Option<String>,
}

/// Solves the dispatch problem to high accuracy and returns the tracking
/// decomposition (the area-plot view): each agent's deviation from baseline
/// against the reference signal.
#[wasm_bindgen]
pub fn tracking_profile(n_buildings: usize, horizon: usize, seed: u64) -> String {
    let out = (|| -> Result<Tracking, String> {
        let problem = afb::dispatch::desk_problem(n_buildings, horizon, 1e-2, 1e4, seed)
            .map_err(|e| e.to_string())?;
        let pair = problem
            .operator_pair(problem.default_gamma(), 1e-11)
            .map_err(|e| e.to_string())?;
        let x = afb::dispatch::solve_reference(&problem, &pair, 1e-8).map_err(|e| e.to_string())?;
        let mut contributions = Vec::new();
        let mut agent_names = Vec::new();
        for agent in 0..problem.num_agents() {
            let base = problem.baseline(agent);
            contributions.push(x.block(agent).iter().zip(base).map(|(p, b)| p - b).collect());
            agent_names.push(if agent == 0 {
                "battery".to_string()
            } else {
                format!("building {agent}")
            });
        }
        Ok(Tracking { reference: problem.r.clone(), contributions, agent_names, error: None })
    })()
    .unwrap_or_else(|e| Tracking {
        reference: Vec::new(),
        contributions: Vec::new(),
        agent_names: Vec::new(),
        error: Some(e),
    });
    serde_json::to_string(&out).expect("serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_runs_and_orders_variants() {
        let json = run_comparison(2, 8, 0.9, 0.99, 3.0, 7);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["error"].is_null(), "{json}");
        let curves = v["curves"].as_array().unwrap();
        assert_eq!(curves.len(), 4);
        for c in curves {
            assert!(!c["points"].as_array().unwrap().is_empty());
        }
        assert!(v["tau_obs"].as_u64().unwrap() >= 3);
    }

    #[test]
    fn theory_json_has_finite_constants() {
        let json = theory_constants(3, 10, 0.25, 4.0, 1.0, 0.1, 0.9);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["error"].is_null(), "{json}");
        assert!(v["nu"].as_f64().unwrap() > 0.0);
        assert!(v["eta_max"].as_f64().unwrap() > 0.0);
        assert_eq!(v["guaranteed"].as_bool().unwrap(), false);
    }

    #[test]
    fn tracking_decomposition_sums_toward_reference() {
        let json = tracking_profile(2, 8, 5);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["error"].is_null(), "{json}");
        let r: Vec<f64> = serde_json::from_value(v["reference"].clone()).unwrap();
        let contributions: Vec<Vec<f64>> = serde_json::from_value(v["contributions"].clone()).unwrap();
        assert_eq!(contributions.len(), 3);
        // with alpha2 >> alpha1 the aggregate deviation nearly tracks r
        let mut worst = 0.0f64;
        let scale = r.iter().map(|x| x.abs()).fold(1.0, f64::max);
        for t in 0..r.len() {
            let sum: f64 = contributions.iter().map(|c| c[t]).sum();
            worst = worst.max((sum - r[t]).abs() / scale);
        }
        assert!(worst < 0.25, "aggregate misses the reference by {worst}");
    }
}
