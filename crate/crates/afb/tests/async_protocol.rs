//! Integration checks of the asynchronous runner against the synchronous
//! baselines, the trace invariants, and the error-reconstruction oracle.

use std::sync::Arc;

use afb::block::{BlockPartition, BlockVector};
use afb::engines::{run_cyclic_coordinate_km, SyncParams};
use afb::operators::{BackwardBlock, BackwardBlocks, ForwardOperator, OperatorPair};
use afb::protocol::{
    check_buffer_conservation, check_coordinate_replay, check_decomposition, reconstruct_error,
    run_async, verify_delay_bounds, AsyncRun, TraceEventKind, UpdateRule,
};
use afb::scheduler::{measure_tau, AgentClass, AgentProfile, ScheduleConfig};

/// Three-block quadratic-plus-box instance with a dense coupling matrix.
fn coupled_instance(gamma_frac: f64) -> (Arc<BlockPartition>, OperatorPair) {
    let partition = BlockPartition::new(vec![2, 1, 2]).unwrap();
    let n = 5;
    let mut q = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                q[(i, j)] = 2.0 + i as f64 * 0.3;
            } else {
                q[(i, j)] = 0.2 / (1.0 + (i as f64 - j as f64).abs());
            }
        }
    }
    let c = nalgebra::DVector::from_vec(vec![0.4, -1.0, 0.7, 0.1, -0.3]);
    let fwd = ForwardOperator::quadratic(q, c).unwrap();
    let gamma = gamma_frac * 2.0 / fwd.inv_cocoercivity();
    let backward = BackwardBlocks::new(vec![
        BackwardBlock::BoxProjection { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
        BackwardBlock::SeparableQuadratic { q_diag: vec![1.5], q_lin: vec![0.2] },
        BackwardBlock::BoxQp(
            afb::operators::BoxQpBlock::new(
                nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
                vec![0.1, -0.2],
                vec![-2.0, -2.0],
                vec![2.0, 2.0],
            )
            .unwrap(),
        ),
    ]);
    let pair = OperatorPair::new(partition.clone(), fwd, backward, gamma).unwrap();
    (partition, pair)
}

fn x0_for(partition: &Arc<BlockPartition>) -> BlockVector {
    BlockVector::from_fn(partition.clone(), |i| 0.8 - 0.3 * i as f64)
}

fn het_schedule(n: usize, seed: u64) -> ScheduleConfig {
    let profiles = (0..n)
        .map(|id| match id % 3 {
            0 => AgentProfile::battery(id),
            1 => AgentProfile::small(id),
            _ => AgentProfile::medium(id),
        })
        .collect();
    ScheduleConfig::new(profiles, seed)
}

#[test]
fn round_robin_coordinate_matches_cyclic_km() {
    let (partition, pair) = coupled_instance(0.45);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.7;
    params.max_iters = 120;
    params.stop_tol = 1e-30;

    let cyc = run_cyclic_coordinate_km(&pair, &params, None).unwrap();
    let run = AsyncRun::new(params, ScheduleConfig::round_robin(3), UpdateRule::Coordinate);
    let (res, trace) = run_async(&pair, &run).unwrap();

    assert_eq!(res.iterates.len(), cyc.iterates.len());
    for ((_, a), (_, b)) in res.iterates.iter().zip(&cyc.iterates) {
        assert!(
            a.distance(b) <= 1e-14 * (1.0 + b.norm()),
            "iterates diverge: {:?} vs {:?}",
            a.as_slice(),
            b.as_slice()
        );
    }
    assert!(check_buffer_conservation(&trace));
}

#[test]
fn single_agent_full_relaxation_repeats_apply_t() {
    let partition = BlockPartition::flat(3).unwrap();
    let fwd = ForwardOperator::quadratic_diag(vec![1.0, 2.0, 3.0], vec![0.5, -0.5, 0.0]).unwrap();
    let backward = BackwardBlocks::new(vec![BackwardBlock::BoxProjection {
        lo: vec![-1.0; 3],
        hi: vec![1.0; 3],
    }]);
    let pair = OperatorPair::new(partition.clone(), fwd, backward, 0.3).unwrap();
    let x0 = BlockVector::new(partition, vec![0.9, -0.9, 0.4]).unwrap();
    let mut params = SyncParams::for_pair(&pair, x0.clone());
    params.eta = 1.0;
    params.max_iters = 50;
    params.stop_tol = 1e-30;
    let run = AsyncRun::new(params, ScheduleConfig::round_robin(1), UpdateRule::Aggregated);
    let (res, _) = run_async(&pair, &run).unwrap();

    let mut expected = x0;
    for (k, (_, actual)) in res.iterates.iter().enumerate() {
        assert!(
            actual.distance(&expected) <= 1e-14 * (1.0 + expected.norm()),
            "k={k}"
        );
        expected = pair.apply_t(&expected).unwrap();
    }
}

#[test]
fn simulated_run_is_deterministic_and_conserves_buffers() {
    let (partition, pair) = coupled_instance(0.4);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.9;
    params.beta = 0.3;
    params.max_iters = 400;
    params.stop_tol = 1e-30;
    let schedule = het_schedule(3, 99);
    let run = AsyncRun::new(params, schedule, UpdateRule::Aggregated);

    let (res_a, trace_a) = run_async(&pair, &run).unwrap();
    let (res_b, trace_b) = run_async(&pair, &run).unwrap();
    assert_eq!(trace_a.events(), trace_b.events());
    assert_eq!(trace_a.iterates(), trace_b.iterates());
    assert_eq!(res_a.iterates.len(), res_b.iterates.len());

    assert!(check_buffer_conservation(&trace_a));
    let mut prev = f64::NEG_INFINITY;
    let mut computes = 0usize;
    for ev in trace_a.events() {
        assert!(ev.sim_time >= prev);
        prev = ev.sim_time;
        if ev.kind == TraceEventKind::CoordinatorCompute {
            assert_eq!(ev.k, computes, "coordinator computes must advance k by exactly one");
            computes += 1;
        }
    }
    assert_eq!(computes, trace_a.final_k());
}

#[test]
fn decomposition_identity_holds_on_aggregated_runs() {
    for beta in [0.0, 0.5, 0.95] {
        let (partition, pair) = coupled_instance(0.35);
        let x0 = x0_for(&partition);
        let mut params = SyncParams::for_pair(&pair, x0);
        params.eta = 0.9;
        params.beta = beta;
        params.max_iters = 600;
        params.stop_tol = 1e-30;
        let run = AsyncRun::new(params, het_schedule(3, 7), UpdateRule::Aggregated);
        let (_, trace) = run_async(&pair, &run).unwrap();
        let report = check_decomposition(&trace, &pair).unwrap();
        assert!(
            report.identity_ok,
            "beta={beta}: identity failed at {:?} (worst rel {})",
            report.first_identity_failure, report.worst_relative_residual
        );
        assert!(report.recursive_bound_ok, "beta={beta}: recursive bound failed");
        assert!(report.bound_checked > 0);
    }
}

#[test]
fn zero_staleness_zero_beta_reconstruction_vanishes() {
    // single agent, zero latency: reads always see the current iterate
    let partition = BlockPartition::flat(2).unwrap();
    let fwd = ForwardOperator::quadratic_diag(vec![1.0, 1.5], vec![0.3, -0.2]).unwrap();
    let pair = OperatorPair::new(partition.clone(), fwd, BackwardBlocks::identity(1), 0.5).unwrap();
    let x0 = BlockVector::new(partition, vec![1.0, -1.0]).unwrap();
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.8;
    params.max_iters = 30;
    params.stop_tol = 1e-30;
    let run = AsyncRun::new(params, ScheduleConfig::round_robin(1), UpdateRule::Aggregated);
    let (_, trace) = run_async(&pair, &run).unwrap();
    // after the first consume, staleness of the single agent is zero, so e_k = 0
    for k in 1..trace.final_k() {
        let recon = reconstruct_error(&trace, &pair, 0.0, k).unwrap();
        assert!(recon.e.norm() <= 1e-14, "k={k}: e = {:?}", recon.e.as_slice());
        let d = recon.delays[0].unwrap();
        assert_eq!(d.read, 0);
    }
}

#[test]
fn coordinate_replay_matches_trace() {
    let (partition, pair) = coupled_instance(0.3);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.85;
    params.max_iters = 500;
    params.stop_tol = 1e-30;
    let run = AsyncRun::new(params, het_schedule(3, 13), UpdateRule::Coordinate);
    let (_, trace) = run_async(&pair, &run).unwrap();
    let report = check_coordinate_replay(&trace, &pair).unwrap();
    assert!(
        report.identity_ok,
        "coordinate replay failed at {:?} (worst rel {})",
        report.first_identity_failure, report.worst_relative_residual
    );
}

#[test]
fn delay_bounds_hold_with_observed_tau() {
    let (partition, pair) = coupled_instance(0.4);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.9;
    params.beta = 0.9;
    params.max_iters = 800;
    params.stop_tol = 1e-30;
    let run = AsyncRun::new(params, het_schedule(3, 21), UpdateRule::Aggregated);
    let (_, trace) = run_async(&pair, &run).unwrap();

    let tau = measure_tau(&trace);
    let tau_obs = tau.tau_obs.expect("every agent consumed at least twice");
    let report = verify_delay_bounds(&trace, Some(tau_obs)).unwrap();
    assert!(report.pass, "violations: {:?}", report.violations);
    assert!(report.max_read <= 2 * tau_obs);
    assert!(report.max_write_prev <= 3 * tau_obs);
}

#[test]
fn measure_tau_round_robin_and_ratio_examples() {
    // round robin, N = 3: every agent updates every third epoch
    let (partition, pair) = coupled_instance(0.4);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.5;
    params.max_iters = 60;
    params.stop_tol = 1e-30;
    let run = AsyncRun::new(params.clone(), ScheduleConfig::round_robin(3), UpdateRule::Coordinate);
    let (_, trace) = run_async(&pair, &run).unwrap();
    assert_eq!(measure_tau(&trace).tau_obs, Some(3));

    // 4:1 mean ratio, zero std, N = 2 blocks
    let partition2 = BlockPartition::new(vec![2, 3]).unwrap();
    let fwd = ForwardOperator::quadratic_diag(vec![1.0; 5], vec![0.0; 5]).unwrap();
    let pair2 = OperatorPair::new(partition2.clone(), fwd, BackwardBlocks::identity(2), 0.5).unwrap();
    let x0 = BlockVector::from_fn(partition2, |i| i as f64 - 2.0);
    let mut params2 = SyncParams::for_pair(&pair2, x0);
    params2.eta = 0.5;
    params2.max_iters = 200;
    params2.stop_tol = 1e-30;
    let profiles = vec![
        AgentProfile::new(0, AgentClass::Custom, 4.0, 0.0).unwrap(),
        AgentProfile::new(1, AgentClass::Custom, 1.0, 0.0).unwrap(),
    ];
    let schedule = ScheduleConfig::new(profiles, 0);
    let run2 = AsyncRun::new(params2, schedule, UpdateRule::Aggregated);
    let (_, trace2) = run_async(&pair2, &run2).unwrap();
    assert_eq!(measure_tau(&trace2).tau_obs, Some(5));
}

#[test]
fn guard_off_with_tight_tau_reports_violation() {
    let (partition, pair) = coupled_instance(0.4);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.9;
    params.max_iters = 500;
    params.stop_tol = 1e-30;
    let mut schedule = het_schedule(3, 3);
    schedule.starvation_guard = false;
    schedule.tau_epochs = 3; // battery alone outруns this
    let run = AsyncRun::new(params, schedule, UpdateRule::Aggregated);
    match run_async(&pair, &run) {
        Err(afb::Error::DelayViolation { agent, tau, .. }) => {
            assert_eq!(tau, 3);
            assert!(agent < 3);
        }
        other => panic!("expected delay violation, got {other:?}"),
    }
}

#[test]
fn guard_on_keeps_tau_obs_within_declared_bound() {
    let (partition, pair) = coupled_instance(0.4);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.9;
    params.max_iters = 600;
    params.stop_tol = 1e-30;
    let mut schedule = het_schedule(3, 3);
    schedule.starvation_guard = true;
    schedule.tau_epochs = 4; // tighter than the natural schedule
    let run = AsyncRun::new(params, schedule, UpdateRule::Aggregated);
    let (_, trace) = run_async(&pair, &run).unwrap();
    let tau = measure_tau(&trace).tau_obs.unwrap();
    assert!(tau <= 4, "guard failed to cap tau: {tau}");
    assert!(
        trace.events().iter().any(|e| e.forced),
        "guard interventions must be recorded in the trace"
    );
}

#[test]
fn live_mode_traces_satisfy_the_same_contracts() {
    // real threads, real timestamps: the trace is not replay-deterministic,
    // but every structural check still holds
    let (partition, pair) = coupled_instance(0.4);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.9;
    params.beta = 0.8;
    params.max_iters = 400;
    params.stop_tol = 1e-11;
    let (run, trace) = afb::protocol::run_live(&pair, &params, UpdateRule::Aggregated).unwrap();
    assert!(run.iterations > 0);
    assert!(check_buffer_conservation(&trace));
    let mut prev = f64::NEG_INFINITY;
    for ev in trace.events() {
        assert!(ev.sim_time >= prev);
        prev = ev.sim_time;
    }
    let rep = check_decomposition(&trace, &pair).unwrap();
    assert!(
        rep.identity_ok,
        "live decomposition failed at {:?} (worst rel {:.3e})",
        rep.first_identity_failure, rep.worst_relative_residual
    );
    if let Some(tau) = measure_tau(&trace).tau_obs {
        let delays = verify_delay_bounds(&trace, Some(tau)).unwrap();
        assert!(delays.pass, "violations: {:?}", delays.violations);
    }
}

#[test]
fn budget_terminates_by_sim_time() {
    let (partition, pair) = coupled_instance(0.4);
    let x0 = x0_for(&partition);
    let mut params = SyncParams::for_pair(&pair, x0);
    params.eta = 0.9;
    params.max_iters = 1_000_000;
    params.stop_tol = 1e-30;
    let run = AsyncRun::new(params, het_schedule(3, 11), UpdateRule::Aggregated).with_budget(2.0);
    let (res, trace) = run_async(&pair, &run).unwrap();
    assert_eq!(res.terminated_by, afb::engines::Termination::Budget);
    assert!(trace.events().iter().all(|e| e.sim_time <= 2.0));
}
