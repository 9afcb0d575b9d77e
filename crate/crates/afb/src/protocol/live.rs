//! Live execution mode: the coordinator owns its state on the main thread,
//! agents run as real threads communicating over ordered in-process
//! channels, at most one outstanding request per agent.
//!
//! Live traces carry wall-clock timestamps and are valid inputs to the
//! delay-bound and decomposition checks (event order fully determines the
//! snapshots), but they are not byte-exact replayable across runs.

use std::sync::mpsc;
use std::time::Instant;

use crate::block::BlockVector;
use crate::engines::{History, RunResult, SyncParams, Termination, DIVERGENCE_GUARD};
use crate::error::{Error, Result};
use crate::operators::OperatorPair;

use super::trace::{checksum, Trace, TraceConfig, TraceEvent, TraceEventKind, UpdateRule};
use super::{agent_step, AgentState, CoordinatorState};

/// Runs the protocol with `N` agent threads until `stop_tol` (checked every
/// `N` computes) or `max_iters`. Buffer consumption is FIFO.
pub fn run_live(pair: &OperatorPair, params: &SyncParams, rule: UpdateRule) -> Result<(RunResult, Trace)> {
    params.validate()?;
    params.check_gamma_matches(pair)?;
    let n = pair.num_blocks();
    if params.x0.partition().as_ref() != pair.partition().as_ref() {
        return Err(Error::DimensionMismatch {
            expected: pair.partition().total_dim(),
            got: params.x0.dim(),
        });
    }

    let mut state = CoordinatorState::new(params.x0.clone(), n)?;
    let mut history = History::unbounded();
    history.push(&params.x0);
    let mut events: Vec<TraceEvent> = Vec::new();
    let started = Instant::now();
    let mut terminated = Termination::MaxIters;

    std::thread::scope(|scope| -> Result<()> {
        let (to_coordinator, from_agents) = mpsc::channel::<(usize, Vec<f64>)>();
        let mut to_agents = Vec::with_capacity(n);
        for agent_id in 0..n {
            let (tx, rx) = mpsc::channel::<(Vec<f64>, Vec<f64>)>();
            to_agents.push(tx);
            let back = to_coordinator.clone();
            let block = pair.backward.block(agent_id);
            let gamma = pair.gamma;
            let beta = params.beta;
            let x0_block = params.x0.block(agent_id).to_vec();
            scope.spawn(move || {
                let mut agent = AgentState::new(agent_id, &x0_block);
                while let Ok((y_write, y_b)) = rx.recv() {
                    agent.receive_transmission(y_write, y_b);
                    let z = agent_step(&mut agent, block, gamma, beta).expect("agent solve");
                    if back.send((agent_id, z)).is_err() {
                        break; // coordinator has shut down
                    }
                }
            });
        }
        drop(to_coordinator);

        let now = |events: &[TraceEvent]| {
            let t = started.elapsed().as_secs_f64();
            // a single logger keeps the trace monotone even if the clock
            // granularity collapses consecutive events
            events.last().map_or(t, |e| t.max(e.sim_time))
        };

        // kick-off: one read per agent against x_0
        for agent in 0..n {
            state.read_buffer_mut().push_back(agent);
            let (y_write, y_b) = state.read(agent, pair)?;
            let mut payload = y_write.clone();
            payload.extend_from_slice(&y_b);
            events.push(TraceEvent {
                kind: TraceEventKind::Read,
                sim_time: now(&events),
                agent,
                k: state.k,
                forced: false,
                checksum: checksum(&payload),
            });
            to_agents[agent].send((y_write, y_b)).expect("agent alive at kick-off");
        }

        loop {
            let (agent, z) = from_agents.recv().expect("agents alive while requests are outstanding");
            let t = now(&events);
            events.push(TraceEvent {
                kind: TraceEventKind::AgentCompute,
                sim_time: t,
                agent,
                k: state.k,
                forced: false,
                checksum: checksum(&z),
            });
            events.push(TraceEvent {
                kind: TraceEventKind::WriteReceive,
                sim_time: t,
                agent,
                k: state.k,
                forced: false,
                checksum: checksum(&z),
            });
            state.receive(agent, z)?;

            // FIFO consumption of everything pending
            while let Some(&next) = state.write_buffer().front() {
                state.compute(next, params.eta, rule)?;
                let norm = state.x.norm();
                if !norm.is_finite() || norm > DIVERGENCE_GUARD {
                    return Err(Error::Divergence { norm, at_iter: state.k });
                }
                history.push(&state.x);
                events.push(TraceEvent {
                    kind: TraceEventKind::CoordinatorCompute,
                    sim_time: now(&events),
                    agent: next,
                    k: state.k - 1,
                    forced: false,
                    checksum: checksum(state.x.as_slice()),
                });
                if state.k % n == 0 && pair.residual(&state.x)? <= params.stop_tol {
                    terminated = Termination::Tolerance;
                    return Ok(());
                }
                if state.k >= params.max_iters {
                    return Ok(());
                }
                // serve the freed agent immediately
                let (y_write, y_b) = state.read(next, pair)?;
                let mut payload = y_write.clone();
                payload.extend_from_slice(&y_b);
                events.push(TraceEvent {
                    kind: TraceEventKind::Read,
                    sim_time: now(&events),
                    agent: next,
                    k: state.k,
                    forced: false,
                    checksum: checksum(&payload),
                });
                to_agents[next].send((y_write, y_b)).expect("agent alive while running");
            }
        }
    })?;

    let entries = history.into_entries();
    let mut residuals = Vec::with_capacity(entries.len());
    for (_, x) in &entries {
        residuals.push(pair.residual(x)?);
    }
    let iterations = entries.last().map_or(0, |(k, _)| *k);
    let result = RunResult {
        iterates: entries.clone(),
        residuals,
        distances: None,
        iterations,
        terminated_by: terminated,
    };
    let config = TraceConfig {
        eta: params.eta,
        beta: params.beta,
        gamma: params.gamma,
        dims: pair.partition().dims().to_vec(),
        rule,
    };
    let iterates = entries.into_iter().map(|(_, x)| x).collect::<Vec<BlockVector>>();
    Ok((result, Trace::new(config, events, iterates, true)))
}
