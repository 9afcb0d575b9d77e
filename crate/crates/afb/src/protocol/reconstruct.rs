//! Offline reconstruction of the asynchronous error terms from a dense trace:
//! recovers each agent's staleness offsets from the logged read/write events,
//! rebuilds the additive error behind every coordinator update and verifies
//! the bounded-delay ranges.

use crate::block::BlockVector;
use crate::error::{Error, Result};
use crate::operators::OperatorPair;
use crate::scheduler::measure_tau;

use super::trace::{Trace, TraceEventKind, UpdateRule};

/// Staleness (in epochs) of the snapshots behind one agent's staged value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentDelays {
    pub read: usize,
    pub write: usize,
    pub write_prev: usize,
}

/// The reconstructed error decomposition at one epoch.
#[derive(Debug, Clone)]
pub struct ErrorDecomposition {
    /// Additive error `e_k`: the update satisfies
    /// `x_{k+1} = x_k - eta (S x_k - e_k)`.
    pub e: BlockVector,
    /// Block-collapsed staleness sums `{a_k^i[i]}`, `{b_k^i[i]}`, `{c_k^i[i]}`.
    pub a: BlockVector,
    pub b: BlockVector,
    pub c: BlockVector,
    /// Forward-step error blocks `d_k^i[i]`.
    pub d: BlockVector,
    /// `S x_k`, shared with the identity check.
    pub s_x: BlockVector,
    /// Per-agent delays; `None` while the agent's first write is unconsumed
    /// (its staged value is still the initializer `x_0`).
    pub delays: Vec<Option<AgentDelays>>,
}

/// One completed agent cycle: the read feeding a local solve and the compute
/// that consumed the resulting write.
#[derive(Debug, Clone, Copy)]
struct Cycle {
    read_epoch: usize,
    ywrite_epoch: usize,
    ywrite_prev_epoch: usize,
    consume_epoch: usize,
}

/// Per-agent cycle tables parsed from the event log.
struct CycleTable {
    per_agent: Vec<Vec<Cycle>>,
}

impl CycleTable {
    fn build(trace: &Trace) -> Result<Self> {
        let n = trace.num_agents();
        let mut per_agent: Vec<Vec<Cycle>> = vec![Vec::new(); n];
        // snapshot epoch of x_write^i currently stored at the coordinator
        let mut snapshot = vec![0usize; n];
        let mut pending: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut prev_ywrite: Vec<Option<usize>> = vec![None; n];
        for ev in trace.events() {
            match ev.kind {
                TraceEventKind::Read => {
                    if pending[ev.agent].is_some() {
                        return Err(Error::TraceFormat(format!(
                            "agent {} read twice without an intervening compute",
                            ev.agent
                        )));
                    }
                    pending[ev.agent] = Some((ev.k, snapshot[ev.agent]));
                }
                TraceEventKind::CoordinatorCompute => {
                    let (read_epoch, ywrite_epoch) = pending[ev.agent].take().ok_or_else(|| {
                        Error::TraceFormat(format!("compute for agent {} without a prior read", ev.agent))
                    })?;
                    let ywrite_prev_epoch = prev_ywrite[ev.agent].unwrap_or(ywrite_epoch);
                    per_agent[ev.agent].push(Cycle {
                        read_epoch,
                        ywrite_epoch,
                        ywrite_prev_epoch,
                        consume_epoch: ev.k,
                    });
                    prev_ywrite[ev.agent] = Some(ywrite_epoch);
                    snapshot[ev.agent] = ev.k + 1;
                }
                TraceEventKind::AgentCompute | TraceEventKind::WriteReceive => {}
            }
        }
        Ok(Self { per_agent })
    }

    /// The cycle whose value is staged in `z[agent]` at epoch `k` (the most
    /// recent cycle consumed at or before `k`), with its per-agent index.
    fn staged(&self, agent: usize, k: usize) -> Option<(usize, &Cycle)> {
        let cycles = &self.per_agent[agent];
        match cycles.binary_search_by(|c| c.consume_epoch.cmp(&k)) {
            Ok(idx) => Some((idx, &cycles[idx])),
            Err(0) => None,
            Err(idx) => Some((idx - 1, &cycles[idx - 1])),
        }
    }
}

fn reconstruct_at(
    trace: &Trace,
    pair: &OperatorPair,
    beta: f64,
    k: usize,
    table: &CycleTable,
) -> Result<ErrorDecomposition> {
    let x_k = trace.iterate(k)?;
    let x_0 = trace.iterate(0)?;
    let partition = x_k.partition().clone();
    let tb = pair.apply_forward_step(x_k)?;
    let b_xk = pair.forward.eval(x_k.as_slice());

    let mut e = BlockVector::zeros(partition.clone());
    let mut a = BlockVector::zeros(partition.clone());
    let mut b = BlockVector::zeros(partition.clone());
    let mut c = BlockVector::zeros(partition.clone());
    let mut d = BlockVector::zeros(partition.clone());
    let mut t_base = BlockVector::zeros(partition.clone());
    let mut delays = Vec::with_capacity(trace.num_agents());

    for j in 0..trace.num_agents() {
        let block = pair.backward.block(j);
        let base_j = block.apply(pair.gamma, tb.block(j))?;
        t_base.set_block(j, &base_j)?;
        match table.staged(j, k) {
            Some((_, cycle)) => {
                let x_r = trace.iterate(cycle.read_epoch)?;
                let x_w = trace.iterate(cycle.ywrite_epoch)?;
                let x_wp = trace.iterate(cycle.ywrite_prev_epoch)?;
                let b_xr = pair.forward.eval(x_r.as_slice());
                let range = partition.block_range(j);
                let dim = range.len();
                let mut a_j = vec![0.0; dim];
                let mut b_j = vec![0.0; dim];
                let mut c_j = vec![0.0; dim];
                let mut d_j = vec![0.0; dim];
                let mut arg_j = vec![0.0; dim];
                for (t, g) in range.clone().enumerate() {
                    a_j[t] = x_k.as_slice()[g] - x_r.as_slice()[g];
                    b_j[t] = x_k.as_slice()[g] - x_w.as_slice()[g];
                    c_j[t] = x_k.as_slice()[g] - x_wp.as_slice()[g];
                    d_j[t] = pair.gamma * (b_xk[g] - b_xr[g]) - a_j[t];
                    arg_j[t] = tb.as_slice()[g] + d_j[t] + beta * (c_j[t] - b_j[t]);
                }
                let z_j = block.apply(pair.gamma, &arg_j)?;
                let e_j: Vec<f64> = z_j.iter().zip(&base_j).map(|(z, t)| z - t).collect();
                e.set_block(j, &e_j)?;
                a.set_block(j, &a_j)?;
                b.set_block(j, &b_j)?;
                c.set_block(j, &c_j)?;
                d.set_block(j, &d_j)?;
                delays.push(Some(AgentDelays {
                    read: k - cycle.read_epoch,
                    write: k - cycle.ywrite_epoch,
                    write_prev: k - cycle.ywrite_prev_epoch,
                }));
            }
            None => {
                // agent's first write not yet consumed: z[j] still holds x_0[j]
                let e_j: Vec<f64> = x_0
                    .block(j)
                    .iter()
                    .zip(&base_j)
                    .map(|(z, t)| z - t)
                    .collect();
                e.set_block(j, &e_j)?;
                delays.push(None);
            }
        }
    }
    let s_x = x_k.sub(&t_base);
    Ok(ErrorDecomposition { e, a, b, c, d, s_x, delays })
}

/// Rebuilds `(e_k, a_k, b_k, c_k, d_k)` and the per-agent delay triple at
/// epoch `k` purely from the logged events of a dense trace.
pub fn reconstruct_error(
    trace: &Trace,
    pair: &OperatorPair,
    beta: f64,
    k: usize,
) -> Result<ErrorDecomposition> {
    if !trace.is_dense() {
        return Err(Error::Precondition("error reconstruction requires a dense trace".into()));
    }
    if k > trace.final_k() {
        return Err(Error::Precondition(format!(
            "epoch {k} beyond trace end {}",
            trace.final_k()
        )));
    }
    let table = CycleTable::build(trace)?;
    reconstruct_at(trace, pair, beta, k, &table)
}

/// Outcome of replaying the error-decomposition identity over a whole trace.
#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub checked: usize,
    /// Worst `||x_{k+1} - (x_k - eta (S x_k - e_k))|| / (1e-10 (1 + ||x_k||))`.
    pub worst_relative_residual: f64,
    pub identity_ok: bool,
    pub first_identity_failure: Option<usize>,
    /// Epochs at which every agent had a consumed write (the recursive error
    /// bound is only defined there).
    pub bound_checked: usize,
    /// `||e_k|| <= ||d_k|| + beta ||c_k - b_k||` on every complete epoch.
    pub recursive_bound_ok: bool,
}

/// Verifies `x_{k+1} = x_k - eta (S x_k - e_k)` at every epoch of a dense
/// aggregated-rule trace, with `e_k` rebuilt from logged events, and the
/// recursive error bound as a sanity check.
pub fn check_decomposition(trace: &Trace, pair: &OperatorPair) -> Result<DecompositionReport> {
    if trace.config.rule != UpdateRule::Aggregated {
        return Err(Error::Precondition(
            "decomposition identity applies to aggregated-rule traces; use the coordinate replay check".into(),
        ));
    }
    let table = CycleTable::build(trace)?;
    let eta = trace.config.eta;
    let beta = trace.config.beta;
    let mut worst = 0.0f64;
    let mut identity_ok = true;
    let mut first_fail = None;
    let mut bound_checked = 0usize;
    let mut recursive_ok = true;
    for k in 0..trace.final_k() {
        let recon = reconstruct_at(trace, pair, beta, k, &table)?;
        let x_k = trace.iterate(k)?;
        let x_next = trace.iterate(k + 1)?;
        let mut predicted = x_k.clone();
        let correction = recon.s_x.sub(&recon.e);
        predicted.axpy(-eta, &correction);
        let residual = x_next.distance(&predicted);
        let allowed = 1e-10 * (1.0 + x_k.norm());
        let rel = residual / allowed;
        if rel > worst {
            worst = rel;
        }
        if residual > allowed && identity_ok {
            identity_ok = false;
            first_fail = Some(k);
        }
        if recon.delays.iter().all(Option::is_some) {
            bound_checked += 1;
            let cb = recon.c.sub(&recon.b);
            let bound = recon.d.norm() + beta * cb.norm();
            if recon.e.norm() > bound + 1e-12 * (1.0 + bound) {
                recursive_ok = false;
            }
        }
    }
    Ok(DecompositionReport {
        checked: trace.final_k(),
        worst_relative_residual: worst,
        identity_ok,
        first_identity_failure: first_fail,
        bound_checked,
        recursive_bound_ok: recursive_ok,
    })
}

/// Replays every coordinate-rule update from the logged snapshots:
/// `x_{k+1}[i] = x_k[i] - eta ((S x_read^i)[i] adjusted by inertia)`, other
/// blocks bit-frozen.
pub fn check_coordinate_replay(trace: &Trace, pair: &OperatorPair) -> Result<DecompositionReport> {
    if trace.config.rule != UpdateRule::Coordinate {
        return Err(Error::Precondition("coordinate replay applies to coordinate-rule traces".into()));
    }
    let table = CycleTable::build(trace)?;
    let eta = trace.config.eta;
    let beta = trace.config.beta;
    let mut worst = 0.0f64;
    let mut identity_ok = true;
    let mut first_fail = None;
    // consume events in epoch order
    let mut consumed: Vec<(usize, usize)> = trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceEventKind::CoordinatorCompute)
        .map(|e| (e.k, e.agent))
        .collect();
    consumed.sort_unstable();
    for (k, agent) in consumed {
        let (_, cycle) = table
            .staged(agent, k)
            .filter(|(_, c)| c.consume_epoch == k)
            .ok_or_else(|| Error::TraceFormat(format!("missing cycle for agent {agent} at epoch {k}")))?;
        let x_k = trace.iterate(k)?;
        let x_next = trace.iterate(k + 1)?;
        let x_r = trace.iterate(cycle.read_epoch)?;
        let x_w = trace.iterate(cycle.ywrite_epoch)?;
        let x_wp = trace.iterate(cycle.ywrite_prev_epoch)?;
        let tb_r = pair.apply_forward_step(x_r)?;
        let arg: Vec<f64> = tb_r
            .block(agent)
            .iter()
            .zip(x_w.block(agent).iter().zip(x_wp.block(agent)))
            .map(|(b, (w, wp))| b + beta * (w - wp))
            .collect();
        let z = pair.backward.block(agent).apply(pair.gamma, &arg)?;
        let mut predicted = x_k.clone();
        let upd: Vec<f64> = x_k
            .block(agent)
            .iter()
            .zip(z.iter().zip(x_r.block(agent)))
            .map(|(x, (z, r))| x + eta * (z - r))
            .collect();
        predicted.set_block(agent, &upd)?;
        let residual = x_next.distance(&predicted);
        let allowed = 1e-10 * (1.0 + x_k.norm());
        let rel = residual / allowed;
        if rel > worst {
            worst = rel;
        }
        if residual > allowed && identity_ok {
            identity_ok = false;
            first_fail = Some(k);
        }
    }
    Ok(DecompositionReport {
        checked: trace.final_k(),
        worst_relative_residual: worst,
        identity_ok,
        first_identity_failure: first_fail,
        bound_checked: 0,
        recursive_bound_ok: true,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayViolationRecord {
    pub agent: usize,
    pub epoch: usize,
    pub kind: &'static str,
    pub staleness: usize,
    pub bound: usize,
}

/// Realized staleness of every staged snapshot at every compute epoch,
/// checked against the bounds `2 tau` (reads and writes) and `3 tau`
/// (previous writes).
#[derive(Debug, Clone)]
pub struct DelayReport {
    pub tau_used: usize,
    pub max_read: usize,
    pub max_write: usize,
    pub max_write_prev: usize,
    pub violations: Vec<DelayViolationRecord>,
    pub pass: bool,
}

/// Checks the bounded-delay ranges over a dense trace. When `tau` is `None`
/// the observed bound from [`measure_tau`] is used.
///
/// Each agent's first cycle references the bootstrap snapshots taken at
/// epoch 0 rather than a previous consumed write, so the `tau`-based ranges
/// only apply from its second cycle on (and from the third for the previous
/// write, which reaches one cycle further back).
pub fn verify_delay_bounds(trace: &Trace, tau: Option<usize>) -> Result<DelayReport> {
    if !trace.is_dense() {
        return Err(Error::Precondition("delay verification requires a dense trace".into()));
    }
    let tau_used = match tau {
        Some(t) => t,
        None => measure_tau(trace).tau_obs.ok_or_else(|| {
            Error::Precondition("cannot infer tau: some agent has fewer than two consumed writes".into())
        })?,
    };
    let table = CycleTable::build(trace)?;
    let n = trace.num_agents();
    let mut max_read = 0usize;
    let mut max_write = 0usize;
    let mut max_write_prev = 0usize;
    let mut violations = Vec::new();
    for k in 0..trace.final_k() {
        for agent in 0..n {
            let Some((idx, cycle)) = table.staged(agent, k) else { continue };
            if idx == 0 {
                continue;
            }
            let l_read = k - cycle.read_epoch;
            let l_write = k - cycle.ywrite_epoch;
            max_read = max_read.max(l_read);
            max_write = max_write.max(l_write);
            let mut checks = vec![("read", l_read, 2 * tau_used), ("write", l_write, 2 * tau_used)];
            if idx >= 2 {
                let l_prev = k - cycle.ywrite_prev_epoch;
                max_write_prev = max_write_prev.max(l_prev);
                checks.push(("write_prev", l_prev, 3 * tau_used));
            }
            for (kind, staleness, bound) in checks {
                if staleness > bound {
                    violations.push(DelayViolationRecord { agent, epoch: k, kind, staleness, bound });
                }
            }
        }
    }
    let pass = violations.is_empty();
    Ok(DelayReport { tau_used, max_read, max_write, max_write_prev, violations, pass })
}

/// Buffer conservation: per agent, the counts of read, agent-compute,
/// write-receive and coordinator-compute events may differ pairwise by at
/// most one.
pub fn check_buffer_conservation(trace: &Trace) -> bool {
    let n = trace.num_agents();
    let mut counts = vec![[0usize; 4]; n];
    for ev in trace.events() {
        let slot = match ev.kind {
            TraceEventKind::Read => 0,
            TraceEventKind::AgentCompute => 1,
            TraceEventKind::WriteReceive => 2,
            TraceEventKind::CoordinatorCompute => 3,
        };
        counts[ev.agent][slot] += 1;
    }
    counts.iter().all(|c| {
        let max = *c.iter().max().expect("non-empty");
        let min = *c.iter().min().expect("non-empty");
        max - min <= 1
    })
}
