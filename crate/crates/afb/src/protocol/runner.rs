//! Executes the coordinator's three activities and `N` agent activities over
//! a deterministic discrete-event schedule, producing a dense [`Trace`].

use crate::block::BlockVector;
use crate::engines::{History, RunResult, SyncParams, Termination, DIVERGENCE_GUARD};
use crate::error::{Error, Result};
use crate::operators::OperatorPair;
use crate::scheduler::{
    CoordinatorThread, DurationSampler, EventQueue, QueuedEventKind, ScheduleConfig, ScheduleMode,
};

use super::trace::{checksum, Trace, TraceConfig, TraceEvent, TraceEventKind, UpdateRule};
use super::{agent_step, AgentState, CoordinatorState};

/// Full description of one asynchronous run.
#[derive(Debug)]
pub struct AsyncRun {
    pub params: SyncParams,
    pub schedule: ScheduleConfig,
    pub rule: UpdateRule,
    /// Simulated wall-clock budget in seconds; events past it are not
    /// processed.
    pub sim_budget_s: Option<f64>,
    /// Keep the iterate history dense regardless of length.
    pub dense_history: bool,
}

impl AsyncRun {
    pub fn new(params: SyncParams, schedule: ScheduleConfig, rule: UpdateRule) -> Self {
        Self { params, schedule, rule, sim_budget_s: None, dense_history: false }
    }

    pub fn with_budget(mut self, budget_s: f64) -> Self {
        self.sim_budget_s = Some(budget_s);
        self
    }
}

enum ComputeChoice {
    Consume { agent: usize, forced: bool },
    /// Guard is holding the compute thread for a starved agent's write.
    Stall,
    Idle,
}

struct Sim<'a> {
    pair: &'a OperatorPair,
    run: &'a AsyncRun,
    state: CoordinatorState,
    agents: Vec<AgentState>,
    sampler: DurationSampler,
    queue: EventQueue,
    events: Vec<TraceEvent>,
    history: History,
    /// z values computed at read time, delivered at the write-arrival event.
    in_flight_z: Vec<Option<Vec<f64>>>,
    /// Virtual pre-run consume epochs staggering the initial deadlines.
    virtual_last: Vec<i64>,
    compute_busy: bool,
    read_busy: bool,
    stalled_for: Option<usize>,
    terminated: Option<Termination>,
}

impl<'a> Sim<'a> {
    fn new(pair: &'a OperatorPair, run: &'a AsyncRun) -> Result<Self> {
        run.params.validate()?;
        run.params.check_gamma_matches(pair)?;
        run.schedule.validate()?;
        let n = pair.num_blocks();
        if run.schedule.num_agents() != n {
            return Err(Error::DimensionMismatch { expected: n, got: run.schedule.num_agents() });
        }
        if run.params.x0.partition().as_ref() != pair.partition().as_ref() {
            return Err(Error::DimensionMismatch {
                expected: pair.partition().total_dim(),
                got: run.params.x0.dim(),
            });
        }
        if run.schedule.starvation_guard && run.schedule.tau_epochs < n {
            return Err(Error::InvalidParameter(format!(
                "starvation guard needs tau_epochs >= N = {n}, got {}",
                run.schedule.tau_epochs
            )));
        }
        let state = CoordinatorState::new(run.params.x0.clone(), n)?;
        let agents = (0..n).map(|i| AgentState::new(i, run.params.x0.block(i))).collect();
        let mut history = if run.dense_history { History::unbounded() } else { History::new() };
        history.push(&run.params.x0);
        Ok(Self {
            pair,
            run,
            state,
            agents,
            sampler: DurationSampler::new(&run.schedule)?,
            queue: EventQueue::new(),
            events: Vec::new(),
            history,
            in_flight_z: vec![None; n],
            virtual_last: (0..n).map(|i| i as i64 - n as i64).collect(),
            compute_busy: false,
            read_busy: false,
            stalled_for: None,
            terminated: None,
        })
    }

    fn n(&self) -> usize {
        self.state.num_agents()
    }

    fn log(&mut self, kind: TraceEventKind, sim_time: f64, agent: usize, forced: bool, sum: u64) {
        self.events.push(TraceEvent { kind, sim_time, agent, k: self.state.k, forced, checksum: sum });
    }

    /// Epoch of the agent's latest consumed write, with the virtual stagger
    /// standing in before the first consume.
    fn last_consume_eff(&self, i: usize) -> i64 {
        self.state.last_consume[i].map_or(self.virtual_last[i], |e| e as i64)
    }

    fn choose_compute(&mut self) -> ComputeChoice {
        let k = self.state.k as i64;
        let tau = self.run.schedule.tau_epochs as i64;
        if self.run.schedule.starvation_guard {
            // earliest-deadline-first once a deadline binds at this epoch
            let mut urgent: Option<(i64, usize)> = None;
            for i in 0..self.n() {
                let deadline = self.last_consume_eff(i) + tau;
                if deadline <= k {
                    let cand = (deadline, i);
                    if urgent.map_or(true, |u| cand < u) {
                        urgent = Some(cand);
                    }
                }
            }
            if let Some((_, i)) = urgent {
                return if self.state.write_buffer().contains(&i) {
                    let jumped = self.state.write_buffer().front() != Some(&i);
                    let was_stalled = self.stalled_for.take() == Some(i);
                    ComputeChoice::Consume { agent: i, forced: jumped || was_stalled }
                } else {
                    self.stalled_for = Some(i);
                    ComputeChoice::Stall
                };
            }
        }
        match self.state.write_buffer().front() {
            Some(&i) => ComputeChoice::Consume { agent: i, forced: false },
            None => ComputeChoice::Idle,
        }
    }

    fn perform_compute(&mut self, agent: usize, t: f64, forced: bool) -> Result<()> {
        if !self.run.schedule.starvation_guard {
            // detect bounded-delay violations instead of preventing them
            let tau = self.run.schedule.tau_epochs as i64;
            for i in 0..self.n() {
                if (self.state.k as i64 + 1) - self.last_consume_eff(i) > tau {
                    return Err(Error::DelayViolation {
                        agent: i,
                        tau: self.run.schedule.tau_epochs,
                        epoch: self.state.k,
                    });
                }
            }
        }
        self.state.compute(agent, self.run.params.eta, self.run.rule)?;
        let norm = self.state.x.norm();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            return Err(Error::Divergence { norm, at_iter: self.state.k });
        }
        self.history.push(&self.state.x);
        let sum = checksum(self.state.x.as_slice());
        self.events.push(TraceEvent {
            kind: TraceEventKind::CoordinatorCompute,
            sim_time: t,
            agent,
            k: self.state.k - 1,
            forced,
            checksum: sum,
        });
        if self.state.k % self.n() == 0 {
            let res = self.pair.residual(&self.state.x)?;
            if res <= self.run.params.stop_tol {
                self.terminated = Some(Termination::Tolerance);
            }
        }
        if self.terminated.is_none() && self.state.k >= self.run.params.max_iters {
            self.terminated = Some(Termination::MaxIters);
        }
        Ok(())
    }

    fn perform_read(&mut self, agent: usize, t: f64) -> Result<()> {
        let (y_write, y_b) = self.state.read(agent, self.pair)?;
        let mut payload = y_write.clone();
        payload.extend_from_slice(&y_b);
        self.log(TraceEventKind::Read, t, agent, false, checksum(&payload));
        self.agents[agent].receive_transmission(y_write, y_b);
        let z = agent_step(
            &mut self.agents[agent],
            self.pair.backward.block(agent),
            self.pair.gamma,
            self.run.params.beta,
        )?;
        self.in_flight_z[agent] = Some(z);
        let duration = self.sampler.next_duration(agent);
        let done_at = t + self.run.schedule.latency_s + duration;
        self.queue.push(done_at, agent, QueuedEventKind::AgentDone);
        Ok(())
    }

    /// Settles everything that can happen at sim time `t`: the compute thread
    /// drains the write buffer (respecting the guard), then the read thread
    /// drains the read buffer.
    fn dispatch(&mut self, t: f64) -> Result<()> {
        loop {
            let mut progress = false;
            while self.terminated.is_none() && !self.compute_busy {
                match self.choose_compute() {
                    ComputeChoice::Consume { agent, forced } => {
                        self.perform_compute(agent, t, forced)?;
                        progress = true;
                        if self.run.schedule.coordinator_service_s > 0.0 {
                            self.compute_busy = true;
                            self.queue.push(
                                t + self.run.schedule.coordinator_service_s,
                                agent,
                                QueuedEventKind::ThreadFree(CoordinatorThread::Compute),
                            );
                            break;
                        }
                    }
                    ComputeChoice::Stall | ComputeChoice::Idle => break,
                }
            }
            while self.terminated.is_none() && !self.read_busy {
                let Some(&agent) = self.state.read_buffer().front() else { break };
                self.perform_read(agent, t)?;
                progress = true;
                if self.run.schedule.coordinator_service_s > 0.0 {
                    self.read_busy = true;
                    self.queue.push(
                        t + self.run.schedule.coordinator_service_s,
                        agent,
                        QueuedEventKind::ThreadFree(CoordinatorThread::Read),
                    );
                    break;
                }
            }
            if !progress || self.terminated.is_some() {
                return Ok(());
            }
        }
    }

    fn run_simulated(&mut self) -> Result<()> {
        // kick-off: every agent is served one read against x_0
        for i in 0..self.n() {
            self.state.read_buffer_mut().push_back(i);
        }
        self.dispatch(0.0)?;
        while self.terminated.is_none() {
            let Some(ev) = self.queue.next_event() else {
                return Err(Error::ProtocolViolation("event queue drained with agents unaccounted for".into()));
            };
            if let Some(budget) = self.run.sim_budget_s {
                if ev.sim_time > budget {
                    self.terminated = Some(Termination::Budget);
                    break;
                }
            }
            match ev.kind {
                QueuedEventKind::AgentDone => {
                    let z = self.in_flight_z[ev.agent].clone().expect("agent finished without a solve");
                    self.log(TraceEventKind::AgentCompute, ev.sim_time, ev.agent, false, checksum(&z));
                    self.queue.push(
                        ev.sim_time + self.run.schedule.latency_s,
                        ev.agent,
                        QueuedEventKind::WriteArrival,
                    );
                }
                QueuedEventKind::WriteArrival => {
                    let z = self.in_flight_z[ev.agent].take().expect("write arrival without a solve");
                    self.log(TraceEventKind::WriteReceive, ev.sim_time, ev.agent, false, checksum(&z));
                    self.state.receive(ev.agent, z)?;
                }
                QueuedEventKind::ThreadFree(CoordinatorThread::Compute) => self.compute_busy = false,
                QueuedEventKind::ThreadFree(CoordinatorThread::Read) => self.read_busy = false,
            }
            self.dispatch(ev.sim_time)?;
        }
        Ok(())
    }

    /// Strictly sequential zero-latency agent cycle; the synchronous limit.
    fn run_round_robin(&mut self) -> Result<()> {
        for i in 0..self.n() {
            self.state.read_buffer_mut().push_back(i);
        }
        while self.terminated.is_none() {
            let agent = *self.state.read_buffer().front().expect("round robin keeps R populated");
            self.perform_read(agent, 0.0)?;
            // agent completes instantly; deliver the write in place
            let ev = self.queue.next_event().expect("agent solve was scheduled");
            debug_assert_eq!(ev.agent, agent);
            let z = self.in_flight_z[agent].clone().expect("agent finished without a solve");
            self.log(TraceEventKind::AgentCompute, 0.0, agent, false, checksum(&z));
            let z = self.in_flight_z[agent].take().expect("write arrival without a solve");
            self.log(TraceEventKind::WriteReceive, 0.0, agent, false, checksum(&z));
            self.state.receive(agent, z)?;
            self.perform_compute(agent, 0.0, false)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<(RunResult, Trace)> {
        let terminated = self.terminated.unwrap_or(Termination::MaxIters);
        let dense = self.history.is_dense();
        let entries = self.history.into_entries();
        let mut residuals = Vec::with_capacity(entries.len());
        for (_, x) in &entries {
            residuals.push(self.pair.residual(x)?);
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
            eta: self.run.params.eta,
            beta: self.run.params.beta,
            gamma: self.run.params.gamma,
            dims: self.pair.partition().dims().to_vec(),
            rule: self.run.rule,
        };
        let iterates = entries.into_iter().map(|(_, x)| x).collect::<Vec<BlockVector>>();
        let trace = Trace::new(config, self.events, iterates, dense);
        Ok((result, trace))
    }
}

/// Runs the asynchronous coordinator/agent protocol to completion under the
/// configured schedule and returns the run outcome together with its trace.
pub fn run_async(pair: &OperatorPair, run: &AsyncRun) -> Result<(RunResult, Trace)> {
    let mut sim = Sim::new(pair, run)?;
    match run.schedule.mode {
        ScheduleMode::Simulated => sim.run_simulated()?,
        ScheduleMode::RoundRobinZeroLatency => sim.run_round_robin()?,
    }
    sim.finish()
}
