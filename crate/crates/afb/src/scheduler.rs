//! Deterministic discrete-event scheduling of heterogeneous agent compute
//! times and coordinator service, plus measurement and enforcement of the
//! bounded-delay assumption (every agent's write consumed at least once every
//! `tau` epochs).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::trace::{Trace, TraceEventKind};

/// Per-agent compute-time statistics in seconds; the stock classes carry the
/// measured prox solve times of the micro-grid case study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Small,
    Medium,
    Large,
    Battery,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: usize,
    pub class: AgentClass,
    pub mean_compute_s: f64,
    pub std_compute_s: f64,
}

impl AgentProfile {
    pub fn new(id: usize, class: AgentClass, mean_compute_s: f64, std_compute_s: f64) -> Result<Self> {
        if !(mean_compute_s > 0.0) {
            return Err(Error::InvalidParameter("mean compute time must be > 0".into()));
        }
        if !(std_compute_s >= 0.0) || std_compute_s >= mean_compute_s {
            return Err(Error::InvalidParameter(
                "std compute time must satisfy 0 <= std < mean".into(),
            ));
        }
        Ok(Self { id, class, mean_compute_s, std_compute_s })
    }

    /// Small office building: 0.070 +/- 0.010 s per prox.
    pub fn small(id: usize) -> Self {
        Self { id, class: AgentClass::Small, mean_compute_s: 0.070, std_compute_s: 0.010 }
    }

    /// Medium office building: 0.243 +/- 0.005 s per prox.
    pub fn medium(id: usize) -> Self {
        Self { id, class: AgentClass::Medium, mean_compute_s: 0.243, std_compute_s: 0.005 }
    }

    /// Large office building: 0.267 +/- 0.001 s per prox.
    pub fn large(id: usize) -> Self {
        Self { id, class: AgentClass::Large, mean_compute_s: 0.267, std_compute_s: 0.001 }
    }

    /// Battery storage: 0.023 +/- 0.003 s per prox.
    pub fn battery(id: usize) -> Self {
        Self { id, class: AgentClass::Battery, mean_compute_s: 0.023, std_compute_s: 0.003 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Event-queue simulation with sampled compute durations.
    Simulated,
    /// Strictly sequential agent cycle with zero latency: the synchronous
    /// limit used by the equivalence oracles.
    RoundRobinZeroLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub profiles: Vec<AgentProfile>,
    /// Seconds the coordinator spends per read/compute transition.
    pub coordinator_service_s: f64,
    /// One-way communication latency in seconds, applied to both the read
    /// transmission and the write transmission.
    pub latency_s: f64,
    pub seed: u64,
    /// Declared bound on the consume gap, in coordinator epochs.
    pub tau_epochs: usize,
    /// When set, writes that would age past `tau_epochs` jump the FIFO queue
    /// and the coordinator stalls rather than let the bound break.
    pub starvation_guard: bool,
    pub mode: ScheduleMode,
}

impl ScheduleConfig {
    pub fn new(profiles: Vec<AgentProfile>, seed: u64) -> Self {
        let n = profiles.len().max(1);
        Self {
            profiles,
            coordinator_service_s: 0.0,
            latency_s: 0.0,
            seed,
            tau_epochs: 8 * n,
            starvation_guard: true,
            mode: ScheduleMode::Simulated,
        }
    }

    pub fn round_robin(n_agents: usize) -> Self {
        let profiles = (0..n_agents)
            .map(|id| AgentProfile { id, class: AgentClass::Custom, mean_compute_s: 1.0, std_compute_s: 0.0 })
            .collect();
        let mut cfg = Self::new(profiles, 0);
        cfg.mode = ScheduleMode::RoundRobinZeroLatency;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one agent profile".into()));
        }
        if self.tau_epochs < 1 {
            return Err(Error::InvalidParameter("tau_epochs must be >= 1".into()));
        }
        if self.coordinator_service_s < 0.0 || self.latency_s < 0.0 {
            return Err(Error::InvalidParameter("service and latency must be >= 0".into()));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if p.id != i {
                return Err(Error::InvalidParameter(format!(
                    "profile ids must be 0..N-1 in order, found id {} at position {i}",
                    p.id
                )));
            }
            AgentProfile::new(p.id, p.class, p.mean_compute_s, p.std_compute_s)?;
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.profiles.len()
    }
}

/// Per-agent stream of compute durations: normal samples truncated at
/// `mean +/- 3 std` and at zero from below, deterministic per seed.
pub struct DurationSampler {
    rngs: Vec<ChaCha8Rng>,
    dists: Vec<Normal<f64>>,
    bounds: Vec<(f64, f64)>,
}

impl DurationSampler {
    pub fn new(config: &ScheduleConfig) -> Result<Self> {
        config.validate()?;
        let mut rngs = Vec::new();
        let mut dists = Vec::new();
        let mut bounds = Vec::new();
        for p in &config.profiles {
            // one independent stream per agent so agents' draws never
            // interleave across schedule variations
            rngs.push(ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(p.id as u64 + 1))));
            dists.push(Normal::new(p.mean_compute_s, p.std_compute_s).map_err(|e| {
                Error::InvalidParameter(format!("invalid duration distribution: {e}"))
            })?);
            let lo = (p.mean_compute_s - 3.0 * p.std_compute_s).max(f64::MIN_POSITIVE);
            let hi = p.mean_compute_s + 3.0 * p.std_compute_s;
            bounds.push((lo, hi));
        }
        Ok(Self { rngs, dists, bounds })
    }

    pub fn next_duration(&mut self, agent: usize) -> f64 {
        let (lo, hi) = self.bounds[agent];
        if hi <= lo {
            return self.dists[agent].mean();
        }
        loop {
            let d = self.dists[agent].sample(&mut self.rngs[agent]);
            if d >= lo && d <= hi {
                return d;
            }
        }
    }
}

/// Entry of the simulation event queue.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedEvent {
    pub sim_time: f64,
    pub agent: usize,
    pub kind: QueuedEventKind,
    /// Insertion counter, last tie-break key for full determinism.
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueuedEventKind {
    /// Agent finished its local solve.
    AgentDone,
    /// The solved value lands at the coordinator after transmission latency.
    WriteArrival,
    /// The coordinator's compute or read thread becomes free again.
    ThreadFree(CoordinatorThread),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinatorThread {
    Compute,
    Read,
}

struct HeapEntry(QueuedEvent);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // BinaryHeap is a max-heap; invert so the smallest
    // (sim_time, agent, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        let a = &self.0;
        let b = &other.0;
        a.sim_time
            .total_cmp(&b.sim_time)
            .then(a.agent.cmp(&b.agent))
            .then(a.seq.cmp(&b.seq))
            .reverse()
    }
}

/// Event queue popping the smallest `(sim_time, agent_id)` first,
/// lexicographic tie-break.
pub struct EventQueue {
    heap: BinaryHeap<HeapEntry>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self { heap: BinaryHeap::new(), seq: 0 }
    }

    pub fn push(&mut self, sim_time: f64, agent: usize, kind: QueuedEventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(HeapEntry(QueuedEvent { sim_time, agent, kind, seq }));
    }

    /// Pops the next event; `None` signals the simulation is complete.
    pub fn next_event(&mut self) -> Option<QueuedEvent> {
        self.heap.pop().map(|e| e.0)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::new()
    }
}

/// Observed bounded-delay statistics of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    /// Max gap in epochs between consecutive consumed writes, per agent;
    /// `None` marks agents with fewer than two consumed writes.
    pub per_agent: Vec<Option<usize>>,
    /// Max over agents; infinity is reported as `None`.
    pub tau_obs: Option<usize>,
    pub warnings: Vec<String>,
}

/// Measures the realized update gaps of every agent over a dense trace.
pub fn measure_tau(trace: &Trace) -> TauReport {
    let n = trace.num_agents();
    let mut last: Vec<Option<usize>> = vec![None; n];
    let mut gap: Vec<Option<usize>> = vec![None; n];
    let mut counts = vec![0usize; n];
    for ev in trace.events() {
        if ev.kind == TraceEventKind::CoordinatorCompute {
            let a = ev.agent;
            counts[a] += 1;
            if let Some(prev) = last[a] {
                let g = ev.k - prev;
                gap[a] = Some(gap[a].map_or(g, |cur| cur.max(g)));
            }
            last[a] = Some(ev.k);
        }
    }
    let mut warnings = Vec::new();
    for (a, c) in counts.iter().enumerate() {
        if *c < 2 {
            warnings.push(format!("agent {a} has {c} consumed writes; gap reported as infinite"));
        }
    }
    let tau_obs = if warnings.is_empty() {
        gap.iter().map(|g| g.unwrap_or(0)).max()
    } else {
        None
    };
    TauReport { per_agent: gap, tau_obs, warnings }
}
