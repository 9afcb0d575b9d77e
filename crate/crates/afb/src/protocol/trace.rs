//! Append-only run traces: every read/write/compute event with simulated
//! timestamps plus the full iterate history, sufficient to rebuild the
//! asynchronous error terms offline.
//!
//! On-disk layout: `trace.csv` with columns
//! `event_kind,sim_time,agent_id,k,block_checksum` (floats at 17 significant
//! digits) and a sidecar `iterates.bin` of little-endian 64-bit floats, one
//! row per iterate.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::block::{BlockPartition, BlockVector};
use crate::error::{Error, Result};

pub const TRACE_CSV: &str = "trace.csv";
pub const ITERATES_BIN: &str = "iterates.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEventKind {
    Read,
    AgentCompute,
    WriteReceive,
    CoordinatorCompute,
}

impl TraceEventKind {
    fn as_str(self) -> &'static str {
        match self {
            TraceEventKind::Read => "read",
            TraceEventKind::AgentCompute => "agent_compute",
            TraceEventKind::WriteReceive => "write_receive",
            TraceEventKind::CoordinatorCompute => "coordinator_compute",
        }
    }
}

/// How the coordinator folds a consumed write into the global iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Single-block relaxation against the agent's read snapshot:
    /// `x_{k+1}[i] = x_k[i] - eta * (x_read^i[i] - z^i)`; other blocks frozen.
    Coordinate,
    /// Full-vector relaxation `x_{k+1} = (1 - eta) x_k + eta z` where only
    /// block `i` of the staged `z` changed.
    Aggregated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub kind: TraceEventKind,
    pub sim_time: f64,
    pub agent: usize,
    /// Global clock at the event; a coordinator compute with `k` produced
    /// iterate `k + 1`.
    pub k: usize,
    /// Starvation-guard intervention marker (coordinator computes only).
    pub forced: bool,
    pub checksum: u64,
}

/// Run configuration snapshot stored alongside the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub eta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dims: Vec<usize>,
    pub rule: UpdateRule,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub config: TraceConfig,
    events: Vec<TraceEvent>,
    iterates: Vec<BlockVector>,
    dense: bool,
}

/// FNV-1a over the little-endian bytes of a float slice.
pub fn checksum(values: &[f64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl Trace {
    pub fn new(config: TraceConfig, events: Vec<TraceEvent>, iterates: Vec<BlockVector>, dense: bool) -> Self {
        Self { config, events, iterates, dense }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn num_agents(&self) -> usize {
        self.config.dims.len()
    }

    /// Number of coordinator computes recorded.
    pub fn final_k(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    pub fn is_dense(&self) -> bool {
        self.dense
    }

    pub fn iterate(&self, k: usize) -> Result<&BlockVector> {
        if !self.dense {
            return Err(Error::Precondition("trace is thinned; dense history required".into()));
        }
        self.iterates
            .get(k)
            .ok_or_else(|| Error::TraceFormat(format!("iterate {k} out of range 0..={}", self.final_k())))
    }

    pub fn iterates(&self) -> &[BlockVector] {
        &self.iterates
    }

    pub fn partition(&self) -> Result<Arc<BlockPartition>> {
        BlockPartition::new(self.config.dims.clone())
    }

    /// Writes `trace.csv` and `iterates.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(fs::File::create(dir.join(TRACE_CSV))?);
        writeln!(csv, "event_kind,sim_time,agent_id,k,block_checksum")?;
        for ev in &self.events {
            let kind = if ev.forced {
                "coordinator_compute_forced".to_string()
            } else {
                ev.kind.as_str().to_string()
            };
            writeln!(csv, "{},{:.16e},{},{},{:016x}", kind, ev.sim_time, ev.agent, ev.k, ev.checksum)?;
        }
        csv.flush()?;

        let mut bin = BufWriter::new(fs::File::create(dir.join(ITERATES_BIN))?);
        for x in &self.iterates {
            for v in x.as_slice() {
                bin.write_all(&v.to_le_bytes())?;
            }
        }
        bin.flush()?;
        Ok(())
    }

    /// Loads a trace saved by [`Trace::save`]; the configuration snapshot is
    /// supplied by the caller (it lives in the experiment config).
    pub fn load(dir: &Path, config: TraceConfig) -> Result<Self> {
        let text = fs::read_to_string(dir.join(TRACE_CSV))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::TraceFormat("empty trace.csv".into()))?;
        if header != "event_kind,sim_time,agent_id,k,block_checksum" {
            return Err(Error::TraceFormat(format!("unexpected header: {header}")));
        }
        let mut events = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::TraceFormat(format!("line {}: expected 5 fields", lineno + 2)));
            }
            let (kind, forced) = match fields[0] {
                "read" => (TraceEventKind::Read, false),
                "agent_compute" => (TraceEventKind::AgentCompute, false),
                "write_receive" => (TraceEventKind::WriteReceive, false),
                "coordinator_compute" => (TraceEventKind::CoordinatorCompute, false),
                "coordinator_compute_forced" => (TraceEventKind::CoordinatorCompute, true),
                other => return Err(Error::TraceFormat(format!("line {}: unknown kind {other}", lineno + 2))),
            };
            let sim_time: f64 = fields[1]
                .parse()
                .map_err(|e| Error::TraceFormat(format!("line {}: bad sim_time: {e}", lineno + 2)))?;
            let agent: usize = fields[2]
                .parse()
                .map_err(|e| Error::TraceFormat(format!("line {}: bad agent: {e}", lineno + 2)))?;
            let k: usize = fields[3]
                .parse()
                .map_err(|e| Error::TraceFormat(format!("line {}: bad k: {e}", lineno + 2)))?;
            let checksum = u64::from_str_radix(fields[4], 16)
                .map_err(|e| Error::TraceFormat(format!("line {}: bad checksum: {e}", lineno + 2)))?;
            events.push(TraceEvent { kind, sim_time, agent, k, forced, checksum });
        }

        let partition = BlockPartition::new(config.dims.clone())?;
        let dim = partition.total_dim();
        let raw = fs::read(dir.join(ITERATES_BIN))?;
        if raw.len() % (8 * dim) != 0 {
            return Err(Error::TraceFormat(format!(
                "iterates.bin length {} is not a multiple of row size {}",
                raw.len(),
                8 * dim
            )));
        }
        let rows = raw.len() / (8 * dim);
        let computes = events
            .iter()
            .filter(|e| e.kind == TraceEventKind::CoordinatorCompute)
            .count();
        if rows != computes + 1 {
            return Err(Error::TraceFormat(format!(
                "iterates.bin holds {rows} rows but the event log implies {} (thinned or corrupt trace)",
                computes + 1
            )));
        }
        let mut iterates = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut data = Vec::with_capacity(dim);
            for i in 0..dim {
                let off = (r * dim + i) * 8;
                let bytes: [u8; 8] = raw[off..off + 8].try_into().expect("bounds checked");
                data.push(f64::from_le_bytes(bytes));
            }
            iterates.push(BlockVector::new(partition.clone(), data)?);
        }
        Ok(Self { config, events, iterates, dense: true })
    }
}
