//! Coordinator/agent state machines of the asynchronous scheme: write and
//! read buffers, per-agent snapshots, the inertial local solve and the global
//! fixed-point update, plus the trace-driven error-reconstruction oracle.

pub mod live;
pub mod reconstruct;
pub mod runner;
pub mod trace;

use std::collections::VecDeque;

use crate::block::BlockVector;
use crate::error::{Error, Result};
use crate::operators::{BackwardBlock, OperatorPair};

pub use live::run_live;
pub use reconstruct::{
    check_buffer_conservation, check_coordinate_replay, check_decomposition, reconstruct_error,
    verify_delay_bounds, DecompositionReport, DelayReport, ErrorDecomposition,
};
pub use runner::{run_async, AsyncRun};
pub use trace::{Trace, TraceConfig, TraceEvent, TraceEventKind, UpdateRule};

/// Global coordinator state: the current iterate, the staged agent values,
/// per-agent read/write snapshots and the two FIFO buffers.
#[derive(Debug, Clone)]
pub struct CoordinatorState {
    /// Current global iterate `x_k`.
    pub x: BlockVector,
    /// Staged agent values `z`; block `i` holds the last consumed `z^i`.
    pub z: BlockVector,
    /// Per-agent snapshot of `x` after the update that consumed the agent's
    /// latest write.
    pub x_write: Vec<BlockVector>,
    /// Per-agent snapshot of `x` at the time of the last transmission.
    pub x_read: Vec<BlockVector>,
    w_buf: VecDeque<usize>,
    r_buf: VecDeque<usize>,
    pending_z: Vec<Option<Vec<f64>>>,
    in_flight: Vec<bool>,
    /// Epoch of each agent's most recent consumed write (`None` before the
    /// first consume).
    pub last_consume: Vec<Option<usize>>,
    /// Global clock: number of compute transitions performed.
    pub k: usize,
}

impl CoordinatorState {
    pub fn new(x0: BlockVector, n_agents: usize) -> Result<Self> {
        if x0.partition().num_blocks() != n_agents {
            return Err(Error::DimensionMismatch {
                expected: n_agents,
                got: x0.partition().num_blocks(),
            });
        }
        Ok(Self {
            z: x0.clone(),
            x_write: vec![x0.clone(); n_agents],
            x_read: vec![x0.clone(); n_agents],
            w_buf: VecDeque::new(),
            r_buf: VecDeque::new(),
            pending_z: vec![None; n_agents],
            in_flight: vec![false; n_agents],
            last_consume: vec![None; n_agents],
            k: 0,
            x: x0,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.pending_z.len()
    }

    pub fn write_buffer(&self) -> &VecDeque<usize> {
        &self.w_buf
    }

    pub fn read_buffer(&self) -> &VecDeque<usize> {
        &self.r_buf
    }

    /// The run bootstrap seeds `R` with every agent so each gets one initial
    /// read against `x_0`.
    pub(crate) fn read_buffer_mut(&mut self) -> &mut VecDeque<usize> {
        &mut self.r_buf
    }

    pub fn is_in_flight(&self, i: usize) -> bool {
        self.in_flight[i]
    }

    /// Marks agent `i` as holding an outstanding request without a read
    /// transition; test-only shortcut for exercising receive/compute.
    #[cfg(test)]
    pub(crate) fn mark_in_flight(&mut self, i: usize) {
        self.in_flight[i] = true;
    }

    /// Write-thread transition: store `z^i` pending and append `i` to `W`.
    pub fn receive(&mut self, i: usize, z_i: Vec<f64>) -> Result<()> {
        if i >= self.num_agents() {
            return Err(Error::ProtocolViolation(format!("unknown agent {i}")));
        }
        if !self.in_flight[i] || self.w_buf.contains(&i) || self.r_buf.contains(&i) {
            return Err(Error::ProtocolViolation(format!(
                "duplicate or unsolicited receive from agent {i}"
            )));
        }
        let expected = self.x.partition().block_dim(i);
        if z_i.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: z_i.len() });
        }
        self.in_flight[i] = false;
        self.pending_z[i] = Some(z_i);
        self.w_buf.push_back(i);
        Ok(())
    }

    /// Compute-thread transition: consume agent `i`'s pending write, fold it
    /// into the global iterate per `rule`, snapshot `x_write^i` post-update,
    /// move `i` to `R` and advance the clock.
    pub fn compute(&mut self, i: usize, eta: f64, rule: UpdateRule) -> Result<()> {
        let pos = self
            .w_buf
            .iter()
            .position(|&j| j == i)
            .ok_or_else(|| Error::ProtocolViolation(format!("agent {i} not in write buffer")))?;
        let z_i = self.pending_z[i].take().expect("buffer entry implies pending value");
        self.w_buf.remove(pos);
        self.z.set_block(i, &z_i)?;
        match rule {
            UpdateRule::Aggregated => {
                // x_{k+1} = (1 - eta) x_k + eta z, full vector
                self.x.scale(1.0 - eta);
                self.x.axpy(eta, &self.z);
            }
            UpdateRule::Coordinate => {
                // x_{k+1}[i] = x_k[i] - eta (x_read^i[i] - z^i), other blocks frozen
                let read_i = self.x_read[i].block(i).to_vec();
                let updated: Vec<f64> = self
                    .x
                    .block(i)
                    .iter()
                    .zip(z_i.iter().zip(&read_i))
                    .map(|(x, (z, r))| x + eta * (z - r))
                    .collect();
                self.x.set_block(i, &updated)?;
            }
        }
        self.x_write[i] = self.x.clone();
        self.last_consume[i] = Some(self.k);
        self.k += 1;
        self.r_buf.push_back(i);
        Ok(())
    }

    /// Read-thread transition: snapshot `x_read^i`, return the transmission
    /// payload `(y_write, y_B)` and mark the agent in flight.
    pub fn read(&mut self, i: usize, pair: &OperatorPair) -> Result<(Vec<f64>, Vec<f64>)> {
        let pos = self
            .r_buf
            .iter()
            .position(|&j| j == i)
            .ok_or_else(|| Error::ProtocolViolation(format!("agent {i} not in read buffer")))?;
        self.r_buf.remove(pos);
        self.x_read[i] = self.x.clone();
        let y_write = self.x_write[i].block(i).to_vec();
        let y_b = pair.apply_forward_step(&self.x_read[i])?.block(i).to_vec();
        self.in_flight[i] = true;
        Ok((y_write, y_b))
    }
}

/// Agent-local state: the last received `y_write` and its predecessor, the
/// forward-step payload and the last computed `z^i`.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub y_write: Vec<f64>,
    pub y_write_prev: Vec<f64>,
    pub y_b: Vec<f64>,
    pub z_i: Vec<f64>,
}

impl AgentState {
    /// The first activation sees `y_write_prev = y_write`, so the inertial
    /// term vanishes.
    pub fn new(id: usize, x0_block: &[f64]) -> Self {
        Self {
            id,
            y_write: x0_block.to_vec(),
            y_write_prev: x0_block.to_vec(),
            y_b: x0_block.to_vec(),
            z_i: x0_block.to_vec(),
        }
    }

    pub fn receive_transmission(&mut self, y_write: Vec<f64>, y_b: Vec<f64>) {
        self.y_write = y_write;
        self.y_b = y_b;
    }
}

/// The agent's local solve `z^i = T_{A_i}(y_B + beta (y_write - y_write_prev))`
/// followed by the `y_write_prev <- y_write` rollover.
pub fn agent_step(
    agent: &mut AgentState,
    block: &BackwardBlock,
    gamma: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    if agent.y_write.len() != agent.y_b.len() || agent.y_write_prev.len() != agent.y_b.len() {
        return Err(Error::DimensionMismatch {
            expected: agent.y_b.len(),
            got: agent.y_write.len(),
        });
    }
    let arg: Vec<f64> = agent
        .y_b
        .iter()
        .zip(agent.y_write.iter().zip(&agent.y_write_prev))
        .map(|(b, (w, wp))| b + beta * (w - wp))
        .collect();
    let z = block.apply(gamma, &arg)?;
    agent.y_write_prev = agent.y_write.clone();
    agent.z_i = z.clone();
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::BlockPartition;
    use crate::operators::{BackwardBlocks, ForwardOperator};

    fn two_agent_state() -> CoordinatorState {
        let p = BlockPartition::new(vec![1, 1]).unwrap();
        let x0 = BlockVector::new(p, vec![1.0, 1.0]).unwrap();
        CoordinatorState::new(x0, 2).unwrap()
    }

    #[test]
    fn receive_appends_fifo_and_rejects_duplicates() {
        let mut st = two_agent_state();
        st.mark_in_flight(0);
        st.mark_in_flight(1);
        st.receive(1, vec![0.5]).unwrap();
        assert_eq!(st.write_buffer().iter().copied().collect::<Vec<_>>(), vec![1]);
        st.receive(0, vec![0.25]).unwrap();
        assert_eq!(st.write_buffer().iter().copied().collect::<Vec<_>>(), vec![1, 0]);
        // agent 1 already in W
        assert!(matches!(st.receive(1, vec![0.1]), Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn compute_requires_membership_in_w() {
        let mut st = two_agent_state();
        assert!(matches!(
            st.compute(0, 0.9, UpdateRule::Aggregated),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn compute_aggregated_relaxes_full_vector() {
        // eta = 0.9, x = (1,1), staged z = (0,1) after agent 0's write of 0.
        let mut st = two_agent_state();
        st.mark_in_flight(0);
        st.receive(0, vec![0.0]).unwrap();
        st.compute(0, 0.9, UpdateRule::Aggregated).unwrap();
        assert!((st.x.as_slice()[0] - 0.1).abs() <= 1e-15);
        assert_eq!(st.x.as_slice()[1], 1.0);
        assert_eq!(st.k, 1);
        assert_eq!(st.read_buffer().iter().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn compute_eta_one_jumps_to_z_and_eta_zero_freezes() {
        let mut st = two_agent_state();
        st.mark_in_flight(0);
        st.receive(0, vec![-3.0]).unwrap();
        st.compute(0, 1.0, UpdateRule::Aggregated).unwrap();
        assert_eq!(st.x.as_slice(), &[-3.0, 1.0]);

        st.mark_in_flight(1);
        st.receive(1, vec![9.0]).unwrap();
        st.compute(1, 0.0, UpdateRule::Aggregated).unwrap();
        assert_eq!(st.x.as_slice(), &[-3.0, 1.0]); // unchanged
        assert_eq!(st.k, 2); // clock still advances
    }

    #[test]
    fn read_pops_r_and_returns_snapshot_payload() {
        let p = BlockPartition::new(vec![1, 1]).unwrap();
        let x0 = BlockVector::new(p.clone(), vec![2.0, -1.0]).unwrap();
        let mut st = CoordinatorState::new(x0, 2).unwrap();
        let pair = OperatorPair::new(
            p,
            ForwardOperator::identity(),
            BackwardBlocks::identity(2),
            0.5,
        )
        .unwrap();
        st.mark_in_flight(0);
        st.receive(0, vec![0.0]).unwrap();
        st.compute(0, 1.0, UpdateRule::Aggregated).unwrap();
        let (y_write, y_b) = st.read(0, &pair).unwrap();
        // x is now (0, -1); x_write^0 = x_1 = (0, -1)
        assert_eq!(y_write, vec![0.0]);
        // y_B = (x - 0.5 x)[0] = 0
        assert_eq!(y_b, vec![0.0]);
        assert!(st.is_in_flight(0));
        assert!(matches!(st.read(0, &pair), Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn reads_between_computes_see_identical_snapshots() {
        let p = BlockPartition::new(vec![1, 1]).unwrap();
        let x0 = BlockVector::new(p.clone(), vec![2.0, 4.0]).unwrap();
        let mut st = CoordinatorState::new(x0, 2).unwrap();
        let pair = OperatorPair::new(
            p,
            ForwardOperator::identity(),
            BackwardBlocks::identity(2),
            0.5,
        )
        .unwrap();
        for i in 0..2 {
            st.mark_in_flight(i);
            st.receive(i, vec![0.0]).unwrap();
            st.compute(i, 0.5, UpdateRule::Aggregated).unwrap();
        }
        st.read(0, &pair).unwrap();
        st.read(1, &pair).unwrap();
        assert_eq!(st.x_read[0], st.x_read[1]);
    }

    #[test]
    fn agent_step_applies_inertia_then_rolls_over() {
        // clamp to [0,1], y_B = 0.9, beta = 0.99, y_write - y_write_prev = 0.5
        let block = BackwardBlock::BoxProjection { lo: vec![0.0], hi: vec![1.0] };
        let mut agent = AgentState::new(0, &[0.0]);
        agent.receive_transmission(vec![0.75], vec![0.9]);
        agent.y_write_prev = vec![0.25];
        let z = agent_step(&mut agent, &block, 1.0, 0.99).unwrap();
        assert_eq!(z, vec![1.0]); // 0.9 + 0.99*0.5 = 1.395 clamped
        assert_eq!(agent.y_write_prev, vec![0.75]);
    }

    #[test]
    fn agent_step_first_activation_has_no_inertia() {
        let block = BackwardBlock::Identity;
        let mut agent = AgentState::new(0, &[0.4]);
        agent.receive_transmission(vec![0.4], vec![-2.0]);
        let z = agent_step(&mut agent, &block, 1.0, 0.99).unwrap();
        assert_eq!(z, vec![-2.0]);
    }

    #[test]
    fn agent_step_beta_zero_returns_y_b() {
        let block = BackwardBlock::Identity;
        let mut agent = AgentState::new(0, &[0.0]);
        agent.receive_transmission(vec![5.0], vec![1.25]);
        agent.y_write_prev = vec![-5.0];
        let z = agent_step(&mut agent, &block, 1.0, 0.0).unwrap();
        assert_eq!(z, vec![1.25]);
    }
}
