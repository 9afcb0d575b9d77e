//! Synchronous reference engines: gradient descent / Heavy Ball, relaxed
//! Krasnoselskii-Mann, the synchronous (inertial) forward-backward iteration
//! and the cyclic coordinate baseline.
//!
//! These are the oracles the asynchronous engine is validated against.

use crate::block::BlockVector;
use crate::error::{Error, Result};
use crate::operators::OperatorPair;

/// Iterate norm beyond which a run is aborted as divergent.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Iterate history capacity before thinning kicks in.
const HISTORY_CAP: usize = 100_000;

/// Common run parameters shared by the synchronous and asynchronous engines.
#[derive(Debug, Clone)]
pub struct SyncParams {
    /// Step size for the forward operator; must match the pair's step when an
    /// [`OperatorPair`] is involved.
    pub gamma: f64,
    /// Relaxation in `[0, 1]`.
    pub eta: f64,
    /// Inertia weight, `>= 0`.
    pub beta: f64,
    pub max_iters: usize,
    /// Stop once the fixed-point residual drops below this.
    pub stop_tol: f64,
    pub x0: BlockVector,
}

impl SyncParams {
    pub fn new(x0: BlockVector) -> Self {
        Self { gamma: 0.0, eta: 1.0, beta: 0.0, max_iters: 10_000, stop_tol: 1e-9, x0 }
    }

    /// Parameters pre-wired to an operator pair's step size.
    pub fn for_pair(pair: &OperatorPair, x0: BlockVector) -> Self {
        let mut p = Self::new(x0);
        p.gamma = pair.gamma;
        p
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Self {
        self.stop_tol = stop_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.stop_tol <= 0.0 {
            return Err(Error::InvalidParameter("stop_tol must be > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn check_gamma_matches(&self, pair: &OperatorPair) -> Result<()> {
        if self.gamma != pair.gamma {
            return Err(Error::InvalidParameter(format!(
                "params.gamma = {} disagrees with pair.gamma = {}",
                self.gamma, pair.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The residual dropped below `stop_tol`.
    Tolerance,
    MaxIters,
    /// The simulated time budget ran out (asynchronous runs only).
    Budget,
}

/// Iterate log with doubling decimation past [`HISTORY_CAP`] entries; each
/// entry keeps its global iteration index.
#[derive(Debug, Clone)]
pub struct History {
    stride: usize,
    count: usize,
    cap: usize,
    entries: Vec<(usize, BlockVector)>,
}

impl History {
    pub fn new() -> Self {
        Self { stride: 1, count: 0, cap: HISTORY_CAP, entries: Vec::new() }
    }

    /// Never thins; for runs that must keep a dense trace past the cap.
    pub fn unbounded() -> Self {
        Self { stride: 1, count: 0, cap: usize::MAX, entries: Vec::new() }
    }

    pub fn push(&mut self, x: &BlockVector) {
        if self.count % self.stride == 0 {
            if self.entries.len() == self.cap {
                let mut kept = Vec::with_capacity(self.cap / 2 + 1);
                for (i, e) in self.entries.drain(..).enumerate() {
                    if i % 2 == 0 {
                        kept.push(e);
                    }
                }
                self.entries = kept;
                self.stride *= 2;
            }
            if self.count % self.stride == 0 {
                self.entries.push((self.count, x.clone()));
            }
        }
        self.count += 1;
    }

    /// True when every iterate offered so far was kept.
    pub fn is_dense(&self) -> bool {
        self.stride == 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, BlockVector)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(usize, BlockVector)> {
        self.entries
    }
}

impl Default for History {
    fn default() -> Self {
        Self::new()
    }
}

/// Outcome of a run: iterates (possibly thinned, each tagged with its
/// iteration index), per-iterate residuals, optional distances to a supplied
/// reference, and how the run ended.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub iterates: Vec<(usize, BlockVector)>,
    pub residuals: Vec<f64>,
    pub distances: Option<Vec<f64>>,
    pub iterations: usize,
    pub terminated_by: Termination,
}

impl RunResult {
    pub fn final_iterate(&self) -> &BlockVector {
        &self.iterates.last().expect("a run always stores x_0").1
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("a run always stores x_0")
    }
}

pub(crate) fn distances_for(iterates: &[(usize, BlockVector)], reference: &BlockVector) -> Vec<f64> {
    iterates.iter().map(|(_, x)| x.distance(reference)).collect()
}

fn guard(x: &BlockVector, k: usize) -> Result<()> {
    let n = x.norm();
    if !n.is_finite() || n > DIVERGENCE_GUARD {
        return Err(Error::Divergence { norm: n, at_iter: k });
    }
    Ok(())
}

/// Heavy Ball iteration `x_{k+1} = x_k - gamma*grad(x_k) + beta*(x_k - x_{k-1})`
/// with `x_{-1} = x_0`; `beta = 0` is plain gradient descent.
///
/// Residuals are gradient norms `||grad(x_k)||`.
pub fn run_heavy_ball(
    grad_f: impl Fn(&BlockVector) -> BlockVector,
    params: &SyncParams,
) -> Result<RunResult> {
    params.validate()?;
    let mut x = params.x0.clone();
    let mut x_prev = x.clone();
    let mut history = History::new();
    let mut residuals = Vec::new();
    let mut terminated = Termination::MaxIters;
    let mut k = 0usize;
    loop {
        guard(&x, k)?;
        let g = grad_f(&x);
        let res = g.norm();
        history.push(&x);
        if residuals.len() < history.len() {
            residuals.push(res);
        }
        if res <= params.stop_tol {
            terminated = Termination::Tolerance;
            break;
        }
        if k >= params.max_iters {
            break;
        }
        let mut next = x.clone();
        next.axpy(-params.gamma, &g);
        let momentum = x.sub(&x_prev);
        next.axpy(params.beta, &momentum);
        x_prev = x;
        x = next;
        k += 1;
    }
    let iterates = history.into_entries();
    let residuals = align_residuals(&iterates, residuals, |i| grad_f(i).norm());
    Ok(RunResult { iterates, residuals, distances: None, iterations: k, terminated_by: terminated })
}

/// Relaxed fixed-point iteration `x_{k+1} = x_k + eta_k (T x_k - x_k)` for a
/// nonexpansive map and a relaxation schedule `k -> eta_k in [0, 1]`.
///
/// Residuals are `||T x_k - x_k||`.
pub fn run_km(
    t_map: impl Fn(&BlockVector) -> BlockVector,
    eta_schedule: impl Fn(usize) -> f64,
    params: &SyncParams,
) -> Result<RunResult> {
    params.validate()?;
    let mut x = params.x0.clone();
    let mut history = History::new();
    let mut residuals = Vec::new();
    let mut terminated = Termination::MaxIters;
    let mut k = 0usize;
    loop {
        guard(&x, k)?;
        let tx = t_map(&x);
        let step = tx.sub(&x);
        let res = step.norm();
        history.push(&x);
        if residuals.len() < history.len() {
            residuals.push(res);
        }
        if res <= params.stop_tol {
            terminated = Termination::Tolerance;
            break;
        }
        if k >= params.max_iters {
            break;
        }
        let eta = eta_schedule(k);
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta_{k} = {eta} outside [0, 1]")));
        }
        x.axpy(eta, &step);
        k += 1;
    }
    let iterates = history.into_entries();
    let residuals = align_residuals(&iterates, residuals, |i| t_map(i).sub(i).norm());
    Ok(RunResult { iterates, residuals, distances: None, iterations: k, terminated_by: terminated })
}

/// Synchronous inertial forward-backward iteration:
/// `x_{k+1} = (1 - eta) x_k + eta * T_A(T_B x_k + beta (x_k - x_{k-1}))`.
///
/// This is the coordinator/agent dynamics under zero delay with every agent
/// updating each epoch; `beta = 0, eta = 1` is classic forward-backward.
pub fn run_sync_fbs(
    pair: &OperatorPair,
    params: &SyncParams,
    reference: Option<&BlockVector>,
) -> Result<RunResult> {
    params.validate()?;
    params.check_gamma_matches(pair)?;
    if params.beta >= 1.0 {
        return Err(Error::InvalidParameter(format!("inertia beta must be < 1, got {}", params.beta)));
    }
    let mut x = params.x0.clone();
    let mut x_prev = x.clone();
    let mut history = History::new();
    let mut residuals = Vec::new();
    let mut terminated = Termination::MaxIters;
    let mut k = 0usize;
    loop {
        guard(&x, k)?;
        let res = pair.residual(&x)?;
        history.push(&x);
        if residuals.len() < history.len() {
            residuals.push(res);
        }
        if res <= params.stop_tol {
            terminated = Termination::Tolerance;
            break;
        }
        if k >= params.max_iters {
            break;
        }
        let mut arg = pair.apply_forward_step(&x)?;
        let momentum = x.sub(&x_prev);
        arg.axpy(params.beta, &momentum);
        let mut z = BlockVector::zeros(pair.partition().clone());
        for i in 0..pair.num_blocks() {
            let zi = pair.backward.block(i).apply(pair.gamma, arg.block(i))?;
            z.set_block(i, &zi)?;
        }
        let mut next = x.clone();
        next.scale(1.0 - params.eta);
        next.axpy(params.eta, &z);
        x_prev = x;
        x = next;
        k += 1;
    }
    let iterates = history.into_entries();
    let residuals = align_residuals(&iterates, residuals, |i| pair.residual(i).unwrap_or(f64::NAN));
    let distances = reference.map(|r| distances_for(&iterates, r));
    Ok(RunResult { iterates, residuals, distances, iterations: k, terminated_by: terminated })
}

/// Cyclic block-coordinate KM baseline with zero staleness:
/// `x_{k+1}[i] = x_k[i] - eta (S x_k)[i]` for `i = k mod N`, other blocks
/// unchanged. The synchronous limit of the asynchronous coordinate method.
pub fn run_cyclic_coordinate_km(
    pair: &OperatorPair,
    params: &SyncParams,
    reference: Option<&BlockVector>,
) -> Result<RunResult> {
    params.validate()?;
    params.check_gamma_matches(pair)?;
    let n = pair.num_blocks();
    let mut x = params.x0.clone();
    let mut history = History::new();
    let mut residuals = Vec::new();
    let mut terminated = Termination::MaxIters;
    let mut k = 0usize;
    loop {
        guard(&x, k)?;
        let sx = pair.apply_s(&x)?;
        let res = sx.norm();
        history.push(&x);
        if residuals.len() < history.len() {
            residuals.push(res);
        }
        if res <= params.stop_tol {
            terminated = Termination::Tolerance;
            break;
        }
        if k >= params.max_iters {
            break;
        }
        let i = k % n;
        let updated: Vec<f64> = x
            .block(i)
            .iter()
            .zip(sx.block(i))
            .map(|(a, b)| a - params.eta * b)
            .collect();
        x.set_block(i, &updated)?;
        k += 1;
    }
    let iterates = history.into_entries();
    let residuals = align_residuals(&iterates, residuals, |i| pair.residual(i).unwrap_or(f64::NAN));
    let distances = reference.map(|r| distances_for(&iterates, r));
    Ok(RunResult { iterates, residuals, distances, iterations: k, terminated_by: terminated })
}

/// After thinning, recompute residuals for any stored iterate whose residual
/// was dropped along the way.
fn align_residuals(
    iterates: &[(usize, BlockVector)],
    dense: Vec<f64>,
    recompute: impl Fn(&BlockVector) -> f64,
) -> Vec<f64> {
    if dense.len() == iterates.len() {
        return dense;
    }
    iterates.iter().map(|(_, x)| recompute(x)).collect()
}
