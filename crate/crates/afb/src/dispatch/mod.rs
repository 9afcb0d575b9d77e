//! Desk-scale generator for the micro-grid load-sharing problem: synthetic
//! controllable buildings and a battery as prox-agents, the coupled tracking
//! objective as the forward operator, and a high-accuracy reference-solution
//! oracle.
//!
//! The decision vector is the stacked power trajectories
//! `p = (p_bess, p_1, ..., p_N)`, one block of `horizon` steps per agent.
//! Each agent's local objective condenses its dynamics into output space,
//! with output band constraints softened into quadratic penalties so every
//! prox is an internally solvable box-constrained problem.

mod reference;
mod serde_repr;

pub use reference::solve_reference;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockPartition, BlockVector};
use crate::error::{Error, Result};
use crate::operators::prox::{default_max_iter, prox_box_smooth};
use crate::operators::{power_iteration, BackwardBlock, BackwardBlocks, ForwardOperator, OperatorPair};
use crate::scheduler::{AgentClass, AgentProfile};

/// Default weight turning softened output-box constraints into quadratic
/// penalties.
pub const BAND_PENALTY: f64 = 1e3;

/// Box-constrained piecewise-quadratic local objective over one power block:
/// `g(p) = p'Hp/2 + q'p + (w/2) sum dist(y_i(p), band_i)^2 + indicator(p box)`
/// with tracked outputs `y = G p + y_free`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedAgent {
    pub h: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub g_map: DMatrix<f64>,
    pub y_free: DVector<f64>,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
    pub band_penalty: f64,
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
    grad_lip: f64,
}

impl CondensedAgent {
    pub fn new(
        h: DMatrix<f64>,
        lin: DVector<f64>,
        g_map: DMatrix<f64>,
        y_free: DVector<f64>,
        band_lo: Vec<f64>,
        band_hi: Vec<f64>,
        band_penalty: f64,
        p_lo: Vec<f64>,
        p_hi: Vec<f64>,
    ) -> Result<Self> {
        let dim = h.nrows();
        if h.ncols() != dim || lin.len() != dim || g_map.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: g_map.ncols() });
        }
        if g_map.nrows() != y_free.len() || band_lo.len() != y_free.len() || band_hi.len() != y_free.len() {
            return Err(Error::DimensionMismatch { expected: g_map.nrows(), got: y_free.len() });
        }
        if p_lo.len() != dim || p_hi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p_lo.len() });
        }
        let lambda_h = power_iteration(dim, |v| {
            let x = DVector::from_column_slice(v);
            (&h * x).as_slice().to_vec()
        }, 1e-8);
        let lambda_g = power_iteration(dim, |v| {
            let x = DVector::from_column_slice(v);
            let gx = &g_map * x;
            (g_map.transpose() * gx).as_slice().to_vec()
        }, 1e-8);
        let grad_lip = lambda_h + band_penalty * lambda_g;
        Ok(Self { h, lin, g_map, y_free, band_lo, band_hi, band_penalty, p_lo, p_hi, grad_lip })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn grad_lipschitz(&self) -> f64 {
        self.grad_lip
    }

    fn band_violation(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| {
            let v = y[i];
            if v > self.band_hi[i] {
                v - self.band_hi[i]
            } else if v < self.band_lo[i] {
                v - self.band_lo[i]
            } else {
                0.0
            }
        })
    }

    /// Smooth part of the local objective (the box indicator excluded).
    pub fn objective(&self, p: &[f64]) -> f64 {
        let pv = DVector::from_column_slice(p);
        let quad = 0.5 * (&self.h * &pv).dot(&pv) + self.lin.dot(&pv);
        let y = &self.g_map * &pv + &self.y_free;
        let viol = self.band_violation(&y);
        quad + 0.5 * self.band_penalty * viol.norm_squared()
    }

    /// Gradient of the smooth part into `out`.
    pub fn gradient(&self, p: &[f64], out: &mut [f64]) {
        let pv = DVector::from_column_slice(p);
        let mut g = &self.h * &pv + &self.lin;
        let y = &self.g_map * &pv + &self.y_free;
        let viol = self.band_violation(&y);
        if viol.iter().any(|v| *v != 0.0) {
            g += self.g_map.transpose() * (self.band_penalty * viol);
        }
        out.copy_from_slice(g.as_slice());
    }

    /// Generalized Hessian contribution at `p` (band pieces included), added
    /// into `out` which must be `dim x dim`.
    pub fn add_hessian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        *out += &self.h;
        let pv = DVector::from_column_slice(p);
        let y = &self.g_map * &pv + &self.y_free;
        for i in 0..y.len() {
            if y[i] > self.band_hi[i] || y[i] < self.band_lo[i] {
                let row = self.g_map.row(i);
                for a in 0..self.dim() {
                    for b in 0..self.dim() {
                        out[(a, b)] += self.band_penalty * row[a] * row[b];
                    }
                }
            }
        }
    }

    /// `prox_{gamma g}(v)` via the internal projected-gradient box solver.
    pub fn prox(&self, gamma: f64, v: &[f64], tol: f64) -> Result<Vec<f64>> {
        let grad = |u: &[f64], out: &mut [f64]| self.gradient(u, out);
        let max_iter = default_max_iter(self.dim(), self.grad_lip, gamma);
        prox_box_smooth(&grad, self.grad_lip, &self.p_lo, &self.p_hi, gamma, v, tol, max_iter)
    }
}

/// Controllable building: stable linear thermal dynamics, zone-temperature
/// tracking with a softened comfort band, hard thermal-input box, and a fixed
/// zone allocation mapping total electrical power to per-zone inputs.
///
/// Temperatures are measured as deviations from the nominal setpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingAgent {
    pub class: AgentClass,
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub x_init: DVector<f64>,
    pub horizon: usize,
    /// Thermal input box per zone, kW.
    pub u_min: f64,
    pub u_max: f64,
    /// Zone temperature reference (deviation), one value per step.
    pub y_ref: Vec<f64>,
    pub temp_penalty: f64,
    /// Comfort band around the reference, softened with [`BAND_PENALTY`].
    pub band: (f64, f64),
    pub band_penalty: f64,
    pub cop: f64,
    /// Baseline electrical power profile, kW.
    pub baseline: Vec<f64>,
    /// Disturbance input per step.
    pub w_profile: Vec<DVector<f64>>,
    /// Allocation of total thermal power across zones; sums to one.
    pub zone_share: Vec<f64>,
}

impl BuildingAgent {
    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_zones(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_states();
        let m = self.num_zones();
        if self.a.ncols() != n || self.b_u.nrows() != n || self.b_w.nrows() != n {
            return Err(Error::InvalidParameter("inconsistent building system dimensions".into()));
        }
        if self.c.nrows() != m || self.c.ncols() != n {
            return Err(Error::InvalidParameter("output map must produce one temperature per zone".into()));
        }
        let rho = power_iteration(n, |v| {
            let x = DVector::from_column_slice(v);
            let ax = &self.a * x;
            (self.a.transpose() * ax).as_slice().to_vec()
        }, 1e-8)
        .sqrt();
        if rho >= 1.0 {
            return Err(Error::InvalidParameter(format!("building dynamics unstable: ||A|| = {rho}")));
        }
        if self.u_min > self.u_max {
            return Err(Error::InvalidParameter("need u_min <= u_max".into()));
        }
        if self.y_ref.len() != self.horizon || self.baseline.len() != self.horizon || self.w_profile.len() != self.horizon {
            return Err(Error::InvalidParameter("profiles must have horizon length".into()));
        }
        let share_sum: f64 = self.zone_share.iter().sum();
        if self.zone_share.len() != m || (share_sum - 1.0).abs() > 1e-9 || self.zone_share.iter().any(|s| *s <= 0.0) {
            return Err(Error::InvalidParameter("zone shares must be positive and sum to one".into()));
        }
        Ok(())
    }

    /// Condenses the dynamics into output space over the power trajectory:
    /// `y = G p + y_free`, `u_j(t) = cop * share_j * p(t)`.
    pub fn condense(&self) -> Result<CondensedAgent> {
        self.validate()?;
        let t_h = self.horizon;
        let m = self.num_zones();
        let share = DVector::from_column_slice(&self.zone_share);
        // per-unit-power input direction in state space
        let b_dir = &self.b_u * (self.cop * &share);

        // powers of A applied to b_dir and to the free response
        let mut g_map = DMatrix::zeros(m * t_h, t_h);
        let mut y_free = DVector::zeros(m * t_h);
        let mut impulse: Vec<DVector<f64>> = Vec::with_capacity(t_h); // A^j b_dir
        let mut cur = b_dir.clone();
        for _ in 0..t_h {
            impulse.push(cur.clone());
            cur = &self.a * cur;
        }
        let mut state = self.x_init.clone();
        for t in 1..=t_h {
            // x(t) = A x(t-1) + b_dir p(t-1) + B_w w(t-1)
            state = &self.a * &state + &self.b_w * &self.w_profile[t - 1];
            let free_out = &self.c * &state;
            for z in 0..m {
                y_free[(t - 1) * m + z] = free_out[z];
            }
            for s in 0..t {
                let out = &self.c * &impulse[t - 1 - s];
                for z in 0..m {
                    g_map[((t - 1) * m + z, s)] = out[z];
                }
            }
        }

        let mut y_ref_stacked = DVector::zeros(m * t_h);
        for t in 0..t_h {
            for z in 0..m {
                y_ref_stacked[t * m + z] = self.y_ref[t];
            }
        }
        let h = self.temp_penalty * g_map.transpose() * &g_map;
        let lin = self.temp_penalty * g_map.transpose() * (&y_free - &y_ref_stacked);

        let band_lo: Vec<f64> = (0..m * t_h).map(|i| y_ref_stacked[i] + self.band.0).collect();
        let band_hi: Vec<f64> = (0..m * t_h).map(|i| y_ref_stacked[i] + self.band.1).collect();

        // u_j(t) in [u_min, u_max] for every zone pins the power box
        let p_lo = self
            .zone_share
            .iter()
            .map(|s| self.u_min / (self.cop * s))
            .fold(f64::NEG_INFINITY, f64::max);
        let p_hi = self
            .zone_share
            .iter()
            .map(|s| self.u_max / (self.cop * s))
            .fold(f64::INFINITY, f64::min);

        CondensedAgent::new(
            h,
            lin,
            g_map,
            y_free,
            band_lo,
            band_hi,
            self.band_penalty,
            vec![p_lo; t_h],
            vec![p_hi; t_h],
        )
    }
}

/// Grid-connected battery: single-state SOC dynamics, SOC reference tracking
/// with a softened capacity band and a hard power box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryAgent {
    pub a: f64,
    pub b: f64,
    pub soc_init: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Power box in kW (negative = discharge).
    pub p_min: f64,
    pub p_max: f64,
    pub soc_ref: f64,
    pub soc_penalty: f64,
    pub band_penalty: f64,
    pub horizon: usize,
}

impl BatteryAgent {
    pub fn validate(&self) -> Result<()> {
        if self.soc_min >= self.soc_max {
            return Err(Error::InvalidParameter("need soc_min < soc_max".into()));
        }
        if self.p_min >= self.p_max {
            return Err(Error::InvalidParameter("need p_min < p_max".into()));
        }
        Ok(())
    }

    /// `SOC(t) = a^t soc_init + sum_{s<t} b a^(t-1-s) p(s)`.
    pub fn condense(&self) -> Result<CondensedAgent> {
        self.validate()?;
        let t_h = self.horizon;
        let mut g_map = DMatrix::zeros(t_h, t_h);
        let mut y_free = DVector::zeros(t_h);
        let mut pow_a = vec![1.0; t_h + 1];
        for j in 1..=t_h {
            pow_a[j] = pow_a[j - 1] * self.a;
        }
        for t in 1..=t_h {
            y_free[t - 1] = pow_a[t] * self.soc_init;
            for s in 0..t {
                g_map[(t - 1, s)] = self.b * pow_a[t - 1 - s];
            }
        }
        let ref_vec = DVector::from_element(t_h, self.soc_ref);
        let h = self.soc_penalty * g_map.transpose() * &g_map;
        let lin = self.soc_penalty * g_map.transpose() * (&y_free - &ref_vec);
        CondensedAgent::new(
            h,
            lin,
            g_map,
            y_free,
            vec![self.soc_min; t_h],
            vec![self.soc_max; t_h],
            self.band_penalty,
            vec![self.p_min; t_h],
            vec![self.p_max; t_h],
        )
    }
}

/// The coupled dispatch problem: one battery plus `N` buildings sharing a
/// tracking objective on the aggregate flexibility.
#[derive(Debug, Clone)]
pub struct DispatchProblem {
    pub battery: BatteryAgent,
    pub buildings: Vec<BuildingAgent>,
    pub r: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub horizon: usize,
    partition: Arc<BlockPartition>,
    condensed: Vec<CondensedAgent>,
    /// Baselines per block; the battery's flexibility is its raw power.
    baselines: Vec<Vec<f64>>,
}

impl DispatchProblem {
    pub fn new(
        battery: BatteryAgent,
        buildings: Vec<BuildingAgent>,
        r: Vec<f64>,
        alpha1: f64,
        alpha2: f64,
    ) -> Result<Self> {
        let horizon = battery.horizon;
        if buildings.iter().any(|b| b.horizon != horizon) || r.len() != horizon {
            return Err(Error::InvalidParameter("all horizons must agree".into()));
        }
        if alpha1 <= 0.0 || alpha2 <= 0.0 {
            return Err(Error::InvalidParameter("alpha1 and alpha2 must be > 0".into()));
        }
        let n_agents = buildings.len() + 1;
        let partition = BlockPartition::uniform(n_agents, horizon)?;
        let mut condensed = Vec::with_capacity(n_agents);
        condensed.push(battery.condense()?);
        let mut baselines = vec![vec![0.0; horizon]];
        for b in &buildings {
            condensed.push(b.condense()?);
            baselines.push(b.baseline.clone());
        }
        Ok(Self { battery, buildings, r, alpha1, alpha2, horizon, partition, condensed, baselines })
    }

    pub fn num_agents(&self) -> usize {
        self.buildings.len() + 1
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    pub fn condensed(&self, agent: usize) -> &CondensedAgent {
        &self.condensed[agent]
    }

    pub fn baseline(&self, agent: usize) -> &[f64] {
        &self.baselines[agent]
    }

    /// `L = alpha2 (N+1) + alpha1` and `mu = alpha1` of the coupling
    /// objective.
    pub fn coupling_constants(&self) -> (f64, f64) {
        (self.alpha2 * self.num_agents() as f64 + self.alpha1, self.alpha1)
    }

    /// Gradient of the coupling objective
    /// `f(p) = (alpha2/2) sum_t (p_b(t) + sum_i (p_i(t) - phat_i(t)) - r(t))^2
    ///        + (alpha1/2) (||p_b||^2 + sum_i ||p_i - phat_i||^2)`.
    pub fn coupling_gradient(&self, p: &BlockVector) -> Result<BlockVector> {
        if p.partition().as_ref() != self.partition.as_ref() {
            return Err(Error::DimensionMismatch {
                expected: self.partition.total_dim(),
                got: p.dim(),
            });
        }
        let n_agents = self.num_agents();
        let t_h = self.horizon;
        let mut imbalance = vec![0.0; t_h];
        for agent in 0..n_agents {
            let block = p.block(agent);
            let base = &self.baselines[agent];
            for t in 0..t_h {
                imbalance[t] += block[t] - base[t];
            }
        }
        for t in 0..t_h {
            imbalance[t] -= self.r[t];
        }
        let mut grad = BlockVector::zeros(self.partition.clone());
        for agent in 0..n_agents {
            let block = p.block(agent);
            let base = &self.baselines[agent];
            let out: Vec<f64> = (0..t_h)
                .map(|t| self.alpha2 * imbalance[t] + self.alpha1 * (block[t] - base[t]))
                .collect();
            grad.set_block(agent, &out)?;
        }
        Ok(grad)
    }

    /// Step size `1/L`, the default for the proximal-gradient engines.
    pub fn default_gamma(&self) -> f64 {
        1.0 / self.coupling_constants().0
    }

    /// Builds the forward/backward operator pair at step `gamma` with the
    /// given inner prox tolerance.
    pub fn operator_pair(self: &Arc<Self>, gamma: f64, inner_tol: f64) -> Result<OperatorPair> {
        let (l, mu) = self.coupling_constants();
        let me = self.clone();
        let forward = ForwardOperator::from_fn(
            move |x: &[f64]| {
                let xv = BlockVector::new(me.partition.clone(), x.to_vec()).expect("dimension checked");
                me.coupling_gradient(&xv).expect("conforming vector").into_vec()
            },
            l,
            mu,
        )?;
        let mut blocks = Vec::with_capacity(self.num_agents());
        for agent in 0..self.num_agents() {
            let me = self.clone();
            blocks.push(BackwardBlock::Custom {
                dim: self.horizon,
                map: Arc::new(move |g: f64, v: &[f64]| {
                    me.condensed[agent].prox(g, v, inner_tol).expect("inner prox solve")
                }),
            });
        }
        OperatorPair::new(self.partition.clone(), forward, BackwardBlocks::new(blocks), gamma)
    }

    /// Start iterate: battery idle, buildings at baseline.
    pub fn x0(&self) -> BlockVector {
        let mut x = BlockVector::zeros(self.partition.clone());
        for agent in 1..self.num_agents() {
            x.set_block(agent, &self.baselines[agent]).expect("baseline has horizon length");
        }
        x
    }

    /// Compute-time profiles: battery first, then the buildings' classes.
    pub fn schedule_profiles(&self) -> Vec<AgentProfile> {
        let mut profiles = vec![AgentProfile::battery(0)];
        for (i, b) in self.buildings.iter().enumerate() {
            let p = match b.class {
                AgentClass::Small => AgentProfile::small(i + 1),
                AgentClass::Medium => AgentProfile::medium(i + 1),
                AgentClass::Large => AgentProfile::large(i + 1),
                AgentClass::Battery | AgentClass::Custom => AgentProfile::small(i + 1),
            };
            profiles.push(p);
        }
        profiles
    }

    /// Full smooth objective (coupling + local smooth parts); used by the
    /// reference solver and the grid oracles.
    pub fn objective(&self, p: &BlockVector) -> f64 {
        let t_h = self.horizon;
        let mut imbalance = vec![0.0; t_h];
        for agent in 0..self.num_agents() {
            let block = p.block(agent);
            let base = &self.baselines[agent];
            for t in 0..t_h {
                imbalance[t] += block[t] - base[t];
            }
        }
        let mut value = 0.0;
        for t in 0..t_h {
            let e = imbalance[t] - self.r[t];
            value += 0.5 * self.alpha2 * e * e;
        }
        for agent in 0..self.num_agents() {
            let block = p.block(agent);
            let base = &self.baselines[agent];
            for t in 0..t_h {
                let d = block[t] - base[t];
                value += 0.5 * self.alpha1 * d * d;
            }
            value += self.condensed[agent].objective(block);
        }
        value
    }
}

/// The local prox of a controllable building over its power block.
pub fn building_prox(agent: &BuildingAgent, gamma: f64, v: &[f64], tol: f64) -> Result<Vec<f64>> {
    agent.condense()?.prox(gamma, v, tol)
}

/// The local prox of the battery over its power block.
pub fn battery_prox(agent: &BatteryAgent, gamma: f64, v: &[f64], tol: f64) -> Result<Vec<f64>> {
    agent.condense()?.prox(gamma, v, tol)
}

fn smooth_profile(rng: &mut ChaCha8Rng, len: usize, amplitude: f64, offset: f64) -> Vec<f64> {
    let harmonics: Vec<(f64, f64)> = (1..=3)
        .map(|_| (rng.random_range(0.3..1.0), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    (0..len)
        .map(|t| {
            let x = t as f64 / len as f64;
            let mut v = offset;
            for (h, (a, phi)) in harmonics.iter().enumerate() {
                v += amplitude * a / (h + 1) as f64 * (std::f64::consts::TAU * (h + 1) as f64 * x + phi).sin();
            }
            v
        })
        .collect()
}

/// Random stable building of the given class: eigenvalues of `A` in
/// `[0.7, 0.98]`, desk-scale state/input counts (small 3/1, medium 5/2,
/// large 6/2), deterministic per seed.
pub fn generate_building(class: AgentClass, horizon: usize, seed: u64) -> Result<BuildingAgent> {
    let (n, m, u_max) = match class {
        AgentClass::Small => (3usize, 1usize, 10.0),
        AgentClass::Medium => (5, 2, 25.0),
        AgentClass::Large => (6, 2, 40.0),
        AgentClass::Battery | AgentClass::Custom => {
            return Err(Error::InvalidParameter("building classes are small, medium, large".into()))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A = Q' diag(lambda) Q with a random orthogonal Q
    let gauss = DMatrix::from_fn(n, n, |_, _| standard_normal(&mut rng));
    let q = gauss.qr().q();
    let lambdas = DVector::from_fn(n, |_, _| rng.random_range(0.7..0.98));
    let a = &q * DMatrix::from_diagonal(&lambdas) * q.transpose();
    let b_u = DMatrix::from_fn(n, m, |_, _| 0.1 * standard_normal(&mut rng));
    let b_w = DMatrix::from_fn(n, 1, |_, _| 0.05 * standard_normal(&mut rng));
    let c = DMatrix::from_fn(m, n, |_, _| standard_normal(&mut rng));
    let x_init = DVector::from_fn(n, |_, _| 0.1 * standard_normal(&mut rng));
    let w_profile: Vec<DVector<f64>> = smooth_profile(&mut rng, horizon, 1.0, 0.0)
        .into_iter()
        .map(|w| DVector::from_element(1, w))
        .collect();
    let p_cap = u_max * m as f64 / 3.0; // electrical ceiling at COP 3
    let baseline = smooth_profile(&mut rng, horizon, 0.1 * p_cap, 0.5 * p_cap);
    Ok(BuildingAgent {
        class,
        a,
        b_u,
        b_w,
        c,
        x_init,
        horizon,
        u_min: 0.0,
        u_max,
        y_ref: vec![0.0; horizon],
        temp_penalty: 1.0,
        band: (-2.0, 2.0),
        band_penalty: BAND_PENALTY,
        cop: 3.0,
        baseline,
        w_profile,
        zone_share: vec![1.0 / m as f64; m],
    })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Default desk-scale battery: 50 kWh at +/-40 kW, hourly steps; sized so
/// the SOC limits genuinely bind under tracking duty.
pub fn default_battery(horizon: usize) -> BatteryAgent {
    BatteryAgent {
        a: 0.999,
        b: 1.0 / 50.0,
        soc_init: 0.5,
        soc_min: 0.1,
        soc_max: 1.0,
        p_min: -40.0,
        p_max: 40.0,
        soc_ref: 0.8,
        soc_penalty: 4.0,
        band_penalty: BAND_PENALTY,
        horizon,
    }
}

/// Building class mix mirroring the case-study fleets: mostly small, some
/// medium, a large one from ten buildings up.
pub fn default_class_mix(n_buildings: usize) -> Vec<AgentClass> {
    (0..n_buildings)
        .map(|i| {
            if n_buildings >= 10 && i == n_buildings - 1 {
                AgentClass::Large
            } else if 5 * (i + 1) <= 2 * n_buildings {
                AgentClass::Medium
            } else {
                AgentClass::Small
            }
        })
        .collect()
}

/// Desk-scale instance: `n_buildings` synthetic buildings plus the battery,
/// a band-limited tracking signal scaled so the fleet can almost track it.
pub fn desk_problem(
    n_buildings: usize,
    horizon: usize,
    alpha1: f64,
    alpha2: f64,
    seed: u64,
) -> Result<Arc<DispatchProblem>> {
    desk_problem_with_classes(&default_class_mix(n_buildings), horizon, alpha1, alpha2, seed)
}

pub fn desk_problem_with_classes(
    classes: &[AgentClass],
    horizon: usize,
    alpha1: f64,
    alpha2: f64,
    seed: u64,
) -> Result<Arc<DispatchProblem>> {
    if classes.is_empty() {
        return Err(Error::InvalidParameter("need at least one building".into()));
    }
    let battery = default_battery(horizon);
    let mut buildings = Vec::with_capacity(classes.len());
    for (i, class) in classes.iter().enumerate() {
        buildings.push(generate_building(*class, horizon, seed.wrapping_add(1 + i as u64))?);
    }
    // fleet flexibility: battery range plus building half-boxes around baseline
    let mut flex = battery.p_max;
    for b in &buildings {
        let cap = b.u_max * b.num_zones() as f64 / b.cop;
        flex += 0.5 * cap;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
    let mut r = Vec::with_capacity(horizon);
    let harmonics: Vec<(f64, f64)> = (1..=5)
        .map(|_| (rng.random_range(0.2..1.0), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    for t in 0..horizon {
        let x = t as f64 / horizon as f64;
        let mut v = 0.0;
        for (h, (amp, phi)) in harmonics.iter().enumerate() {
            v += amp / (h + 1) as f64 * (std::f64::consts::TAU * (h + 1) as f64 * x + phi).sin();
        }
        v += 0.05 * standard_normal(&mut rng);
        r.push(0.6 * flex * v);
    }
    Ok(Arc::new(DispatchProblem::new(battery, buildings, r, alpha1, alpha2)?))
}
