//! Experiment configuration: a JSON document with a strict schema (unknown
//! keys are hard errors) describing the problem instance, the algorithm
//! variants to run, their parameters and the simulated schedule.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::block::{BlockPartition, BlockVector};
use crate::dispatch::{self, DispatchProblem};
use crate::error::{Error, Result};
use crate::operators::{BackwardBlock, BackwardBlocks, ForwardOperator, OperatorPair};
use crate::scheduler::{AgentClass, AgentProfile, ScheduleConfig, ScheduleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sync,
    AsyncCoordinate,
    AsyncAggregated,
    AsyncInertial,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sync => "sync",
            Algorithm::AsyncCoordinate => "async_coordinate",
            Algorithm::AsyncAggregated => "async_aggregated",
            Algorithm::AsyncInertial => "async_inertial",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sync" => Ok(Algorithm::Sync),
            "async_coordinate" => Ok(Algorithm::AsyncCoordinate),
            "async_aggregated" => Ok(Algorithm::AsyncAggregated),
            "async_inertial" => Ok(Algorithm::AsyncInertial),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Desk-scale micro-grid dispatch instance.
    Dispatch {
        n_buildings: usize,
        horizon: usize,
        alpha1: f64,
        alpha2: f64,
        /// Building classes; defaults to the stock mix when omitted.
        #[serde(default)]
        classes: Option<Vec<AgentClass>>,
    },
    /// Synthetic separable quadratic with a coordinate box; the fixed point
    /// has a closed form, which makes it the theory test bed.
    QuadraticBox {
        block_dims: Vec<usize>,
        /// Per-coordinate curvatures (all > 0).
        curvatures: Vec<f64>,
        linear: Vec<f64>,
        box_lo: f64,
        box_hi: f64,
        /// Start iterate; defaults to the box midpoint.
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    /// Forward step size; `null` selects `1/L`.
    pub gamma: Option<f64>,
    pub eta: f64,
    /// Inertia for the inertial variant.
    pub beta: f64,
    pub stop_tol: f64,
    pub max_iters: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Explicit agent profiles; defaults to profiles derived from the
    /// problem (battery + building classes, or a stock cycle for synthetic
    /// problems).
    #[serde(default)]
    pub profiles: Option<Vec<AgentProfile>>,
    #[serde(default)]
    pub coordinator_service_s: f64,
    #[serde(default)]
    pub latency_s: f64,
    pub tau_epochs: usize,
    #[serde(default = "default_true")]
    pub starvation_guard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub sim_time_budget_s: f64,
    pub problem: ProblemConfig,
    pub algorithms: Vec<Algorithm>,
    pub params: ParamsConfig,
    pub schedule: ScheduleSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm is required".into()));
        }
        if self.sim_time_budget_s <= 0.0 {
            return Err(Error::Config("sim_time_budget_s must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.params.eta) {
            return Err(Error::Config(format!("eta must lie in [0,1], got {}", self.params.eta)));
        }
        if self.params.beta < 0.0 || self.params.beta >= 1.0 {
            return Err(Error::Config(format!("beta must lie in [0,1), got {}", self.params.beta)));
        }
        if self.params.stop_tol <= 0.0 {
            return Err(Error::Config("stop_tol must be > 0".into()));
        }
        match &self.problem {
            ProblemConfig::Dispatch { n_buildings, horizon, alpha1, alpha2, classes } => {
                if *n_buildings == 0 || *horizon == 0 {
                    return Err(Error::Config("dispatch needs n_buildings >= 1 and horizon >= 1".into()));
                }
                if *alpha1 <= 0.0 || *alpha2 <= 0.0 {
                    return Err(Error::Config("alpha1 and alpha2 must be > 0".into()));
                }
                if let Some(c) = classes {
                    if c.len() != *n_buildings {
                        return Err(Error::Config("classes length must equal n_buildings".into()));
                    }
                }
            }
            ProblemConfig::QuadraticBox { block_dims, curvatures, linear, box_lo, box_hi, x0 } => {
                let total: usize = block_dims.iter().sum();
                if block_dims.is_empty() || total == 0 {
                    return Err(Error::Config("quadratic_box needs nonempty blocks".into()));
                }
                if curvatures.len() != total || linear.len() != total {
                    return Err(Error::Config("curvatures and linear must have the total dimension".into()));
                }
                if curvatures.iter().any(|c| *c <= 0.0) {
                    return Err(Error::Config("curvatures must be > 0".into()));
                }
                if box_lo >= box_hi {
                    return Err(Error::Config("need box_lo < box_hi".into()));
                }
                if let Some(x) = x0 {
                    if x.len() != total {
                        return Err(Error::Config("x0 must have the total dimension".into()));
                    }
                }
            }
        }
        if let Some(profiles) = &self.schedule.profiles {
            if profiles.len() != self.num_agents() {
                return Err(Error::Config(format!(
                    "schedule lists {} profiles but the problem has {} agents",
                    profiles.len(),
                    self.num_agents()
                )));
            }
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        match &self.problem {
            ProblemConfig::Dispatch { n_buildings, .. } => n_buildings + 1,
            ProblemConfig::QuadraticBox { block_dims, .. } => block_dims.len(),
        }
    }

    /// Builds the operator pair, start iterate, reference solution and
    /// schedule profiles for this configuration.
    pub fn build(&self) -> Result<BuiltProblem> {
        self.validate()?;
        match &self.problem {
            ProblemConfig::Dispatch { n_buildings, horizon, alpha1, alpha2, classes } => {
                let problem = match classes {
                    Some(c) => dispatch::desk_problem_with_classes(c, *horizon, *alpha1, *alpha2, self.seed)?,
                    None => dispatch::desk_problem(*n_buildings, *horizon, *alpha1, *alpha2, self.seed)?,
                };
                let (l, mu) = problem.coupling_constants();
                let gamma = self.params.gamma.unwrap_or_else(|| problem.default_gamma());
                let pair = problem.operator_pair(gamma, 1e-11)?;
                let reference = dispatch::solve_reference(&problem, &pair, 1e-9)?;
                let x0 = problem.x0();
                let profiles = self
                    .schedule
                    .profiles
                    .clone()
                    .unwrap_or_else(|| problem.schedule_profiles());
                Ok(BuiltProblem { pair, x0, reference, l, mu, gamma, profiles, dispatch: Some(problem) })
            }
            ProblemConfig::QuadraticBox { block_dims, curvatures, linear, box_lo, box_hi, x0 } => {
                let partition = BlockPartition::new(block_dims.clone())?;
                let fwd = ForwardOperator::quadratic_diag(curvatures.clone(), linear.clone())?;
                let (l, mu) = (fwd.inv_cocoercivity(), fwd.strong_monotonicity());
                let gamma = self.params.gamma.unwrap_or(1.0 / l);
                let blocks = block_dims
                    .iter()
                    .map(|&d| BackwardBlock::BoxProjection { lo: vec![*box_lo; d], hi: vec![*box_hi; d] })
                    .collect();
                let pair = OperatorPair::new(partition.clone(), fwd, BackwardBlocks::new(blocks), gamma)?;
                // coordinate-wise KKT of the separable quadratic under a box
                let reference = BlockVector::new(
                    partition.clone(),
                    curvatures
                        .iter()
                        .zip(linear)
                        .map(|(c, q)| (-q / c).max(*box_lo).min(*box_hi))
                        .collect(),
                )?;
                let start = match x0 {
                    Some(v) => BlockVector::new(partition.clone(), v.clone())?,
                    None => BlockVector::from_fn(partition.clone(), |_| 0.5 * (box_lo + box_hi)),
                };
                let profiles = self.schedule.profiles.clone().unwrap_or_else(|| {
                    (0..block_dims.len())
                        .map(|i| match i % 4 {
                            0 => AgentProfile::battery(i),
                            1 => AgentProfile::small(i),
                            2 => AgentProfile::medium(i),
                            _ => AgentProfile::large(i),
                        })
                        .collect()
                });
                Ok(BuiltProblem { pair, x0: start, reference, l, mu, gamma, profiles, dispatch: None })
            }
        }
    }

    pub fn schedule_config(&self, profiles: Vec<AgentProfile>) -> ScheduleConfig {
        ScheduleConfig {
            profiles,
            coordinator_service_s: self.schedule.coordinator_service_s,
            latency_s: self.schedule.latency_s,
            seed: self.seed,
            tau_epochs: self.schedule.tau_epochs,
            starvation_guard: self.schedule.starvation_guard,
            mode: ScheduleMode::Simulated,
        }
    }
}

/// Everything a run needs, instantiated from a configuration.
pub struct BuiltProblem {
    pub pair: OperatorPair,
    pub x0: BlockVector,
    /// High-accuracy fixed point, the distance oracle.
    pub reference: BlockVector,
    pub l: f64,
    pub mu: f64,
    pub gamma: f64,
    pub profiles: Vec<AgentProfile>,
    pub dispatch: Option<Arc<DispatchProblem>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        r#"{
            "seed": 7,
            "output_dir": "out/test",
            "sim_time_budget_s": 5.0,
            "problem": {"kind": "dispatch", "n_buildings": 2, "horizon": 6, "alpha1": 0.01, "alpha2": 10000.0},
            "algorithms": ["sync", "async_inertial"],
            "params": {"gamma": null, "eta": 0.9, "beta": 0.99, "stop_tol": 1e-9, "max_iters": 5000},
            "schedule": {"tau_epochs": 24}
        }"#
        .to_string()
    }

    #[test]
    fn config_roundtrip_is_identity() {
        let cfg = ExperimentConfig::from_json(&sample_json()).unwrap();
        let json = cfg.to_json().unwrap();
        let cfg2 = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(json, cfg2.to_json().unwrap());
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let bad = sample_json().replace("\"seed\": 7,", "\"seed\": 7, \"sneaky\": 1,");
        let err = ExperimentConfig::from_json(&bad);
        assert!(matches!(err, Err(Error::Config(_))), "{err:?}");
    }

    #[test]
    fn misplaced_parameter_values_are_rejected() {
        let bad = sample_json().replace("\"eta\": 0.9", "\"eta\": 1.9");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = sample_json().replace("[\"sync\", \"async_inertial\"]", "[]");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn quadratic_box_reference_is_clamped_stationary_point() {
        let json = r#"{
            "seed": 1,
            "output_dir": "out/q",
            "sim_time_budget_s": 5.0,
            "problem": {"kind": "quadratic_box", "block_dims": [1, 2], "curvatures": [1.0, 2.0, 4.0],
                        "linear": [-10.0, 1.0, 2.0], "box_lo": -1.0, "box_hi": 1.0},
            "algorithms": ["async_aggregated"],
            "params": {"gamma": null, "eta": 0.5, "beta": 0.0, "stop_tol": 1e-10, "max_iters": 100},
            "schedule": {"tau_epochs": 16}
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let built = cfg.build().unwrap();
        assert_eq!(built.reference.as_slice(), &[1.0, -0.5, -0.5]);
        assert!(built.pair.residual(&built.reference).unwrap() <= 1e-12);
        assert_eq!(built.l, 4.0);
        assert_eq!(built.mu, 1.0);
    }
}
