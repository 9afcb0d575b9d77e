//! Inertial, parallel and asynchronous forward-backward fixed-point solver.
//!
//! The crate provides:
//!
//! - block-structured vector arithmetic over a product space ([`block`]);
//! - forward/backward operator building blocks with empirical property
//!   probes ([`operators`]);
//! - synchronous reference engines: gradient descent, Heavy Ball, relaxed
//!   Krasnoselskii-Mann, forward-backward and the cyclic coordinate
//!   baseline ([`engines`]);
//! - the coordinator/agent protocol with write/read buffers, an inertial
//!   local solve, a trace-driven error-reconstruction oracle and delay-bound
//!   verification ([`protocol`]);
//! - a deterministic discrete-event scheduler with heterogeneous agent
//!   compute times and a bounded-delay starvation guard ([`scheduler`]);
//! - every computable constant of the convergence analysis and an ISS-style
//!   envelope checker ([`theory`]);
//! - a desk-scale micro-grid dispatch problem generator with building and
//!   battery prox-agents ([`dispatch`]);
//! - the experiment harness behind the `afb` command line tool ([`cli`]).

pub mod block;
pub mod cli;
pub mod config;
pub mod dispatch;
pub mod engines;
pub mod error;
pub mod operators;
pub mod protocol;
pub mod scheduler;
pub mod theory;

pub use block::{BlockPartition, BlockVector};
pub use error::{Error, Result};
pub use operators::{BackwardBlock, BackwardBlocks, ForwardOperator, OperatorPair};
