//! Minimum-cost functional-split placement for virtualized RAN base stations.
//!
//! The crate covers the cost model ([`model`]), topology generation and
//! routing ([`topology`]), an exact branch-and-bound solver ([`exact`]), a
//! small reverse-mode autodiff library with the LSTM encoder/attention
//! decoder policy ([`nn`]), constrained policy-gradient training
//! ([`train`]), test-time search ([`infer`]) and the experiment harness
//! ([`experiment`]).

pub mod exact;
pub mod experiment;
pub mod features;
pub mod infer;
pub mod io;
pub mod model;
pub mod nn;
pub mod rng;
pub mod topology;
pub mod train;

pub use model::{
    evaluate, fixed_baseline_cost, penalization, split_flow, BaselineMode, ConstraintVector,
    EvalReport, Scenario, SplitAssignment, SplitOption, SystemParams,
};
