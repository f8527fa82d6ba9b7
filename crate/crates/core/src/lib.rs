//! Flexibility design: choose at most `K` arcs of a bipartite resource/demand
//! network, before demand is revealed, to maximize expected allocation profit
//! minus installation cost.
//!
//! The crate provides an exact allocation oracle ([`oracle`]), the greedy and
//! stochastic-programming heuristics ([`heuristics`]), the arc-adding MDP
//! ([`env`]), a small dense network library ([`nn`]), PPO training ([`ppo`])
//! and first-order meta-learning across budgets ([`meta`]).

pub mod env;
pub mod error;
pub mod heuristics;
pub mod instance;
pub mod meta;
pub mod nn;
pub mod oracle;
mod par;
pub mod ppo;
pub mod rng;

pub use error::{Error, Result};
pub use instance::{
    build_auto_scenario, build_fashion_scenario, fctp_to_fdp, load_instance, sample_demand, save_instance,
    DemandModel, DemandSample, FlexNetwork, Instance, Matrix, SampleSet,
};
pub use oracle::{
    estimate_expected_profit, fdp_objective_estimate, full_flex_profit, lp_upper_bound, profit_subgradient,
    solve_profit, EstimatorConfig, FlowSolution,
};
