//! Bayesian consensus by repeated voting, made tractable.
//!
//! A group of agents must agree on a binary state of the world. Each holds a
//! private signal and, round after round, publicly votes for the state it
//! currently finds more likely, updating on everyone else's votes. This crate
//! simulates that process with the `O(n)`-per-round interval-bound algorithm
//! ([`engine`]), checks it against an exhaustive Bayesian oracle on finite
//! signal spaces ([`oracle`]), and runs seeded Monte Carlo experiments on
//! consensus, accuracy and learning ([`harness`]).
//!
//! ```
//! use consensus_core::{run_to_consensus, SignalModel};
//! use rand::SeedableRng;
//!
//! let model = SignalModel::hiring_gaussian();
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let result = run_to_consensus(&model, 11, 200, &mut rng).unwrap();
//! assert!(result.certified);
//! ```
//!
//! The guide under `book/` walks through the model and the algorithm; its
//! code listings are compiled as doctests of this crate.

pub mod config;
pub mod engine;
pub mod harness;
pub mod oracle;
pub mod signal_model;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use engine::{
    init_bounds, run_to_consensus, AgentBounds, EngineError, PublicBounds, RoundRecord, Simulation, SimulationResult,
    TieRule, Transcript,
};
pub use harness::{
    derive_trial_seed, run_experiment, ExperimentOutput, HarnessError, LearningRateEstimate, ResultRow, ResultTable,
};
pub use oracle::{
    check_equivalence, enumerate_vote_table, DiscreteInstance, EquivalenceReport, OracleError, VoteFunctionTable,
};
pub use signal_model::{Atom, LlrDistributions, ModelError, Signal, SignalModel, ValidationReport, WorldState};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/signal-models.md")]
    pub mod signal_models {}
    #[doc = include_str!("../../../book/src/engine.md")]
    pub mod engine {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    pub mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
