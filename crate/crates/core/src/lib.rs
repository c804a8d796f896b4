//! Contextual multinomial-logit bandits with non-linear utilities: choice
//! model, estimators, confidence geometry, assortment solvers, policies, a
//! simulator and an experiment harness.

pub mod analysis;
pub mod assortment;
pub mod choice;
pub mod confidence;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod model;
pub mod policy;
pub mod rng;
pub mod simulator;
pub mod utility;

pub use assortment::{best_assortment, oracle_optimal_reward, AssortmentSolver, SolverMethod};
pub use choice::{choice_probabilities, expected_reward, ChoiceDistribution};
pub use confidence::{BetaMode, GramState, Schedule};
pub use error::{Error, Result};
pub use estimation::{OptimizerConfig, PilotLoss, LinearizedLoss};
pub use experiment::{run_experiment, AggregateResult, ExperimentConfig};
pub use model::{Assortment, ChoiceRecord, ContextSet, ParamVector, RevenueVector};
pub use policy::{Policy, RoundDiagnostics};
pub use simulator::{run_episode, Environment, RunTrace};
pub use utility::{ModelKind, UtilityModel};
