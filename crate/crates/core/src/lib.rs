//! Threshold policies minimising the Age of Incorrect Information of a
//! symmetric N-state Markov source observed over an unreliable channel,
//! subject to a long-run transmission-rate budget.

pub mod cli;
pub mod constrained;
pub mod error;
pub mod mdp;
pub mod rvi;
pub mod simulator;
pub mod source;
pub mod sparse;
pub mod stationary;

pub use constrained::{mix_coefficient, solve_constrained, ConstrainedSolution, MixedPolicy};
pub use error::{Error, Result};
pub use mdp::{build_truncated_mdp, Grid, RateMode, SolverConfig, TruncatedMdp};
pub use rvi::{delta_v, extract_thresholds, rvi_solve, ThresholdPolicy, ValueFunction};
pub use source::{Action, SysState, SystemParams};
pub use stationary::{approx_rate, exact_rate, expected_aoii, StationarySolveResult};
