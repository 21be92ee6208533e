//! Planning and simulating longest-chain attacks against a blockchain that
//! retargets difficulty after every block.
//!
//! - [`chain`]: blocks, the difficulty rule and timestamp-regime validation.
//! - [`verifiable`]: power schedules when timestamps must be truthful.
//! - [`unverifiable`]: claimed-interval schedules when timestamps are free.
//! - [`sim`]: executes a plan against the honest chain.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod sim;
pub mod unverifiable;
pub mod verifiable;

pub use chain::{
    build_honest_chain, validate_chain, Block, Chain, Difficulty, DomainError, MiningPower,
    TimeUnit, TimestampRegime, Verdict, Violation,
};
pub use sim::{
    simulate, verify_against_analytic, AttackOutcome, AttackScenario, DifficultyMode, HonestHeight,
    MismatchError, NaivePlan, Plan, PlanKind, RegimeKind, SimError,
};
pub use unverifiable::{
    solve_optimal_reports, ReportSchedule, SolverError, SolverOptions, UnverifiablePlan,
};
pub use verifiable::{BlocksNeeded, PowerSchedule, StrategyError, VerifiablePlan};
