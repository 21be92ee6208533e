//! Attack planning when timestamps are unverifiable.
//!
//! The adversary mines every block at full capacity and instead chooses the
//! intervals it *claims* between blocks, since those drive difficulty. With
//! claimed intervals `T_1..T_{N-1}` the `N` mined blocks take
//!
//! ```text
//! (1/M_a) * (1 + 1/T_1 + 1/(T_1 T_2) + ... + 1/(T_1 ... T_{N-1}))
//! ```
//!
//! subject to all claims, including the claimed time `T_N` of the last mined
//! block, fitting between the fork (`t_1`) and the honest clock at reveal
//! (`t_N`): `T_1 + ... + T_{N-1} + T_N = N - 1`. The bracketed factor, the
//! *reduced objective*, does not depend on `M_a`. The last block is claimed
//! to have been found almost instantly (see [`DEFAULT_TERMINAL_CLAIM`]), so
//! the remaining claims share a budget of `N - 1 - T_N`.
//!
//! The optimum is characterised by the stationarity conditions
//!
//! ```text
//! T_x (T_x - T_{x+1}) = T_{x-1} - T_x      for x = 2..N-2
//! T_{N-1}^2           = T_{N-2} - T_{N-1}
//! sum T_i             = N - 1 - T_N
//! ```
//!
//! [`solve_optimal_reports`] minimises the objective directly and polishes
//! the result on this system; [`shoot_optimal_reports`] solves the system by
//! shooting on `T_{N-1}`; [`brute_force_reports`] searches a simplex grid.

mod brute_force;
mod shooting;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{positive, DomainError, MiningPower};

pub use brute_force::brute_force_reports;
pub use shooting::shoot_optimal_reports;
pub use solver::{solve_optimal_reports, solve_optimal_reports_with, SolverOptions};

/// Claimed duration of the final mined block when no honest-belief cap is
/// configured, in time units.
pub const DEFAULT_TERMINAL_CLAIM: f64 = 1e-9;

/// Absolute tolerance on `sum T_i` for schedules loaded from outside.
const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("at least two blocks are required, got {n}")]
    TooFewBlocks { n: u64 },
    #[error(
        "solver did not converge for N = {n} after {iterations} iterations \
         (FOC residual norm {residual_norm:e})"
    )]
    NonConvergence {
        n: u64,
        iterations: usize,
        residual_norm: f64,
        best: Vec<f64>,
    },
    #[error("brute force is limited to N in [3, 5], got {n}")]
    BruteForceRange { n: u64 },
    #[error("brute force grid step must be in (0, 1e-2], got {step}")]
    GridStep { step: f64 },
    #[error("capacity {capacity} cannot outpace the honest network (needs > 1)")]
    CapacityTooLow { capacity: f64 },
    #[error("honest-belief cap {cap} leaves no room for the claimed intervals")]
    CapInfeasible { cap: f64 },
    #[error("report schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// `1 + 1/T_1 + 1/(T_1 T_2) + ...`, accumulated with a running product.
pub fn reduced_objective(intervals: &[f64]) -> Result<f64, SolverError> {
    let mut total = 1.0;
    let mut inverse_product = 1.0;
    for &t in intervals {
        inverse_product /= positive("claimed interval", t)?;
        total += inverse_product;
    }
    Ok(total)
}

/// Residuals of the stationarity system for claimed intervals
/// `T_1..T_{N-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocResiduals {
    /// `T_x (T_x - T_{x+1}) - (T_{x-1} - T_x)` for `x = 2..N-2`.
    pub recurrence: Vec<f64>,
    /// `T_{N-1}^2 - (T_{N-2} - T_{N-1})`; absent for `N = 2`.
    pub boundary: Option<f64>,
    /// `sum T_i - budget`.
    pub constraint: f64,
}

impl FocResiduals {
    pub fn norm(&self) -> f64 {
        self.recurrence
            .iter()
            .chain(self.boundary.iter())
            .chain(std::iter::once(&self.constraint))
            .map(|r| r * r)
            .sum::<f64>()
            .sqrt()
    }
}

/// Residuals with the full budget `N - 1` (terminal claim taken as zero).
pub fn foc_residuals(intervals: &[f64]) -> FocResiduals {
    residuals_with_budget(intervals, intervals.len() as f64)
}

pub(crate) fn residuals_with_budget(intervals: &[f64], budget: f64) -> FocResiduals {
    let constraint = intervals.iter().sum::<f64>() - budget;
    let m = intervals.len();
    if m < 2 {
        return FocResiduals {
            recurrence: Vec::new(),
            boundary: None,
            constraint,
        };
    }
    let t = |i: usize| if i < m { intervals[i] } else { 0.0 };
    // 0-based: equation for interval i (1..m-1) couples i-1, i, i+1.
    let eq = |i: usize| t(i) * (t(i) - t(i + 1)) - (t(i - 1) - t(i));
    FocResiduals {
        recurrence: (1..m - 1).map(eq).collect(),
        boundary: Some(eq(m - 1)),
        constraint,
    }
}

/// Claimed intervals for an `N`-block unverifiable attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReportScheduleDoc", into = "ReportScheduleDoc")]
pub struct ReportSchedule {
    n: u64,
    claimed_intervals: Vec<f64>,
    terminal_claim: f64,
    budget: f64,
    honest_belief_cap: Option<f64>,
    reduced_objective: f64,
    foc_residual_norm: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportScheduleDoc {
    n: u64,
    claimed_intervals: Vec<f64>,
    terminal_claim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    honest_belief_cap: Option<f64>,
    reduced_objective: f64,
    foc_residual_norm: f64,
    seed: u64,
}

impl TryFrom<ReportScheduleDoc> for ReportSchedule {
    type Error = SolverError;

    fn try_from(doc: ReportScheduleDoc) -> Result<Self, Self::Error> {
        if doc.n as usize != doc.claimed_intervals.len() + 1 {
            return Err(SolverError::Schedule(format!(
                "n = {} needs {} claimed intervals, found {}",
                doc.n,
                doc.n.saturating_sub(1),
                doc.claimed_intervals.len()
            )));
        }
        let schedule = ReportSchedule::build(
            doc.claimed_intervals,
            doc.terminal_claim,
            doc.honest_belief_cap,
            doc.seed,
        )?;
        if (schedule.reduced_objective - doc.reduced_objective).abs()
            > 1e-9 * schedule.reduced_objective
        {
            return Err(SolverError::Schedule(format!(
                "stated reduced objective {} does not match the intervals ({})",
                doc.reduced_objective, schedule.reduced_objective
            )));
        }
        Ok(schedule)
    }
}

impl From<ReportSchedule> for ReportScheduleDoc {
    fn from(s: ReportSchedule) -> Self {
        ReportScheduleDoc {
            n: s.n,
            claimed_intervals: s.claimed_intervals,
            terminal_claim: s.terminal_claim,
            honest_belief_cap: s.honest_belief_cap,
            reduced_objective: s.reduced_objective,
            foc_residual_norm: s.foc_residual_norm,
            seed: s.seed,
        }
    }
}

impl ReportSchedule {
    /// A schedule from explicit claims with the default near-instant
    /// terminal claim. The claims should sum to `N - 1 - terminal`; claims
    /// that use the whole `N - 1` are accepted too, and the terminal claim is
    /// then carved out of the last interval when timestamps are laid down.
    pub fn new(claimed_intervals: Vec<f64>) -> Result<Self, SolverError> {
        Self::build(claimed_intervals, DEFAULT_TERMINAL_CLAIM, None, 0)
    }

    /// The claims share `N - 1 - terminal_claim`. With a cap the terminal
    /// claim is `d_N / cap`, otherwise a fixed near-zero value.
    pub(crate) fn build(
        claimed_intervals: Vec<f64>,
        terminal_claim: f64,
        honest_belief_cap: Option<f64>,
        seed: u64,
    ) -> Result<Self, SolverError> {
        let n = claimed_intervals.len() as u64 + 1;
        if n < 2 {
            return Err(SolverError::TooFewBlocks { n });
        }
        let terminal_claim = positive("terminal claim", terminal_claim)?;
        if let Some(cap) = honest_belief_cap {
            positive("honest-belief cap", cap)?;
        }
        let budget = (n - 1) as f64 - terminal_claim;
        if !(budget > 0.0) {
            return Err(SolverError::Schedule(format!(
                "terminal claim {terminal_claim} leaves no time for the other blocks"
            )));
        }
        let reduced = reduced_objective(&claimed_intervals)?;
        let sum: f64 = claimed_intervals.iter().sum();
        if (sum - budget).abs() > BUDGET_TOL * n as f64 {
            return Err(SolverError::Schedule(format!(
                "claimed intervals sum to {sum}, expected {budget}"
            )));
        }
        let foc_residual_norm = residuals_with_budget(&claimed_intervals, budget).norm();
        Ok(ReportSchedule {
            n,
            claimed_intervals,
            terminal_claim,
            budget,
            honest_belief_cap,
            reduced_objective: reduced,
            foc_residual_norm,
            seed,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn claimed_intervals(&self) -> &[f64] {
        &self.claimed_intervals
    }

    pub fn terminal_claim(&self) -> f64 {
        self.terminal_claim
    }

    pub fn honest_belief_cap(&self) -> Option<f64> {
        self.honest_belief_cap
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn reduced_objective(&self) -> f64 {
        self.reduced_objective
    }

    pub fn foc_residual_norm(&self) -> f64 {
        self.foc_residual_norm
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn foc_residuals(&self) -> FocResiduals {
        residuals_with_budget(&self.claimed_intervals, self.budget)
    }

    /// Reported timestamps of blocks `1..=N+1` when the first block is
    /// stamped `first`. Block `N + 1` is the revealed tip and lands exactly
    /// on `first + N - 1`; the terminal claim is the gap between blocks `N`
    /// and `N + 1`.
    pub fn reported_timestamps(&self, first: f64) -> Vec<f64> {
        let m = self.claimed_intervals.len();
        let mut stamps = Vec::with_capacity(m + 2);
        let mut t = first;
        stamps.push(t);
        for &interval in &self.claimed_intervals[..m - 1] {
            t += interval;
            stamps.push(t);
        }
        let used = self.claimed_intervals.iter().sum::<f64>() + self.terminal_claim;
        let tip = first + used.min((self.n - 1) as f64);
        stamps.push(tip - self.terminal_claim);
        stamps.push(tip);
        stamps
    }

    /// The intervals the chain actually carries once the terminal claim is
    /// laid down. These equal the claims unless the claims overrun the
    /// budget, in which case the last one shrinks.
    pub fn executed_intervals(&self) -> Vec<f64> {
        self.reported_timestamps(1.0)
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect()
    }
}

/// Mining time of the schedule at capacity `m_a`.
pub fn unverifiable_objective(
    schedule: &ReportSchedule,
    m_a: MiningPower,
) -> Result<f64, SolverError> {
    let m = m_a.get();
    if m <= 1.0 {
        return Err(SolverError::CapacityTooLow { capacity: m });
    }
    Ok(schedule.reduced_objective() / m)
}

/// `N - T*(N)`: the largest head start an optimal `N`-block attack
/// overcomes.
pub fn max_deficit_unverifiable(m_a: MiningPower, n: u64) -> Result<f64, SolverError> {
    let schedule = solve_optimal_reports(n)?;
    Ok(n as f64 - unverifiable_objective(&schedule, m_a)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UnverifiablePlanDoc", into = "UnverifiablePlanDoc")]
pub struct UnverifiablePlan {
    capacity: f64,
    schedule: ReportSchedule,
    actual_duration: f64,
    max_deficit: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnverifiablePlanDoc {
    capacity: f64,
    schedule: ReportSchedule,
    actual_duration: f64,
    reduced_objective: f64,
    max_deficit: f64,
}

impl TryFrom<UnverifiablePlanDoc> for UnverifiablePlan {
    type Error = SolverError;

    fn try_from(doc: UnverifiablePlanDoc) -> Result<Self, Self::Error> {
        let plan = UnverifiablePlan::new(MiningPower::new(doc.capacity)?, doc.schedule)?;
        let tol = 1e-9 * plan.schedule.n as f64;
        if (plan.actual_duration - doc.actual_duration).abs() > tol
            || (plan.max_deficit - doc.max_deficit).abs() > tol
            || (plan.reduced_objective() - doc.reduced_objective).abs() > tol
        {
            return Err(SolverError::Schedule(
                "stated duration / deficit do not match the schedule".into(),
            ));
        }
        Ok(plan)
    }
}

impl From<UnverifiablePlan> for UnverifiablePlanDoc {
    fn from(plan: UnverifiablePlan) -> Self {
        UnverifiablePlanDoc {
            capacity: plan.capacity,
            reduced_objective: plan.schedule.reduced_objective,
            schedule: plan.schedule,
            actual_duration: plan.actual_duration,
            max_deficit: plan.max_deficit,
        }
    }
}

impl UnverifiablePlan {
    pub fn new(m_a: MiningPower, schedule: ReportSchedule) -> Result<Self, SolverError> {
        let actual_duration = unverifiable_objective(&schedule, m_a)?;
        Ok(UnverifiablePlan {
            capacity: m_a.get(),
            max_deficit: schedule.n as f64 - actual_duration,
            schedule,
            actual_duration,
        })
    }

    pub fn optimal(m_a: MiningPower, n: u64, options: &SolverOptions) -> Result<Self, SolverError> {
        Self::new(m_a, solve_optimal_reports_with(n, options)?)
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn schedule(&self) -> &ReportSchedule {
        &self.schedule
    }

    pub fn blocks(&self) -> u64 {
        self.schedule.n
    }

    pub fn actual_duration(&self) -> f64 {
        self.actual_duration
    }

    pub fn reduced_objective(&self) -> f64 {
        self.schedule.reduced_objective
    }

    pub fn max_deficit(&self) -> f64 {
        self.max_deficit
    }
}
