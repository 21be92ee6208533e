//! Attack planning when timestamps are verifiable.
//!
//! The adversary must report true times, so its only lever is how much of its
//! capacity it applies to each block. Mining `k` blocks with powers
//! `M_1..M_k` from difficulty 1 takes `1/M_1 + M_1/M_2 + ... + M_{k-1}/M_k`
//! (ignoring the one-off idle gap before the attack starts). That sum is
//! minimised by the geometric ramp `M_i = M_a^{i/k}`, at which every block
//! takes `M_a^{-1/k}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{positive, DomainError, MiningPower};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("capacity {capacity} cannot outpace the honest network (needs > 1)")]
    CapacityTooLow { capacity: f64 },
    #[error("a deficit of {deficit} cannot be overcome in {blocks} blocks with finite capacity")]
    DeficitTooLarge { deficit: f64, blocks: u64 },
    #[error("at least one block is required")]
    NoBlocks,
    #[error("power schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn attacking_capacity(m_a: MiningPower) -> Result<f64, StrategyError> {
    let m = m_a.get();
    if m > 1.0 {
        Ok(m)
    } else {
        Err(StrategyError::CapacityTooLow { capacity: m })
    }
}

fn block_count(k: u64) -> Result<f64, StrategyError> {
    if k == 0 {
        Err(StrategyError::NoBlocks)
    } else {
        Ok(k as f64)
    }
}

/// Per-block power allocation for an attack of `powers.len()` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule {
    powers: Vec<f64>,
    capacity: f64,
}

impl PowerSchedule {
    pub fn new(powers: Vec<f64>, capacity: MiningPower) -> Result<Self, StrategyError> {
        let capacity = capacity.get();
        if powers.is_empty() {
            return Err(StrategyError::NoBlocks);
        }
        for (i, &p) in powers.iter().enumerate() {
            positive("power", p)?;
            if p > capacity {
                return Err(StrategyError::Schedule(format!(
                    "block {} uses {p} > capacity {capacity}",
                    i + 1
                )));
            }
        }
        Ok(PowerSchedule { powers, capacity })
    }

    /// Full capacity on every block.
    pub fn constant(capacity: MiningPower, k: u64) -> Result<Self, StrategyError> {
        block_count(k)?;
        Self::new(vec![capacity.get(); k as usize], capacity)
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    /// Total mining time when each block's difficulty is set by the previous
    /// block's mining time and the chain starts at difficulty 1.
    pub fn idealized_duration(&self) -> f64 {
        let mut previous = 1.0;
        self.powers
            .iter()
            .map(|&p| {
                let t = previous / p;
                previous = p;
                t
            })
            .sum()
    }
}

/// The geometric ramp `M_a^{1/k}, M_a^{2/k}, ..., M_a`.
pub fn optimal_power_schedule(m_a: MiningPower, k: u64) -> Result<PowerSchedule, StrategyError> {
    let m = attacking_capacity(m_a)?;
    let kf = block_count(k)?;
    let mut powers: Vec<f64> = (1..=k).map(|i| m.powf(i as f64 / kf)).collect();
    // The top of the ramp is the capacity itself, not a rounded power of it.
    *powers.last_mut().expect("k >= 1") = m;
    PowerSchedule::new(powers, m_a)
}

/// Shortest time to mine `k` blocks: `k * M_a^{-1/k}`.
pub fn attack_duration(m_a: MiningPower, k: u64) -> Result<f64, StrategyError> {
    let m = attacking_capacity(m_a)?;
    let kf = block_count(k)?;
    Ok(kf * (-m.ln() / kf).exp())
}

/// Blocks gained on the honest chain by the optimal `k`-block attack:
/// `k (1 - M_a^{-1/k})`.
pub fn deficit_overcome(m_a: MiningPower, k: u64) -> Result<f64, StrategyError> {
    let m = attacking_capacity(m_a)?;
    let kf = block_count(k)?;
    // expm1 keeps precision when M_a^{-1/k} is close to 1 (large k).
    Ok(-kf * (-m.ln() / kf).exp_m1())
}

/// Capacity needed to overcome deficit `a` with exactly `k` blocks:
/// `(1 - a/k)^{-k}`.
pub fn required_power(a: f64, k: u64) -> Result<MiningPower, StrategyError> {
    let a = positive("deficit", a)?;
    let kf = block_count(k)?;
    if a >= kf {
        return Err(StrategyError::DeficitTooLarge {
            deficit: a,
            blocks: k,
        });
    }
    Ok(MiningPower::new((kf / (kf - a)).powf(kf))?)
}

/// Capacity below which deficit `a` can never be overcome, however long the
/// attack: `e^a`. The gain `k (1 - M_a^{-1/k})` only approaches `ln M_a`.
pub fn threshold_capacity(a: f64) -> Result<f64, StrategyError> {
    Ok(positive("deficit", a)?.exp())
}

/// Result of searching for the shortest sufficient attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum BlocksNeeded {
    Feasible {
        blocks: u64,
    },
    /// No attack length suffices; `max_deficit` (= ln M_a) is the supremum
    /// of what the capacity can ever overcome.
    Infeasible {
        max_deficit: f64,
    },
}

/// Upper end of the search for [`min_blocks_for_deficit`]. Beyond this the
/// gain function is flat to double precision.
const MAX_SEARCH_BLOCKS: u64 = 1 << 52;

/// Smallest `k` with `deficit_overcome(m_a, k) >= a`.
pub fn min_blocks_for_deficit(m_a: MiningPower, a: f64) -> Result<BlocksNeeded, StrategyError> {
    let m = attacking_capacity(m_a)?;
    let a = positive("deficit", a)?;
    let bound = m.ln();
    let infeasible = BlocksNeeded::Infeasible { max_deficit: bound };
    if a >= bound {
        return Ok(infeasible);
    }
    let gained = |k: u64| deficit_overcome(m_a, k).expect("validated inputs");

    // Doubling to bracket, then bisection on the increasing gain.
    let mut hi = 1u64;
    while gained(hi) < a {
        if hi >= MAX_SEARCH_BLOCKS {
            return Ok(infeasible);
        }
        hi *= 2;
    }
    let mut lo = hi / 2; // gained(lo) < a, or lo == 0
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if gained(mid) >= a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BlocksNeeded::Feasible { blocks: hi })
}

/// Optimal verifiable-regime plan. Also used for arbitrary (sub-optimal)
/// power schedules, in which case `duration` is the idealized duration of
/// that schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VerifiablePlanDoc", into = "VerifiablePlanDoc")]
pub struct VerifiablePlan {
    schedule: PowerSchedule,
    duration: f64,
    deficit_overcome: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifiablePlanDoc {
    capacity: f64,
    blocks: u64,
    powers: Vec<f64>,
    duration: f64,
    deficit_overcome: f64,
}

impl TryFrom<VerifiablePlanDoc> for VerifiablePlan {
    type Error = StrategyError;

    fn try_from(doc: VerifiablePlanDoc) -> Result<Self, Self::Error> {
        if doc.blocks as usize != doc.powers.len() {
            return Err(StrategyError::Schedule(format!(
                "blocks = {} but {} powers given",
                doc.blocks,
                doc.powers.len()
            )));
        }
        let schedule = PowerSchedule::new(doc.powers, MiningPower::new(doc.capacity)?)?;
        let plan = VerifiablePlan::from_schedule(schedule);
        let tol = 1e-9 * plan.duration.max(1.0);
        if (plan.duration - doc.duration).abs() > tol
            || (plan.deficit_overcome - doc.deficit_overcome).abs() > tol
        {
            return Err(StrategyError::Schedule(format!(
                "stated duration {} / deficit {} do not match the schedule ({} / {})",
                doc.duration, doc.deficit_overcome, plan.duration, plan.deficit_overcome
            )));
        }
        Ok(plan)
    }
}

impl From<VerifiablePlan> for VerifiablePlanDoc {
    fn from(plan: VerifiablePlan) -> Self {
        VerifiablePlanDoc {
            capacity: plan.schedule.capacity,
            blocks: plan.schedule.len() as u64,
            powers: plan.schedule.powers,
            duration: plan.duration,
            deficit_overcome: plan.deficit_overcome,
        }
    }
}

impl VerifiablePlan {
    pub fn optimal(m_a: MiningPower, k: u64) -> Result<Self, StrategyError> {
        Ok(VerifiablePlan {
            schedule: optimal_power_schedule(m_a, k)?,
            duration: attack_duration(m_a, k)?,
            deficit_overcome: deficit_overcome(m_a, k)?,
        })
    }

    pub fn from_schedule(schedule: PowerSchedule) -> Self {
        let duration = schedule.idealized_duration();
        VerifiablePlan {
            deficit_overcome: schedule.len() as f64 - duration,
            schedule,
            duration,
        }
    }

    pub fn schedule(&self) -> &PowerSchedule {
        &self.schedule
    }

    pub fn capacity(&self) -> f64 {
        self.schedule.capacity
    }

    pub fn blocks(&self) -> u64 {
        self.schedule.len() as u64
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn deficit_overcome(&self) -> f64 {
        self.deficit_overcome
    }
}

/// Closed-form trace of the naive attack (full capacity on every block),
/// with the attack starting at `t_A = a` and the fork block stamped `t_1 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveTrace {
    /// Reported interval of the first block, idle gap included.
    pub first_interval: f64,
    pub second_difficulty: f64,
    pub second_duration: f64,
    pub third_difficulty: f64,
    /// Blocks per time unit once difficulty has caught up with the capacity.
    pub terminal_rate: f64,
    /// Remaining deficit once both chains grow at the same rate, counting
    /// the two fast blocks as whole-block gains.
    pub terminal_deficit: f64,
}

pub fn naive_attack_trace(m_a: MiningPower, a: f64) -> Result<NaiveTrace, StrategyError> {
    let m = attacking_capacity(m_a)?;
    let a = positive("deficit", a)?;
    if a < 1.0 {
        return Err(StrategyError::Schedule(format!(
            "the attack cannot start before the fork block is found (deficit {a} < 1)"
        )));
    }
    let slowdown = 1.0 + m * (a - 1.0);
    Ok(NaiveTrace {
        first_interval: (a - 1.0) + 1.0 / m,
        second_difficulty: m / slowdown,
        second_duration: 1.0 / slowdown,
        third_difficulty: m,
        terminal_rate: 1.0,
        terminal_deficit: a - 2.0,
    })
}
