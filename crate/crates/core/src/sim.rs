//! Deterministic execution of an attack plan against the honest chain.
//!
//! Clock conventions: the honest chain finds block `i` at time `i`. A block's
//! timestamp is the moment its header was fixed, i.e. when its parent was
//! found. The adversary forks at block 1 (timestamp 1, difficulty 1) and
//! starts mining at `t_A = A`. Mining block `i` takes `d_i / M_i`; once it
//! is found the header of block `i + 1` is fixed and its difficulty follows
//! from the reported interval `T_i`. After the planned number of blocks the
//! adversary reveals the chain, whose tip is the header built on the last
//! mined block.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    format_sig17, validate_chain, Block, Chain, Difficulty, DomainError, MiningPower, TimeUnit,
    TimestampRegime, Verdict, Violation, DEFAULT_TIME_TOLERANCE,
};
use crate::unverifiable::{SolverError, UnverifiablePlan};
use crate::verifiable::{naive_attack_trace, StrategyError, VerifiablePlan};

/// Relative tolerance used when comparing a simulation with closed forms.
pub const ANALYTIC_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("deficit must be finite and at least 1 block, got {deficit}")]
    Deficit { deficit: f64 },
    #[error("plan: {0}")]
    Plan(String),
    #[error("adversary chain violates the timestamp regime: {}", join_violations(.violations))]
    RegimeViolation { violations: Vec<Violation> },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Full capacity on every block, no attempt to pace difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NaivePlanDoc", into = "NaivePlanDoc")]
pub struct NaivePlan {
    capacity: f64,
    blocks: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NaivePlanDoc {
    capacity: f64,
    blocks: u64,
}

impl TryFrom<NaivePlanDoc> for NaivePlan {
    type Error = SimError;

    fn try_from(doc: NaivePlanDoc) -> Result<Self, Self::Error> {
        NaivePlan::new(MiningPower::new(doc.capacity)?, doc.blocks)
    }
}

impl From<NaivePlan> for NaivePlanDoc {
    fn from(plan: NaivePlan) -> Self {
        NaivePlanDoc {
            capacity: plan.capacity,
            blocks: plan.blocks,
        }
    }
}

impl NaivePlan {
    pub fn new(capacity: MiningPower, blocks: u64) -> Result<Self, SimError> {
        if capacity.get() <= 1.0 {
            return Err(SimError::Plan(format!(
                "capacity {} cannot outpace the honest network",
                capacity.get()
            )));
        }
        if blocks == 0 {
            return Err(SimError::Plan(
                "a naive plan needs at least one block".into(),
            ));
        }
        Ok(NaivePlan {
            capacity: capacity.get(),
            blocks,
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn blocks(&self) -> u64 {
        self.blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Verifiable,
    Unverifiable,
    Naive,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Verifiable => "verifiable",
            PlanKind::Unverifiable => "unverifiable",
            PlanKind::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Plan {
    Verifiable(VerifiablePlan),
    Unverifiable(UnverifiablePlan),
    Naive(NaivePlan),
}

impl Plan {
    /// Parses any plan document. The kind is recognised from its fields so
    /// that errors point at the actual problem.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SimError::Plan(e.to_string()))?;
        let Some(object) = value.as_object() else {
            return Err(SimError::Plan("expected a JSON object".into()));
        };
        let plan = if object.contains_key("powers") {
            serde_json::from_value(value).map(Plan::Verifiable)
        } else if object.contains_key("schedule") {
            serde_json::from_value(value).map(Plan::Unverifiable)
        } else {
            serde_json::from_value(value).map(Plan::Naive)
        };
        plan.map_err(|e| SimError::Plan(e.to_string()))
    }

    pub fn kind(&self) -> PlanKind {
        match self {
            Plan::Verifiable(_) => PlanKind::Verifiable,
            Plan::Unverifiable(_) => PlanKind::Unverifiable,
            Plan::Naive(_) => PlanKind::Naive,
        }
    }

    pub fn capacity(&self) -> f64 {
        match self {
            Plan::Verifiable(p) => p.capacity(),
            Plan::Unverifiable(p) => p.capacity(),
            Plan::Naive(p) => p.capacity(),
        }
    }

    /// Number of blocks the adversary mines.
    pub fn blocks(&self) -> u64 {
        match self {
            Plan::Verifiable(p) => p.blocks(),
            Plan::Unverifiable(p) => p.blocks(),
            Plan::Naive(p) => p.blocks(),
        }
    }
}

/// How the first difficulty adjustment treats the idle time between the
/// fork block and the start of the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyMode {
    /// The adversary's clock starts at the fork, so the idle gap `A - 1`
    /// never enters a reported interval.
    #[default]
    Idealized,
    /// Real clock: the first reported interval is `A - 1 + d_1 / M_1`.
    Faithful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HonestHeight {
    /// Height `t` at time `t`.
    #[default]
    Continuous,
    /// Height `floor(t)`.
    Integer,
}

impl HonestHeight {
    pub fn at(self, t: f64) -> f64 {
        match self {
            HonestHeight::Continuous => t,
            HonestHeight::Integer => t.floor(),
        }
    }
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {}: {other}", stringify!($name))),
                }
            }
        }
    };
}

keyword_enum!(DifficultyMode { Idealized => "idealized", Faithful => "faithful" });
keyword_enum!(HonestHeight { Continuous => "continuous", Integer => "integer" });

/// Which regime the revealed chain must satisfy. The unverifiable bounds
/// (fork point and reveal time) are filled in by the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum RegimeKind {
    Verifiable { tolerance: f64 },
    Unverifiable,
}

impl RegimeKind {
    pub fn verifiable() -> Self {
        RegimeKind::Verifiable {
            tolerance: DEFAULT_TIME_TOLERANCE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegimeKind::Verifiable { .. } => "verifiable",
            RegimeKind::Unverifiable => "unverifiable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    /// Honest head start in blocks; also the attack start time.
    pub deficit: f64,
    pub plan: Plan,
    pub mode: DifficultyMode,
    pub honest_height: HonestHeight,
    pub regime: RegimeKind,
}

impl AttackScenario {
    /// Idealized mode, continuous honest height, and the regime matching the
    /// plan (naive plans report truthfully).
    pub fn new(deficit: f64, plan: Plan) -> Self {
        let regime = match plan {
            Plan::Unverifiable(_) => RegimeKind::Unverifiable,
            _ => RegimeKind::verifiable(),
        };
        AttackScenario {
            deficit,
            plan,
            mode: DifficultyMode::Idealized,
            honest_height: HonestHeight::Continuous,
            regime,
        }
    }

    pub fn with_mode(mut self, mode: DifficultyMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_honest_height(mut self, honest_height: HonestHeight) -> Self {
        self.honest_height = honest_height;
        self
    }

    pub fn with_regime(mut self, regime: RegimeKind) -> Self {
        self.regime = regime;
        self
    }
}

/// One mined block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub height: u64,
    pub difficulty: f64,
    pub power: f64,
    /// `difficulty / power`.
    pub duration: f64,
    /// Interval between this block's timestamp and the next header's.
    pub reported_interval: f64,
    /// When the block was found, on the honest clock.
    pub mined_at: f64,
    pub honest_height_at_find: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub plan: PlanKind,
    pub capacity: f64,
    pub deficit: f64,
    pub mode: DifficultyMode,
    pub honest_height: HonestHeight,
    pub regime: RegimeKind,
    pub blocks_mined: u64,
    pub total_duration: f64,
    pub reveal_time: f64,
    pub honest_height_at_reveal: f64,
    pub adversary_height: u64,
    pub success: bool,
    pub trace: Vec<BlockTrace>,
    pub chain: Chain,
}

pub const OUTCOME_CSV_HEADER: &str = "plan,capacity,blocks,deficit,mode,honest_height,regime,\
total_duration,reveal_time,honest_height_at_reveal,adversary_height,success";

impl AttackOutcome {
    /// First mined block after which the adversary's chain (tipped by the
    /// next header) would already outrun the honest chain, ignoring any
    /// timestamp bounds on revealing early.
    pub fn first_overtaking_block(&self) -> Option<u64> {
        self.trace
            .iter()
            .find(|b| (b.height + 1) as f64 >= b.honest_height_at_find + 1.0)
            .map(|b| b.height)
    }

    pub fn to_csv_row(&self) -> String {
        [
            self.plan.to_string(),
            format_sig17(self.capacity),
            self.blocks_mined.to_string(),
            format_sig17(self.deficit),
            self.mode.to_string(),
            self.honest_height.to_string(),
            self.regime.name().to_string(),
            format_sig17(self.total_duration),
            format_sig17(self.reveal_time),
            format_sig17(self.honest_height_at_reveal),
            self.adversary_height.to_string(),
            self.success.to_string(),
        ]
        .join(",")
    }

    /// Header plus the summary row, LF-terminated.
    pub fn to_csv(&self) -> String {
        format!("{OUTCOME_CSV_HEADER}\n{}\n", self.to_csv_row())
    }
}

pub fn simulate(scenario: &AttackScenario) -> Result<AttackOutcome, SimError> {
    let a = scenario.deficit;
    if !(a.is_finite() && a >= 1.0) {
        return Err(SimError::Deficit { deficit: a });
    }
    let plan = &scenario.plan;
    let capacity = plan.capacity();
    let k = plan.blocks() as usize;
    let (powers, claimed_stamps): (Vec<f64>, Option<Vec<f64>>) = match plan {
        Plan::Verifiable(p) => (p.schedule().powers().to_vec(), None),
        Plan::Naive(p) => (vec![p.capacity(); k], None),
        Plan::Unverifiable(p) => (
            vec![capacity; k],
            Some(p.schedule().reported_timestamps(1.0)),
        ),
    };

    // Time at which the adversary's own clock reads "fork block found".
    let idle = match scenario.mode {
        DifficultyMode::Idealized => 0.0,
        DifficultyMode::Faithful => a - 1.0,
    };
    let height_at = |t: f64| scenario.honest_height.at(t);

    let mut blocks = Vec::with_capacity(k + 2);
    blocks.push(Block::genesis());
    blocks.push(Block {
        height: 1,
        reported_timestamp: TimeUnit::new(1.0)?,
        difficulty: Difficulty::GENESIS,
        true_timestamp: TimeUnit::new(1.0)?,
    });
    let mut trace = Vec::with_capacity(k);
    let mut difficulty = 1.0;
    let mut elapsed = 0.0;
    let mut stamp = 1.0;
    let mut true_clock = 1.0;

    for (i, &power) in powers.iter().enumerate() {
        let duration = difficulty / power;
        elapsed += duration;
        let mined_at = a + elapsed;
        let true_interval = if i == 0 { idle + duration } else { duration };
        true_clock += true_interval;
        let (next_stamp, interval) = match &claimed_stamps {
            Some(stamps) => (stamps[i + 1], stamps[i + 1] - stamps[i]),
            None => (stamp + true_interval, true_interval),
        };
        let next_difficulty = difficulty / interval;
        trace.push(BlockTrace {
            height: (i + 1) as u64,
            difficulty,
            power,
            duration,
            reported_interval: interval,
            mined_at,
            honest_height_at_find: height_at(mined_at),
        });
        blocks.push(Block {
            height: (i + 2) as u64,
            reported_timestamp: TimeUnit::new(next_stamp)?,
            difficulty: Difficulty::new(next_difficulty)?,
            true_timestamp: TimeUnit::new(true_clock)?,
        });
        stamp = next_stamp;
        difficulty = next_difficulty;
    }

    let chain = Chain::from_blocks(blocks)?;
    // A tip stamped later than the adversary finishes has to wait for the
    // honest clock to catch up before it can be published.
    let reveal_time = (a + elapsed).max(stamp);
    let regime = match scenario.regime {
        RegimeKind::Verifiable { tolerance } => {
            TimestampRegime::verifiable_with_tolerance(tolerance)?
        }
        RegimeKind::Unverifiable => TimestampRegime::Unverifiable {
            reveal_time: TimeUnit::new(reveal_time)?,
            earliest_first_timestamp: TimeUnit::new(1.0)?,
        },
    };
    if let Verdict::Invalid { violations } = validate_chain(&chain, &regime) {
        return Err(SimError::RegimeViolation { violations });
    }

    let adversary_height = chain.height();
    let honest_height_at_reveal = height_at(reveal_time);
    Ok(AttackOutcome {
        plan: plan.kind(),
        capacity,
        deficit: a,
        mode: scenario.mode,
        honest_height: scenario.honest_height,
        regime: scenario.regime,
        blocks_mined: k as u64,
        total_duration: elapsed,
        reveal_time,
        honest_height_at_reveal,
        adversary_height,
        success: adversary_height as f64 >= honest_height_at_reveal + 1.0,
        trace,
        chain,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockComparison {
    pub height: u64,
    pub expected_difficulty: f64,
    pub simulated_difficulty: f64,
    pub expected_duration: f64,
    pub simulated_duration: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub expected_duration: f64,
    pub simulated_duration: f64,
    pub duration_rel_error: f64,
    pub max_difficulty_rel_error: f64,
    pub first_divergent_block: Option<u64>,
    pub blocks: Vec<BlockComparison>,
}

impl ComparisonReport {
    pub fn is_match(&self) -> bool {
        self.first_divergent_block.is_none() && self.duration_rel_error <= ANALYTIC_REL_TOL
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MismatchError {
    #[error("outcome cannot be compared with the analytic prediction: {0}")]
    NotComparable(String),
    #[error(
        "simulation diverges from the analytic prediction \
         (first divergent block: {}, duration relative error {:e})",
        .0.first_divergent_block.map_or("none".to_string(), |h| h.to_string()),
        .0.duration_rel_error
    )]
    Diverged(Box<ComparisonReport>),
}

fn rel_error(simulated: f64, expected: f64) -> f64 {
    if simulated == expected {
        0.0
    } else {
        (simulated - expected).abs() / expected.abs()
    }
}

/// Compares a simulated trace with the closed-form prediction for its plan.
///
/// Verifiable plans are only comparable in idealized mode (the closed form
/// ignores the idle gap). Naive plans are compared with the naive trace for
/// the effective deficit of the mode.
pub fn verify_against_analytic(
    outcome: &AttackOutcome,
    plan: &Plan,
) -> Result<ComparisonReport, MismatchError> {
    if outcome.plan != plan.kind() || outcome.trace.len() as u64 != plan.blocks() {
        return Err(MismatchError::NotComparable(format!(
            "outcome of a {}-block {} plan does not belong to a {}-block {} plan",
            outcome.trace.len(),
            outcome.plan,
            plan.blocks(),
            plan.kind()
        )));
    }
    let k = outcome.trace.len();
    let capacity = plan.capacity();
    let (difficulties, expected_duration): (Vec<f64>, f64) = match plan {
        Plan::Verifiable(p) => {
            if outcome.mode != DifficultyMode::Idealized {
                return Err(MismatchError::NotComparable(
                    "verifiable closed forms assume idealized difficulty".into(),
                ));
            }
            let mut d = vec![1.0];
            d.extend_from_slice(&p.schedule().powers()[..k - 1]);
            (d, p.duration())
        }
        Plan::Unverifiable(p) => {
            let mut d = Vec::with_capacity(k);
            let mut current = 1.0;
            for interval in p.schedule().executed_intervals().into_iter().take(k) {
                d.push(current);
                current /= interval;
            }
            (d, p.actual_duration())
        }
        Plan::Naive(p) => {
            let effective = match outcome.mode {
                DifficultyMode::Idealized => 1.0,
                DifficultyMode::Faithful => outcome.deficit,
            };
            let m = MiningPower::new(capacity)
                .map_err(|e| MismatchError::NotComparable(e.to_string()))?;
            let naive = naive_attack_trace(m, effective)
                .map_err(|e| MismatchError::NotComparable(e.to_string()))?;
            let mut d = vec![1.0];
            let mut total = 1.0 / p.capacity();
            if k >= 2 {
                d.push(naive.second_difficulty);
                total += naive.second_duration;
            }
            d.resize(k, naive.third_difficulty);
            total += (k.saturating_sub(2)) as f64 * naive.third_difficulty / p.capacity();
            (d, total)
        }
    };

    let blocks: Vec<BlockComparison> = outcome
        .trace
        .iter()
        .zip(&difficulties)
        .map(|(b, &expected)| {
            let expected_block = expected / b.power;
            BlockComparison {
                height: b.height,
                expected_difficulty: expected,
                simulated_difficulty: b.difficulty,
                expected_duration: expected_block,
                simulated_duration: b.duration,
                rel_error: rel_error(b.difficulty, expected)
                    .max(rel_error(b.duration, expected_block)),
            }
        })
        .collect();
    let simulated_duration: f64 = outcome.trace.iter().map(|b| b.duration).sum();
    let report = ComparisonReport {
        expected_duration,
        simulated_duration,
        duration_rel_error: rel_error(simulated_duration, expected_duration),
        max_difficulty_rel_error: blocks
            .iter()
            .map(|b| rel_error(b.simulated_difficulty, b.expected_difficulty))
            .fold(0.0, f64::max),
        first_divergent_block: blocks
            .iter()
            .find(|b| !(b.rel_error <= ANALYTIC_REL_TOL))
            .map(|b| b.height),
        blocks,
    };
    if report.is_match() {
        Ok(report)
    } else {
        Err(MismatchError::Diverged(Box::new(report)))
    }
}
