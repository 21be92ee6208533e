//! Simplified proof-of-work chain: deterministic mining, per-block difficulty
//! adjustment and timestamp-regime validation.
//!
//! Time is measured in protocol units in which the honest network (capacity 1)
//! finds one block per unit at difficulty 1. A block's timestamp marks the
//! moment its header was fixed, i.e. the moment its parent was found. Block
//! `h` is therefore mined during `[t_h, t_{h+1})` and the interval between
//! two consecutive timestamps is the (claimed) mining time of the earlier
//! block. The difficulty of block `h + 1` is `d_h / (t_{h+1} - t_h)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when checking that a difficulty follows the
/// adjustment rule.
pub const DIFFICULTY_REL_TOL: f64 = 1e-9;

/// Default absolute tolerance for "reported equals true" under verifiable
/// timestamps.
pub const DEFAULT_TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("{what} must be strictly positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("{what} must be nonnegative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("non-positive timestamp interval: {from} -> {to}")]
    NonPositiveInterval { from: f64, to: f64 },
    #[error("malformed chain: {0}")]
    Malformed(String),
}

fn finite(what: &'static str, value: f64) -> Result<f64, DomainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DomainError::NonFinite { what, value })
    }
}

pub(crate) fn positive(what: &'static str, value: f64) -> Result<f64, DomainError> {
    let value = finite(what, value)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(DomainError::NonPositive { what, value })
    }
}

macro_rules! real_newtype {
    ($(#[$meta:meta])* $name:ident, $what:literal, $check:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
        #[serde(try_from = "f64", into = "f64")]
        pub struct $name(f64);

        impl $name {
            pub fn new(value: f64) -> Result<Self, DomainError> {
                $check($what, value).map(Self)
            }

            pub fn get(self) -> f64 {
                self.0
            }
        }

        impl TryFrom<f64> for $name {
            type Error = DomainError;

            fn try_from(value: f64) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for f64 {
            fn from(value: $name) -> f64 {
                value.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

fn nonnegative(what: &'static str, value: f64) -> Result<f64, DomainError> {
    let value = finite(what, value)?;
    if value >= 0.0 {
        Ok(value)
    } else {
        Err(DomainError::Negative { what, value })
    }
}

real_newtype!(
    /// A point in time or a duration, in protocol time units.
    TimeUnit,
    "time",
    nonnegative
);
real_newtype!(
    /// Block difficulty. Genesis difficulty is 1.
    Difficulty,
    "difficulty",
    positive
);
real_newtype!(
    /// Mining capacity relative to the honest network (honest capacity is 1).
    MiningPower,
    "mining power",
    positive
);

impl Difficulty {
    pub const GENESIS: Difficulty = Difficulty(1.0);
}

impl MiningPower {
    pub const HONEST: MiningPower = MiningPower(1.0);
}

impl TimeUnit {
    pub const ZERO: TimeUnit = TimeUnit(0.0);
}

/// Time needed to find a block of difficulty `d` with power `m`.
pub fn block_find_time(d: Difficulty, m: MiningPower) -> TimeUnit {
    TimeUnit(d.0 / m.0)
}

/// Difficulty of the next block given the current block's difficulty and the
/// timestamps of the current and next blocks.
pub fn next_difficulty(
    d: Difficulty,
    t_current: TimeUnit,
    t_next: TimeUnit,
) -> Result<Difficulty, DomainError> {
    let interval = t_next.0 - t_current.0;
    if !(interval > 0.0) {
        return Err(DomainError::NonPositiveInterval {
            from: t_current.0,
            to: t_next.0,
        });
    }
    Difficulty::new(d.0 / interval)
}

/// Difficulty reached from genesis after the given sequence of timestamp
/// intervals (product form of the adjustment rule).
pub fn difficulty_from_intervals(intervals: &[f64]) -> Result<Difficulty, DomainError> {
    let mut product = 1.0;
    for &interval in intervals {
        product *= positive("interval", interval)?;
    }
    Difficulty::new(1.0 / product)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub reported_timestamp: TimeUnit,
    pub difficulty: Difficulty,
    /// The timestamp an honest miner would have written: the true moment the
    /// parent was found. Only the verifiable regime reads it.
    pub true_timestamp: TimeUnit,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            height: 0,
            reported_timestamp: TimeUnit::ZERO,
            difficulty: Difficulty::GENESIS,
            true_timestamp: TimeUnit::ZERO,
        }
    }

    pub fn parent_height(&self) -> Option<u64> {
        self.height.checked_sub(1)
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0
    }
}

/// A sequence of blocks starting at genesis with consecutive heights.
///
/// Construction through [`Chain::push`] maintains the difficulty rule;
/// [`Chain::from_blocks`] only checks structure so that arbitrary (possibly
/// invalid) chains can be loaded and handed to [`validate_chain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainDocument", into = "ChainDocument")]
pub struct Chain {
    blocks: Vec<Block>,
}

#[derive(Serialize, Deserialize)]
struct ChainDocument {
    blocks: Vec<Block>,
}

impl TryFrom<ChainDocument> for Chain {
    type Error = DomainError;

    fn try_from(doc: ChainDocument) -> Result<Self, Self::Error> {
        Chain::from_blocks(doc.blocks)
    }
}

impl From<Chain> for ChainDocument {
    fn from(chain: Chain) -> Self {
        ChainDocument {
            blocks: chain.blocks,
        }
    }
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    /// Genesis-only chain.
    pub fn new() -> Self {
        Chain {
            blocks: vec![Block::genesis()],
        }
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Result<Self, DomainError> {
        let Some(first) = blocks.first() else {
            return Err(DomainError::Malformed("empty chain".into()));
        };
        if *first != Block::genesis() {
            return Err(DomainError::Malformed(format!(
                "first block is not genesis: {first:?}"
            )));
        }
        for (i, block) in blocks.iter().enumerate() {
            if block.height != i as u64 {
                return Err(DomainError::Malformed(format!(
                    "height {} at position {i}",
                    block.height
                )));
            }
        }
        Ok(Chain { blocks })
    }

    /// Appends a block whose difficulty is derived from the tip by the
    /// adjustment rule.
    pub fn push(
        &mut self,
        reported_timestamp: TimeUnit,
        true_timestamp: TimeUnit,
    ) -> Result<&Block, DomainError> {
        let tip = self.tip();
        let difficulty =
            next_difficulty(tip.difficulty, tip.reported_timestamp, reported_timestamp)?;
        let block = Block {
            height: tip.height + 1,
            reported_timestamp,
            difficulty,
            true_timestamp,
        };
        self.blocks.push(block);
        Ok(self.tip())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    /// Reported intervals `t_{h+1} - t_h` for consecutive blocks.
    pub fn reported_intervals(&self) -> Vec<f64> {
        self.blocks
            .windows(2)
            .map(|w| w[1].reported_timestamp.get() - w[0].reported_timestamp.get())
            .collect()
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    /// One block per line: `height,reported_timestamp,difficulty,true_timestamp`
    /// preceded by a header line. Reals carry 17 significant digits.
    pub fn to_records(&self) -> String {
        let mut out = String::from("height,reported_timestamp,difficulty,true_timestamp\n");
        for b in &self.blocks {
            out.push_str(&format!(
                "{},{},{},{}\n",
                b.height,
                format_sig17(b.reported_timestamp.get()),
                format_sig17(b.difficulty.get()),
                format_sig17(b.true_timestamp.get()),
            ));
        }
        out
    }

    pub fn from_records(text: &str) -> Result<Self, DomainError> {
        let mut blocks = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("height") {
                continue;
            }
            let malformed =
                |msg: &str| DomainError::Malformed(format!("line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(malformed("expected 4 fields"));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|e| malformed(&e.to_string()));
            blocks.push(Block {
                height: fields[0].parse().map_err(|_| malformed("bad height"))?,
                reported_timestamp: TimeUnit::new(real(fields[1])?)?,
                difficulty: Difficulty::new(real(fields[2])?)?,
                true_timestamp: TimeUnit::new(real(fields[3])?)?,
            });
        }
        Chain::from_blocks(blocks)
    }
}

/// Decimal rendering with 17 significant digits, enough to round-trip any
/// `f64` exactly.
pub fn format_sig17(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-5..=16).contains(&magnitude) {
        let decimals = (16 - magnitude).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.16e}")
    }
}

/// The canonical chain: one block per time unit at difficulty 1.
pub fn build_honest_chain(n: u64) -> Chain {
    let mut chain = Chain::new();
    for i in 1..=n {
        let t = TimeUnit(i as f64);
        chain.push(t, t).expect("unit intervals are valid");
    }
    chain
}

/// Which timestamp rules a chain is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum TimestampRegime {
    /// Reported timestamps must match true times within `tolerance`.
    Verifiable { tolerance: f64 },
    /// Any strictly increasing timestamps, bounded below by the fork point
    /// and above by the moment the chain is revealed.
    Unverifiable {
        reveal_time: TimeUnit,
        earliest_first_timestamp: TimeUnit,
    },
}

impl TimestampRegime {
    pub fn verifiable() -> Self {
        TimestampRegime::Verifiable {
            tolerance: DEFAULT_TIME_TOLERANCE,
        }
    }

    pub fn verifiable_with_tolerance(tolerance: f64) -> Result<Self, DomainError> {
        Ok(TimestampRegime::Verifiable {
            tolerance: nonnegative("tolerance", tolerance)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonIncreasingTimestamps {
        height: u64,
        previous: f64,
        reported: f64,
    },
    FirstTimestampTooEarly {
        reported: f64,
        earliest: f64,
    },
    FutureDatedReveal {
        height: u64,
        reported: f64,
        reveal_time: f64,
    },
    WrongDifficulty {
        height: u64,
        expected: f64,
        actual: f64,
    },
    MisreportedTimestamp {
        height: u64,
        reported: f64,
        actual: f64,
    },
}

impl Violation {
    pub fn label(&self) -> &'static str {
        match self {
            Violation::NonIncreasingTimestamps { .. } => "non-increasing timestamps",
            Violation::FirstTimestampTooEarly { .. } => "first timestamp before fork",
            Violation::FutureDatedReveal { .. } => "future-dated reveal",
            Violation::WrongDifficulty { .. } => "wrong difficulty",
            Violation::MisreportedTimestamp { .. } => "misreported timestamp",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonIncreasingTimestamps {
                height,
                previous,
                reported,
            } => write!(
                f,
                "{} at height {height}: {reported} after {previous}",
                self.label()
            ),
            Violation::FirstTimestampTooEarly { reported, earliest } => {
                write!(f, "{}: {reported} < {earliest}", self.label())
            }
            Violation::FutureDatedReveal {
                height,
                reported,
                reveal_time,
            } => write!(
                f,
                "{} at height {height}: {reported} > reveal time {reveal_time}",
                self.label()
            ),
            Violation::WrongDifficulty {
                height,
                expected,
                actual,
            } => write!(
                f,
                "{} at height {height}: expected {expected}, found {actual}",
                self.label()
            ),
            Violation::MisreportedTimestamp {
                height,
                reported,
                actual,
            } => write!(
                f,
                "{} at height {height}: reported {reported}, true {actual}",
                self.label()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    Invalid { violations: Vec<Violation> },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Verdict::Ok => &[],
            Verdict::Invalid { violations } => violations,
        }
    }
}

/// Checks a chain against a timestamp regime. Every violation found is
/// reported; the function never fails.
pub fn validate_chain(chain: &Chain, regime: &TimestampRegime) -> Verdict {
    let blocks = chain.blocks();
    let mut violations = Vec::new();

    for w in blocks.windows(2) {
        let (parent, block) = (&w[0], &w[1]);
        let previous = parent.reported_timestamp.get();
        let reported = block.reported_timestamp.get();
        if reported <= previous {
            violations.push(Violation::NonIncreasingTimestamps {
                height: block.height,
                previous,
                reported,
            });
            continue;
        }
        let expected = parent.difficulty.get() / (reported - previous);
        let actual = block.difficulty.get();
        if (actual - expected).abs() > DIFFICULTY_REL_TOL * expected.abs() {
            violations.push(Violation::WrongDifficulty {
                height: block.height,
                expected,
                actual,
            });
        }
    }

    match *regime {
        TimestampRegime::Verifiable { tolerance } => {
            for block in blocks {
                let reported = block.reported_timestamp.get();
                let actual = block.true_timestamp.get();
                if (reported - actual).abs() > tolerance {
                    violations.push(Violation::MisreportedTimestamp {
                        height: block.height,
                        reported,
                        actual,
                    });
                }
            }
        }
        TimestampRegime::Unverifiable {
            reveal_time,
            earliest_first_timestamp,
        } => {
            if let Some(first) = blocks.get(1) {
                let reported = first.reported_timestamp.get();
                if reported < earliest_first_timestamp.get() {
                    violations.push(Violation::FirstTimestampTooEarly {
                        reported,
                        earliest: earliest_first_timestamp.get(),
                    });
                }
            }
            let tip = chain.tip();
            if tip.reported_timestamp.get() > reveal_time.get() {
                violations.push(Violation::FutureDatedReveal {
                    height: tip.height,
                    reported: tip.reported_timestamp.get(),
                    reveal_time: reveal_time.get(),
                });
            }
        }
    }

    if violations.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Invalid { violations }
    }
}
