//! Command implementations for the `chainrace` binary.
//!
//! Every command writes its primary output (JSON or CSV) to `out` and
//! diagnostics to `err`, so the binary and the tests share one code path.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chainrace_core::chain::{format_sig17, DEFAULT_TIME_TOLERANCE};
use chainrace_core::sim::{
    simulate, verify_against_analytic, AttackScenario, DifficultyMode, HonestHeight, MismatchError,
    NaivePlan, Plan, RegimeKind, SimError,
};
use chainrace_core::unverifiable::{SolverError, SolverOptions, UnverifiablePlan};
use chainrace_core::verifiable::{
    attack_duration, min_blocks_for_deficit, BlocksNeeded, StrategyError, VerifiablePlan,
};
use chainrace_core::{validate_chain, Chain, MiningPower, TimeUnit, TimestampRegime, Verdict};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub mod exit {
    pub const OK: u8 = 0;
    /// I/O trouble reading inputs or writing outputs.
    pub const FAILURE: u8 = 1;
    /// Also what clap uses for malformed flags.
    pub const USAGE: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
    pub const SOLVER: u8 = 4;
    /// Invalid chains, invalid plans and analytic mismatches.
    pub const VALIDATION: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Mismatch(MismatchError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Infeasible(_) => exit::INFEASIBLE,
            CliError::Solver(_) => exit::SOLVER,
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Mismatch(_) => exit::VALIDATION,
            CliError::Io { .. } => exit::FAILURE,
        }
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::DeficitTooLarge { .. } => CliError::Infeasible(e.to_string()),
            StrategyError::Schedule(_) => CliError::Validation(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NonConvergence { .. } => CliError::Solver(e.to_string()),
            SolverError::CapInfeasible { .. } => CliError::Infeasible(e.to_string()),
            SolverError::Schedule(_) => CliError::Validation(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MismatchError> for CliError {
    fn from(e: MismatchError) -> Self {
        match e {
            MismatchError::NotComparable(_) => CliError::Usage(e.to_string()),
            MismatchError::Diverged(_) => CliError::Mismatch(e),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Deficit { .. } => CliError::Usage(e.to_string()),
            SimError::Strategy(inner) => inner.into(),
            SimError::Solver(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stdout_error(source: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn capacity(value: f64) -> Result<MiningPower, CliError> {
    MiningPower::new(value).map_err(|e| CliError::Usage(format!("--ma: {e}")))
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    writeln!(out, "{text}").map_err(stdout_error)
}

#[derive(Debug, Parser)]
#[command(
    name = "chainrace",
    version,
    about = "Plan, simulate and check longest-chain attacks under per-block difficulty adjustment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal power ramp when timestamps must be truthful.
    PlanVerifiable(PlanVerifiableArgs),
    /// Optimal claimed intervals when timestamps are not checked.
    PlanUnverifiable(PlanUnverifiableArgs),
    /// Run a plan against the honest chain and report the race outcome.
    Simulate(SimulateArgs),
    /// Attack times and largest deficits for capacities 3 and 99.
    Table1(Table1Args),
    /// Check a chain file against a timestamp regime.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("size").required(true).args(["blocks", "deficit"])))]
pub struct PlanVerifiableArgs {
    /// Adversary capacity, in multiples of the honest network.
    #[arg(long)]
    pub ma: f64,
    /// Number of blocks to mine.
    #[arg(long)]
    pub blocks: Option<u64>,
    /// Deficit to overcome; picks the shortest sufficient attack.
    #[arg(long)]
    pub deficit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlanUnverifiableArgs {
    #[arg(long)]
    pub ma: f64,
    /// Blocks mined before the reveal (N >= 2).
    #[arg(long)]
    pub blocks: u64,
    /// Seed for the solver's starting point.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest capacity honest miners consider plausible; bounds the claimed
    /// time of the last block from below.
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Verifiable,
    Unverifiable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Idealized,
    Faithful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeightArg {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Optimal,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plan JSON as written by the plan-* commands (or `{capacity, blocks}`
    /// for a naive plan).
    #[arg(long, conflicts_with_all = ["ma", "blocks", "strategy"])]
    pub plan: Option<PathBuf>,
    #[arg(long, required_unless_present = "plan")]
    pub ma: Option<f64>,
    #[arg(long, required_unless_present = "plan")]
    pub blocks: Option<u64>,
    #[arg(long, value_enum, default_value_t = Strategy::Optimal)]
    pub strategy: Strategy,
    /// Honest head start in blocks (at least 1).
    #[arg(long)]
    pub deficit: f64,
    /// Timestamp regime; also selects the optimal plan family when no plan
    /// file is given. Defaults to the plan's own regime.
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    /// Allowed gap between reported and true times (verifiable regime).
    #[arg(long, default_value_t = DEFAULT_TIME_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Idealized)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = HeightArg::Continuous)]
    pub honest_height: HeightArg,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Compare the run with the closed-form prediction.
    #[arg(long)]
    pub check: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Full-precision CSV destination (standard output if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a copy rounded to two decimals.
    #[arg(long)]
    pub display_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Chain as a JSON document or as CSV records.
    pub chain: PathBuf,
    #[arg(long, value_enum, default_value_t = RegimeArg::Verifiable)]
    pub regime: RegimeArg,
    #[arg(long, default_value_t = DEFAULT_TIME_TOLERANCE)]
    pub tolerance: f64,
    /// Honest clock at reveal (unverifiable regime).
    #[arg(long, required_if_eq("regime", "unverifiable"))]
    pub reveal_time: Option<f64>,
    /// Earliest allowed timestamp of the first block after genesis.
    #[arg(long, default_value_t = 1.0)]
    pub earliest: f64,
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::PlanVerifiable(args) => plan_verifiable(args, out),
        Command::PlanUnverifiable(args) => plan_unverifiable(args, out),
        Command::Simulate(args) => simulate_cmd(args, out, err),
        Command::Table1(args) => table1(args, out),
        Command::Validate(args) => validate(args, out),
    }
}

pub fn plan_verifiable(args: &PlanVerifiableArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let m = capacity(args.ma)?;
    let blocks = match (args.blocks, args.deficit) {
        (Some(k), None) => k,
        (None, Some(a)) => match min_blocks_for_deficit(m, a)? {
            BlocksNeeded::Feasible { blocks } => blocks,
            infeasible @ BlocksNeeded::Infeasible { max_deficit } => {
                write_json(out, &infeasible)?;
                return Err(CliError::Infeasible(format!(
                    "capacity {} never overcomes a deficit of {a}; the most any attack gains is ln({}) = {max_deficit}",
                    args.ma, args.ma
                )));
            }
        },
        _ => {
            return Err(CliError::Usage(
                "give exactly one of --blocks and --deficit".into(),
            ))
        }
    };
    write_json(out, &VerifiablePlan::optimal(m, blocks)?)
}

pub fn plan_unverifiable(args: &PlanUnverifiableArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let m = capacity(args.ma)?;
    let options = SolverOptions {
        seed: args.seed,
        max_iterations: args.max_iterations,
        honest_belief_cap: args.cap,
        ..SolverOptions::default()
    };
    write_json(out, &UnverifiablePlan::optimal(m, args.blocks, &options)?)
}

fn build_plan(args: &SimulateArgs) -> Result<Plan, CliError> {
    if let Some(path) = &args.plan {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        return Plan::from_json(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())));
    }
    let (Some(ma), Some(blocks)) = (args.ma, args.blocks) else {
        return Err(CliError::Usage(
            "either --plan or both --ma and --blocks are required".into(),
        ));
    };
    let m = capacity(ma)?;
    Ok(
        match (args.strategy, args.regime.unwrap_or(RegimeArg::Verifiable)) {
            (Strategy::Naive, _) => Plan::Naive(NaivePlan::new(m, blocks)?),
            (Strategy::Optimal, RegimeArg::Verifiable) => {
                Plan::Verifiable(VerifiablePlan::optimal(m, blocks)?)
            }
            (Strategy::Optimal, RegimeArg::Unverifiable) => Plan::Unverifiable(
                UnverifiablePlan::optimal(m, blocks, &SolverOptions::with_seed(args.seed))?,
            ),
        },
    )
}

pub fn simulate_cmd(
    args: &SimulateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let plan = build_plan(args)?;
    let regime = match args.regime {
        Some(RegimeArg::Verifiable) => RegimeKind::Verifiable {
            tolerance: args.tolerance,
        },
        Some(RegimeArg::Unverifiable) => RegimeKind::Unverifiable,
        None => match plan {
            Plan::Unverifiable(_) => RegimeKind::Unverifiable,
            _ => RegimeKind::Verifiable {
                tolerance: args.tolerance,
            },
        },
    };
    let scenario = AttackScenario::new(args.deficit, plan.clone())
        .with_regime(regime)
        .with_mode(match args.mode {
            ModeArg::Idealized => DifficultyMode::Idealized,
            ModeArg::Faithful => DifficultyMode::Faithful,
        })
        .with_honest_height(match args.honest_height {
            HeightArg::Continuous => HonestHeight::Continuous,
            HeightArg::Integer => HonestHeight::Integer,
        });
    let outcome = simulate(&scenario)?;
    match args.format {
        Format::Json => write_json(out, &outcome)?,
        Format::Csv => out
            .write_all(outcome.to_csv().as_bytes())
            .map_err(stdout_error)?,
    }
    if args.check {
        match verify_against_analytic(&outcome, &plan) {
            Ok(report) => {
                let _ = writeln!(
                    err,
                    "analytic check passed: duration relative error {:e}, max difficulty relative error {:e}",
                    report.duration_rel_error, report.max_difficulty_rel_error
                );
            }
            Err(mismatch) => {
                if let MismatchError::Diverged(report) = &mismatch {
                    let diff = serde_json::to_string_pretty(report).expect("plain data serializes");
                    let _ = writeln!(err, "{diff}");
                }
                return Err(mismatch.into());
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRegime {
    Verifiable,
    Unverifiable,
}

impl CellRegime {
    fn name(self) -> &'static str {
        match self {
            CellRegime::Verifiable => "verifiable",
            CellRegime::Unverifiable => "unverifiable",
        }
    }
}

/// One entry of the reference table: time to mine `n_blocks` blocks and the
/// largest head start that attack overcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Cell {
    pub capacity: f64,
    pub n_blocks: u64,
    pub regime: CellRegime,
    pub t_star: f64,
    pub a_max: f64,
}

pub const TABLE1_CAPACITIES: [f64; 2] = [3.0, 99.0];
pub const TABLE1_BLOCKS: [u64; 5] = [3, 5, 10, 20, 100];
pub const TABLE1_HEADER: &str = "ma,n,regime,t_star,a_max";

pub fn table1_cells(seed: u64) -> Result<Vec<Table1Cell>, CliError> {
    let mut cells = Vec::with_capacity(20);
    for &ma in &TABLE1_CAPACITIES {
        let m = capacity(ma)?;
        for &n in &TABLE1_BLOCKS {
            let identify = |e: &dyn std::fmt::Display| format!("cell (ma={ma}, n={n}): {e}");
            let verifiable = attack_duration(m, n).map_err(|e| CliError::Solver(identify(&e)))?;
            let unverifiable = UnverifiablePlan::optimal(m, n, &SolverOptions::with_seed(seed))
                .map_err(|e| CliError::Solver(identify(&e)))?
                .actual_duration();
            for (regime, t_star) in [
                (CellRegime::Verifiable, verifiable),
                (CellRegime::Unverifiable, unverifiable),
            ] {
                cells.push(Table1Cell {
                    capacity: ma,
                    n_blocks: n,
                    regime,
                    t_star,
                    a_max: n as f64 - t_star,
                });
            }
        }
    }
    cells.sort_by(|a, b| {
        a.capacity
            .total_cmp(&b.capacity)
            .then(a.n_blocks.cmp(&b.n_blocks))
            .then(a.regime.cmp(&b.regime))
    });
    Ok(cells)
}

pub fn table1_csv(cells: &[Table1Cell]) -> String {
    let mut csv = format!("{TABLE1_HEADER}\n");
    for c in cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            format_sig17(c.capacity),
            c.n_blocks,
            c.regime.name(),
            format_sig17(c.t_star),
            format_sig17(c.a_max)
        ));
    }
    csv
}

/// Half-up rounding to two decimals (the values are non-negative).
pub fn round2(x: f64) -> String {
    let scaled = (x * 100.0 + 0.5).floor() / 100.0;
    format!("{scaled:.2}")
}

pub fn table1_display_csv(cells: &[Table1Cell]) -> String {
    let mut csv = format!("{TABLE1_HEADER}\n");
    for c in cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.capacity,
            c.n_blocks,
            c.regime.name(),
            round2(c.t_star),
            round2(c.a_max)
        ));
    }
    csv
}

pub fn table1(args: &Table1Args, out: &mut dyn Write) -> Result<(), CliError> {
    let cells = table1_cells(args.seed)?;
    let csv = table1_csv(&cells);
    match &args.out {
        Some(path) => fs::write(path, &csv).map_err(io_error(path))?,
        None => out.write_all(csv.as_bytes()).map_err(stdout_error)?,
    }
    if let Some(path) = &args.display_out {
        fs::write(path, table1_display_csv(&cells)).map_err(io_error(path))?;
    }
    Ok(())
}

pub fn parse_chain(text: &str) -> Result<Chain, CliError> {
    let parsed = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        Chain::from_records(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Validation(format!("malformed chain: {e}")))
}

pub fn validate(args: &ValidateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.chain).map_err(io_error(&args.chain))?;
    let chain = parse_chain(&text)?;
    let usage = |e: chainrace_core::DomainError| CliError::Usage(e.to_string());
    let regime = match args.regime {
        RegimeArg::Verifiable => {
            TimestampRegime::verifiable_with_tolerance(args.tolerance).map_err(usage)?
        }
        RegimeArg::Unverifiable => TimestampRegime::Unverifiable {
            reveal_time: TimeUnit::new(args.reveal_time.unwrap_or(f64::NAN)).map_err(usage)?,
            earliest_first_timestamp: TimeUnit::new(args.earliest).map_err(usage)?,
        },
    };
    let verdict = validate_chain(&chain, &regime);
    write_json(out, &verdict)?;
    match verdict {
        Verdict::Ok => Ok(()),
        Verdict::Invalid { violations } => Err(CliError::Validation(
            violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}
