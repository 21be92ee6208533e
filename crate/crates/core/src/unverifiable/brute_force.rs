//! Exact grid search over claimed intervals.
//!
//! Every interval is restricted to a positive multiple of the grid step and
//! the intervals must exhaust the budget. Rather than enumerating all
//! compositions, the nested form
//! `g = 1 + (1/T_1)(1 + (1/T_2)(1 + ... (1 + 1/T_{N-1})))` lets a dynamic
//! program over the remaining budget find the same grid minimum in
//! `O(N K^2)` time, where `K` is the number of grid cells.

use super::{ReportSchedule, SolverError, DEFAULT_TERMINAL_CLAIM};

pub const MAX_STEP: f64 = 1e-2;

/// Grid minimiser for `N` in `[3, 5]` with the given step (at most `1e-2`).
/// The step is adjusted so a whole number of cells spans the budget.
pub fn brute_force_reports(n: u64, step: f64) -> Result<ReportSchedule, SolverError> {
    if !(3..=5).contains(&n) {
        return Err(SolverError::BruteForceRange { n });
    }
    if !(step > 0.0 && step <= MAX_STEP) {
        return Err(SolverError::GridStep { step });
    }
    let m = (n - 1) as usize;
    let budget = m as f64;
    let cells = (budget / step).round() as usize;
    let h = budget / cells as f64;

    // value[j][r]: best nested tail using intervals j..m with r cells left.
    let mut value = vec![vec![f64::INFINITY; cells + 1]; m];
    let mut choice = vec![vec![0usize; cells + 1]; m];
    for r in 1..=cells {
        value[m - 1][r] = 1.0 + 1.0 / (r as f64 * h);
        choice[m - 1][r] = r;
    }
    for j in (0..m - 1).rev() {
        let later = m - 1 - j;
        for r in (later + 1)..=cells {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for t in 1..=(r - later) {
                let v = 1.0 + value[j + 1][r - t] / (t as f64 * h);
                if v < best {
                    best = v;
                    arg = t;
                }
            }
            value[j][r] = best;
            choice[j][r] = arg;
        }
    }

    let mut intervals = Vec::with_capacity(m);
    let mut left = cells;
    for row in &choice {
        let t = row[left];
        intervals.push(t as f64 * h);
        left -= t;
    }
    ReportSchedule::build(intervals, DEFAULT_TERMINAL_CLAIM, None, 0)
}
