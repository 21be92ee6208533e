//! Shooting on the last claimed interval.
//!
//! Given `u = T_{N-1}` the stationarity conditions determine every earlier
//! interval through `T_{x-1} = T_x (1 + T_x - T_{x+1})` (with `T_N = 0`). The
//! resulting sum grows monotonically with `u`, so the budget equation is
//! solved by bisection. The backward recurrence amplifies rounding error
//! roughly geometrically, so this is only accurate for moderate `N` (a few
//! hundred blocks).

use super::SolverError;

fn backward(u: f64, m: usize) -> Option<Vec<f64>> {
    let mut t = vec![0.0; m];
    t[m - 1] = u;
    let mut next = 0.0;
    for x in (0..m - 1).rev() {
        let cur = t[x + 1];
        let prev = cur * (1.0 + cur - next);
        if !prev.is_finite() {
            return None;
        }
        t[x] = prev;
        next = cur;
    }
    Some(t)
}

fn total(u: f64, m: usize) -> f64 {
    match backward(u, m) {
        Some(t) => {
            let s: f64 = t.iter().sum();
            if s.is_finite() {
                s
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

/// Stationary claimed intervals for `N` blocks, found by shooting.
pub fn shoot_optimal_reports(n: u64) -> Result<Vec<f64>, SolverError> {
    if n < 2 {
        return Err(SolverError::TooFewBlocks { n });
    }
    let m = (n - 1) as usize;
    let budget = m as f64;
    if m == 1 {
        return Ok(vec![budget]);
    }
    let (mut lo, mut hi) = (0.0_f64, budget);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid, m) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever bracket end lands closer to the budget.
    let best = [lo, hi]
        .into_iter()
        .filter(|&u| u > 0.0)
        .min_by(|a, b| {
            (total(*a, m) - budget)
                .abs()
                .total_cmp(&(total(*b, m) - budget).abs())
        })
        .unwrap_or(hi);
    backward(best, m).ok_or(SolverError::NonConvergence {
        n,
        iterations: 2000,
        residual_norm: f64::INFINITY,
        best: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unverifiable::foc_residuals;

    #[test]
    fn three_blocks() {
        let t = shoot_optimal_reports(3).unwrap();
        assert!((t[1] - (3f64.sqrt() - 1.0)).abs() < 1e-14);
        assert!((t[0] - (3.0 - 3f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn residual_small_for_moderate_n() {
        for n in [4, 10, 50, 100] {
            let t = shoot_optimal_reports(n).unwrap();
            assert!(foc_residuals(&t).norm() < 1e-9, "N = {n}");
        }
    }
}
