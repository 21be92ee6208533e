//! Minimisation of the reduced objective under the budget constraint.
//!
//! The claims are parameterised as `T = B * softmax(y)`, which keeps every
//! iterate strictly positive and on the budget hyperplane. In these
//! coordinates `ln g` is convex (a log-sum-exp of convex functions of `y`),
//! so a limited-memory BFGS descent with Armijo backtracking reaches the
//! unique minimiser from any start. The result is then polished by Newton's
//! method on the stationarity system, whose Jacobian is tridiagonal plus one
//! dense row and is solved in linear time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{residuals_with_budget, ReportSchedule, SolverError, DEFAULT_TERMINAL_CLAIM};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Seeds the random starting point.
    pub seed: u64,
    /// Total iteration budget across both phases.
    pub max_iterations: usize,
    /// Required norm of the stationarity residual.
    pub tolerance: f64,
    /// Terminal claim used when no cap is set.
    pub terminal_claim: f64,
    /// Upper bound on the capacity honest miners find plausible. When set,
    /// the last block's claimed time is `d_N / cap` instead of
    /// `terminal_claim`, and it is reserved out of the budget.
    pub honest_belief_cap: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            seed: 0,
            max_iterations: 100_000,
            tolerance: 1e-10,
            terminal_claim: DEFAULT_TERMINAL_CLAIM,
            honest_belief_cap: None,
        }
    }
}

impl SolverOptions {
    pub fn with_seed(seed: u64) -> Self {
        SolverOptions {
            seed,
            ..Self::default()
        }
    }
}

pub fn solve_optimal_reports(n: u64) -> Result<ReportSchedule, SolverError> {
    solve_optimal_reports_with(n, &SolverOptions::default())
}

pub fn solve_optimal_reports_with(
    n: u64,
    options: &SolverOptions,
) -> Result<ReportSchedule, SolverError> {
    if n < 2 {
        return Err(SolverError::TooFewBlocks { n });
    }
    let full_budget = (n - 1) as f64;
    match options.honest_belief_cap {
        None => {
            let budget = full_budget - options.terminal_claim;
            if !(options.terminal_claim > 0.0 && budget > 0.0) {
                return Err(SolverError::Schedule(format!(
                    "terminal claim must lie in (0, {full_budget}), got {}",
                    options.terminal_claim
                )));
            }
            let intervals = minimise(n, budget, options)?;
            ReportSchedule::build(intervals, options.terminal_claim, None, options.seed)
        }
        Some(cap) => {
            if !(cap > 0.0) || !cap.is_finite() {
                return Err(SolverError::CapInfeasible { cap });
            }
            // Fixed point on the reserved terminal claim d_N / cap.
            let mut claim = 0.0;
            let mut intervals = Vec::new();
            for _ in 0..200 {
                let budget = full_budget - claim;
                if !(budget > 0.0) {
                    return Err(SolverError::CapInfeasible { cap });
                }
                intervals = minimise(n, budget, options)?;
                let last_difficulty = 1.0 / intervals.iter().product::<f64>();
                let next = last_difficulty / cap;
                let settled = (next - claim).abs() <= 1e-15 * full_budget;
                claim = next;
                if settled {
                    break;
                }
            }
            if !(claim < full_budget) {
                return Err(SolverError::CapInfeasible { cap });
            }
            let budget = full_budget - claim;
            let intervals = if (intervals.iter().sum::<f64>() - budget).abs() > 1e-12 * full_budget
            {
                minimise(n, budget, options)?
            } else {
                intervals
            };
            ReportSchedule::build(intervals, claim, Some(cap), options.seed)
        }
    }
}

/// Minimiser of the reduced objective over `n - 1` positive claims summing to
/// `budget`.
fn minimise(n: u64, budget: f64, options: &SolverOptions) -> Result<Vec<f64>, SolverError> {
    let dim = (n - 1) as usize;
    if dim == 1 {
        return Ok(vec![budget]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let y0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();

    let (y, used) = quasi_newton(y0, budget, options.max_iterations);
    let start = claims_from_logits(&y, budget);
    let (intervals, residual, polished) =
        newton_polish(start, budget, options.max_iterations.saturating_sub(used));
    if residual < options.tolerance {
        Ok(intervals)
    } else {
        Err(SolverError::NonConvergence {
            n,
            iterations: used + polished,
            residual_norm: residual,
            best: intervals,
        })
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn claims_from_logits(y: &[f64], budget: f64) -> Vec<f64> {
    let lse = log_sum_exp(y.iter().copied());
    y.iter().map(|&yi| budget * (yi - lse).exp()).collect()
}

/// `ln g` and its gradient with respect to the logits.
fn log_objective(y: &[f64], budget: f64) -> (f64, Vec<f64>) {
    let dim = y.len();
    let lse = log_sum_exp(y.iter().copied());
    let ln_budget = budget.ln();
    let ln_claims: Vec<f64> = y.iter().map(|&yi| ln_budget + yi - lse).collect();

    // ln of the partial products 1/(T_1...T_k), k = 0..dim.
    let mut ln_partials = Vec::with_capacity(dim + 1);
    let mut acc = 0.0;
    ln_partials.push(acc);
    for &lt in &ln_claims {
        acc -= lt;
        ln_partials.push(acc);
    }
    let ln_g = log_sum_exp(ln_partials.iter().copied());

    // tail[x] = sum_{k >= x+1} P_k / g, the share of g that depends on T_{x+1}.
    let mut tail = vec![0.0; dim];
    let mut running = 0.0;
    for x in (0..dim).rev() {
        running += (ln_partials[x + 1] - ln_g).exp();
        tail[x] = running;
    }
    let tail_sum: f64 = tail.iter().sum();
    let grad = (0..dim)
        .map(|x| -tail[x] + (ln_claims[x] - ln_budget).exp() * tail_sum)
        .collect();
    (ln_g, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const LBFGS_MEMORY: usize = 12;
const GRADIENT_TOL: f64 = 1e-11;
const MAX_STEP: f64 = 4.0;

/// Limited-memory BFGS on the logits. Returns the final logits and the
/// number of iterations used.
fn quasi_newton(mut y: Vec<f64>, budget: f64, max_iterations: usize) -> (Vec<f64>, usize) {
    let dim = y.len();
    let (mut f, mut g) = log_objective(&y, budget);
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::with_capacity(LBFGS_MEMORY);

    let mut iter = 0;
    while iter < max_iterations {
        if inf_norm(&g) < GRADIENT_TOL {
            break;
        }
        iter += 1;

        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yk, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..dim {
                q[i] -= a * yk[i];
            }
            alphas.push(a);
        }
        if let Some((s, yk, _)) = history.back() {
            let gamma = dot(s, yk) / dot(yk, yk);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, yk, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yk, &q);
            for i in 0..dim {
                q[i] += (a - b) * s[i];
            }
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let longest = inf_norm(&dir);
        let mut step = if longest > MAX_STEP {
            MAX_STEP / longest
        } else {
            1.0
        };

        // Armijo backtracking.
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = y.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (ft, gt) = log_objective(&trial, budget);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = trial.iter().zip(&y).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yk);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&yk, &yk).sqrt() {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, yk, 1.0 / sy));
        }
        let stalled = (f - ft).abs() <= 1e-16 * f.abs().max(1.0);
        y = trial;
        f = ft;
        g = gt;
        // Keep the logits centred; the parameterisation is shift-invariant.
        let mean = y.iter().sum::<f64>() / dim as f64;
        y.iter_mut().for_each(|v| *v -= mean);
        if stalled {
            break;
        }
    }
    (y, iter)
}

/// Newton's method on the stationarity system. Returns the claims, the final
/// residual norm and the iterations used.
fn newton_polish(mut t: Vec<f64>, budget: f64, max_iterations: usize) -> (Vec<f64>, f64, usize) {
    let mut residual = residuals_with_budget(&t, budget).norm();
    let mut iter = 0;
    while iter < max_iterations.min(200) && residual > 0.0 {
        iter += 1;
        let Some(step) = newton_step(&t, budget) else {
            break;
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = t.iter().zip(&step).map(|(a, d)| a + scale * d).collect();
            if trial.iter().all(|&v| v > 0.0) {
                let r = residuals_with_budget(&trial, budget).norm();
                if r < residual {
                    t = trial;
                    residual = r;
                    improved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (t, residual, iter)
}

/// Solves `J dt = -F` for the stationarity system at `t`.
///
/// Rows: the budget constraint, then for each `x = 2..m` the equation
/// `T_x (T_x - T_{x+1}) - (T_{x-1} - T_x) = 0` (with `T_{m+1} = 0`).
/// Eliminating `dt_1` with the constraint leaves a tridiagonal system in
/// `dt_2..dt_m` plus a rank-one term on its first row, handled with the
/// Sherman-Morrison formula.
fn newton_step(t: &[f64], budget: f64) -> Option<Vec<f64>> {
    let m = t.len();
    let f = residuals_with_budget(t, budget);
    let at = |i: usize| if i < m { t[i] } else { 0.0 };
    let size = m - 1;
    let mut sub = vec![0.0; size];
    let mut diag = vec![0.0; size];
    let mut sup = vec![0.0; size];
    let mut rhs = vec![0.0; size];
    let eqs: Vec<f64> = f.recurrence.iter().copied().chain(f.boundary).collect();
    for r in 0..size {
        let x = r + 1; // 0-based interval index of this equation
        diag[r] = 2.0 * at(x) - at(x + 1) + 1.0;
        if x + 1 < m {
            sup[r] = -at(x);
        }
        if r > 0 {
            sub[r] = -1.0;
        }
        rhs[r] = -eqs[r];
    }
    rhs[0] -= f.constraint;

    let y = thomas(&sub, &diag, &sup, &rhs)?;
    let mut e1 = vec![0.0; size];
    e1[0] = 1.0;
    let w = thomas(&sub, &diag, &sup, &e1)?;
    let denom = 1.0 + w.iter().sum::<f64>();
    if !(denom.abs() > 1e-300) {
        return None;
    }
    let coeff = y.iter().sum::<f64>() / denom;
    let tail: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a - coeff * b).collect();
    let first = -f.constraint - tail.iter().sum::<f64>();
    let mut step = Vec::with_capacity(m);
    step.push(first);
    step.extend(tail);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return None;
    }
    c[0] = sup[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c[i - 1];
        if denom == 0.0 {
            return None;
        }
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unverifiable::reduced_objective;

    #[test]
    fn gradient_matches_finite_differences() {
        let y = vec![0.3, -0.2, 0.1, 0.4, -0.6];
        let budget = 5.0;
        let (_, grad) = log_objective(&y, budget);
        for i in 0..y.len() {
            let h = 1e-6;
            let mut up = y.clone();
            let mut down = y.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (log_objective(&up, budget).0 - log_objective(&down, budget).0) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-8,
                "component {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn log_objective_matches_direct_evaluation() {
        let y = vec![0.7, 0.1, -0.9];
        let claims = claims_from_logits(&y, 3.0);
        assert!((claims.iter().sum::<f64>() - 3.0).abs() < 1e-14);
        let direct = reduced_objective(&claims).unwrap().ln();
        assert!((log_objective(&y, 3.0).0 - direct).abs() < 1e-14);
    }

    #[test]
    fn newton_step_solves_linearisation() {
        let t = vec![1.6, 1.2, 0.9, 0.3];
        let budget = 4.0;
        let step = newton_step(&t, budget).unwrap();
        // Compare against a finite-difference Jacobian-vector product.
        let flat = |v: &[f64]| {
            let r = residuals_with_budget(v, budget);
            let mut out = vec![r.constraint];
            out.extend(r.recurrence);
            out.extend(r.boundary);
            out
        };
        let base = flat(&t);
        let h = 1e-7;
        let moved: Vec<f64> = t.iter().zip(&step).map(|(a, d)| a + h * d).collect();
        let jv: Vec<f64> = flat(&moved)
            .iter()
            .zip(&base)
            .map(|(a, b)| (a - b) / h)
            .collect();
        for (lhs, f) in jv.iter().zip(&base) {
            assert!((lhs + f).abs() < 1e-5, "{lhs} vs {}", -f);
        }
    }

    #[test]
    fn two_blocks_is_forced() {
        let s = solve_optimal_reports(2).unwrap();
        assert_eq!(s.claimed_intervals(), &[1.0 - DEFAULT_TERMINAL_CLAIM]);
        assert!(matches!(
            solve_optimal_reports(1),
            Err(SolverError::TooFewBlocks { n: 1 })
        ));
        assert!(matches!(
            solve_optimal_reports(0),
            Err(SolverError::TooFewBlocks { n: 0 })
        ));
    }

    #[test]
    fn three_blocks_closed_form() {
        let s = solve_optimal_reports(3).unwrap();
        let sqrt3 = 3f64.sqrt();
        assert!((s.claimed_intervals()[0] - (3.0 - sqrt3)).abs() < 1e-9);
        assert!((s.claimed_intervals()[1] - (sqrt3 - 1.0)).abs() < 1e-9);
        let total = s.claimed_intervals().iter().sum::<f64>() + s.terminal_claim();
        assert!((total - 2.0).abs() < 1e-15);
        assert!(s.foc_residual_norm() < 1e-10);
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let opts = SolverOptions {
            max_iterations: 1,
            ..SolverOptions::default()
        };
        match solve_optimal_reports_with(60, &opts) {
            Err(SolverError::NonConvergence {
                best,
                residual_norm,
                ..
            }) => {
                assert_eq!(best.len(), 59);
                assert!(residual_norm >= 1e-10);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn capped_terminal_claim_implies_cap() {
        let cap = 99.0;
        let opts = SolverOptions {
            honest_belief_cap: Some(cap),
            ..SolverOptions::default()
        };
        let s = solve_optimal_reports_with(10, &opts).unwrap();
        let last_difficulty = 1.0 / s.claimed_intervals().iter().product::<f64>();
        assert!((s.terminal_claim() - last_difficulty / cap).abs() < 1e-12);
        let total = s.claimed_intervals().iter().sum::<f64>() + s.terminal_claim();
        assert!((total - 9.0).abs() < 1e-12);
        assert!(s.foc_residual_norm() < 1e-10);
        // Reserving time for the last block can only slow the attack down.
        assert!(s.reduced_objective() > solve_optimal_reports(10).unwrap().reduced_objective());
    }

    #[test]
    fn implausibly_small_cap_is_rejected() {
        let opts = SolverOptions {
            honest_belief_cap: Some(0.01),
            ..SolverOptions::default()
        };
        assert!(matches!(
            solve_optimal_reports_with(2, &opts),
            Err(SolverError::CapInfeasible { .. })
        ));
    }
}
