use chainrace_core::unverifiable::{
    brute_force_reports, foc_residuals, max_deficit_unverifiable, reduced_objective,
    shoot_optimal_reports, solve_optimal_reports, solve_optimal_reports_with,
    unverifiable_objective, SolverOptions, UnverifiablePlan,
};
use chainrace_core::MiningPower;

fn m(x: f64) -> MiningPower {
    MiningPower::new(x).unwrap()
}

/// (N, T* at M_a = 3, A_max at M_a = 3, T* at M_a = 99, A_max at M_a = 99)
const PUBLISHED: [(u64, f64, f64, f64, f64); 5] = [
    (3, 0.96, 2.04, 0.03, 2.97),
    (5, 1.43, 3.57, 0.04, 4.96),
    (10, 2.21, 7.79, 0.07, 9.93),
    (20, 3.04, 16.96, 0.09, 19.91),
    (100, 4.37, 95.63, 0.13, 99.87),
];

/// `1 + 1/T_1 + 1/(T_1 T_2) + ...` from the outermost term inward.
fn nested_objective(intervals: &[f64]) -> f64 {
    intervals.iter().rev().fold(1.0, |tail, t| 1.0 + tail / t)
}

#[test]
fn small_n_against_grid_search() {
    for n in 3..=5u64 {
        let solved = solve_optimal_reports(n).unwrap();
        assert!(solved.foc_residual_norm() < 1e-9, "N = {n}");
        let grid = brute_force_reports(n, 1e-3).unwrap();
        assert!((solved.reduced_objective() - grid.reduced_objective()).abs() < 3e-3);
        // The grid is a subset of the feasible set.
        assert!(solved.reduced_objective() <= grid.reduced_objective() + 1e-12);
    }
}

#[test]
fn three_block_closed_form() {
    let s = solve_optimal_reports(3).unwrap();
    let root3 = 3f64.sqrt();
    assert!((s.claimed_intervals()[0] - (3.0 - root3)).abs() < 1e-8);
    assert!((s.claimed_intervals()[1] - (root3 - 1.0)).abs() < 1e-8);
}

#[test]
fn intervals_strictly_decrease_up_to_1000_blocks() {
    for n in 3..=1000u64 {
        let s = solve_optimal_reports(n).unwrap();
        let t = s.claimed_intervals();
        assert!(t.windows(2).all(|w| w[0] > w[1]), "N = {n}");
        assert!(s.foc_residual_norm() < 1e-10, "N = {n}");
        assert!((t.iter().sum::<f64>() - (n - 1) as f64).abs() < 1e-9 * n as f64);
        assert!(
            (nested_objective(t) - s.reduced_objective()).abs() < 1e-12 * s.reduced_objective()
        );
    }
}

#[test]
fn agrees_with_shooting() {
    for n in (3..=200u64).step_by(7) {
        let solved = solve_optimal_reports(n).unwrap();
        let shot = shoot_optimal_reports(n).unwrap();
        for (a, b) in solved.claimed_intervals().iter().zip(&shot) {
            assert!((a - b).abs() < 1e-8, "N = {n}: {a} vs {b}");
        }
    }
}

#[test]
fn seeds_reach_the_same_optimum() {
    for n in [4u64, 17, 250] {
        let base = solve_optimal_reports(n).unwrap();
        for seed in 1..=10 {
            let other = solve_optimal_reports_with(n, &SolverOptions::with_seed(seed)).unwrap();
            for (a, b) in base
                .claimed_intervals()
                .iter()
                .zip(other.claimed_intervals())
            {
                assert!((a - b).abs() < 1e-8, "N = {n}, seed {seed}");
            }
        }
    }
}

#[test]
fn perturbations_do_not_improve_the_optimum() {
    let s = solve_optimal_reports(12).unwrap();
    let best = s.reduced_objective();
    let t = s.claimed_intervals();
    for i in 0..t.len() {
        for j in 0..t.len() {
            if i == j {
                continue;
            }
            let mut moved = t.to_vec();
            moved[i] += 1e-4;
            moved[j] -= 1e-4;
            assert!(reduced_objective(&moved).unwrap() >= best);
        }
    }
}

#[test]
fn published_table_values() {
    for (n, t3, a3, t99, a99) in PUBLISHED {
        let s = solve_optimal_reports(n).unwrap();
        let d3 = unverifiable_objective(&s, m(3.0)).unwrap();
        let d99 = unverifiable_objective(&s, m(99.0)).unwrap();
        assert!((d3 - t3).abs() <= 0.005, "N = {n}: {d3}");
        assert!((d99 - t99).abs() <= 0.005, "N = {n}: {d99}");
        assert!((max_deficit_unverifiable(m(3.0), n).unwrap() - a3).abs() <= 0.005);
        assert!((max_deficit_unverifiable(m(99.0), n).unwrap() - a99).abs() <= 0.005);
    }
}

#[test]
fn scaled_duration_is_capacity_free() {
    for (n, ..) in PUBLISHED {
        let opts = SolverOptions::default();
        let a = 3.0
            * UnverifiablePlan::optimal(m(3.0), n, &opts)
                .unwrap()
                .actual_duration();
        let b = 99.0
            * UnverifiablePlan::optimal(m(99.0), n, &opts)
                .unwrap()
                .actual_duration();
        assert!((a - b).abs() <= 0.01 * a.max(b), "N = {n}");
    }
}

#[test]
fn residuals_vanish_only_at_the_optimum() {
    let s = solve_optimal_reports(8).unwrap();
    assert!(s.foc_residuals().norm() < 1e-10);
    // Against the full budget only the terminal claim is missing.
    let full = foc_residuals(s.claimed_intervals());
    assert!((full.constraint + s.terminal_claim()).abs() < 1e-14);
    assert!(foc_residuals(&[1.0; 7]).norm() > 0.5);
}
