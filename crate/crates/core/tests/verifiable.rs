use chainrace_core::verifiable::{
    attack_duration, deficit_overcome, min_blocks_for_deficit, optimal_power_schedule,
    required_power, threshold_capacity, BlocksNeeded, PowerSchedule, VerifiablePlan,
};
use chainrace_core::MiningPower;
use proptest::prelude::*;

fn m(x: f64) -> MiningPower {
    MiningPower::new(x).unwrap()
}

/// Duration of a schedule, summed block by block from difficulty 1.
fn schedule_time(powers: &[f64]) -> f64 {
    let mut difficulty = 1.0;
    let mut total = 0.0;
    for &p in powers {
        total += difficulty / p;
        difficulty = p;
    }
    total
}

#[test]
fn closed_form_anchors() {
    assert_eq!(required_power(2.0, 3).unwrap().get(), 27.0);
    assert_eq!(required_power(2.0, 4).unwrap().get(), 16.0);
    assert_eq!(required_power(3.0, 4).unwrap().get(), 256.0);
    assert_eq!(attack_duration(m(16.0), 4).unwrap(), 2.0);
    assert_eq!(deficit_overcome(m(16.0), 4).unwrap(), 2.0);
}

#[test]
fn gain_is_increasing_and_bounded() {
    for cap in [1.5, 3.0, 7.5, 16.0, 99.0] {
        let bound = f64::ln(cap);
        let mut previous = 0.0;
        for k in 1..=1_000_000u64 {
            let gain = deficit_overcome(m(cap), k).unwrap();
            assert!(gain > previous, "cap {cap}, k {k}");
            assert!(gain < bound, "cap {cap}, k {k}");
            previous = gain;
        }
        // The remaining shortfall is ln(cap)^2 / (2k) to leading order.
        let shortfall = bound - previous;
        assert!(
            shortfall > 0.0 && shortfall <= bound * bound / 2e6,
            "cap {cap}: {shortfall}"
        );
    }
}

#[test]
fn feasibility_threshold() {
    assert_eq!(
        min_blocks_for_deficit(m(3.0), 2.0).unwrap(),
        BlocksNeeded::Infeasible {
            max_deficit: f64::ln(3.0)
        }
    );
    assert_eq!(
        min_blocks_for_deficit(m(27.0), 2.0).unwrap(),
        BlocksNeeded::Feasible { blocks: 3 }
    );
    let threshold = threshold_capacity(2.0).unwrap();
    assert!(threshold > 7.38 && threshold < 7.40);
    assert!(matches!(
        min_blocks_for_deficit(m(7.38), 2.0).unwrap(),
        BlocksNeeded::Infeasible { .. }
    ));
    match min_blocks_for_deficit(m(7.40), 2.0).unwrap() {
        BlocksNeeded::Feasible { blocks } => {
            assert!(deficit_overcome(m(7.40), blocks).unwrap() >= 2.0);
            assert!(deficit_overcome(m(7.40), blocks - 1).unwrap() < 2.0);
        }
        other => panic!("expected a feasible attack, got {other:?}"),
    }
}

#[test]
fn optimal_schedule_blocks_take_equal_time() {
    for (cap, k) in [(16.0, 4u64), (3.0, 7), (99.0, 20), (1.01, 3)] {
        let s = optimal_power_schedule(m(cap), k).unwrap();
        let mut difficulty = 1.0;
        let expected = cap.powf(-1.0 / k as f64);
        for &p in s.powers() {
            assert!((difficulty / p - expected).abs() < 1e-12);
            difficulty = p;
        }
    }
}

#[test]
fn plan_documents_reject_bad_schedules() {
    let plan = VerifiablePlan::optimal(m(16.0), 4).unwrap();
    let good = serde_json::to_value(&plan).unwrap();
    assert_eq!(good["powers"], serde_json::json!([2.0, 4.0, 8.0, 16.0]));
    assert_eq!(good["duration"], serde_json::json!(2.0));

    let mut over = good.clone();
    over["powers"][1] = serde_json::json!(17.0);
    assert!(serde_json::from_value::<VerifiablePlan>(over).is_err());

    let mut extra = good.clone();
    extra["note"] = serde_json::json!("x");
    assert!(serde_json::from_value::<VerifiablePlan>(extra).is_err());

    let mut wrong_duration = good;
    wrong_duration["duration"] = serde_json::json!(1.5);
    assert!(serde_json::from_value::<VerifiablePlan>(wrong_duration).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn perturbed_schedules_never_beat_the_ramp(
        cap in 1.05f64..200.0,
        k in 1u64..=20,
        noise in proptest::collection::vec(-1.0f64..1.0, 20),
        scale in 1e-6f64..0.5,
    ) {
        let optimal = attack_duration(m(cap), k).unwrap();
        let ramp = optimal_power_schedule(m(cap), k).unwrap();
        let powers: Vec<f64> = ramp
            .powers()
            .iter()
            .zip(&noise)
            .map(|(p, z)| (p * (scale * z).exp()).min(cap))
            .collect();
        let perturbed = PowerSchedule::new(powers.clone(), m(cap)).unwrap();
        let time = schedule_time(&powers);
        prop_assert!((perturbed.idealized_duration() - time).abs() <= 1e-12 * time);
        prop_assert!(time >= optimal - 1e-9, "{} < {}", time, optimal);
    }

    #[test]
    fn required_power_overcomes_its_deficit(a in 0.1f64..5.0, extra in 1u64..40) {
        let k = a.ceil() as u64 + extra;
        let cap = required_power(a, k).unwrap();
        let gain = deficit_overcome(cap, k).unwrap();
        prop_assert!((gain - a).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn min_blocks_is_minimal(cap in 1.2f64..500.0, fraction in 0.05f64..0.95) {
        let a = fraction * cap.ln();
        match min_blocks_for_deficit(m(cap), a).unwrap() {
            BlocksNeeded::Feasible { blocks } => {
                prop_assert!(deficit_overcome(m(cap), blocks).unwrap() >= a);
                if blocks > 1 {
                    prop_assert!(deficit_overcome(m(cap), blocks - 1).unwrap() < a);
                }
            }
            BlocksNeeded::Infeasible { .. } => prop_assert!(false, "a < ln(cap) must be feasible"),
        }
    }
}
