mod common;

use fr_design::model::{log_pmf, solve_prey_remaining, MechanisticType};
use proptest::prelude::*;

// Frozen from the ODE oracle in common (Dop853, tolerances 1e-13).
const FROZEN_TYPE_II: f64 = 0.12881808592223126;

#[test]
fn frozen_type_ii_value() {
    let ode = common::ode_prey_remaining(MechanisticType::TypeII, 0.5, 0.7, 20.0, 24.0);
    assert!((ode - FROZEN_TYPE_II).abs() < 1e-14, "{ode}");
    let got = solve_prey_remaining(MechanisticType::TypeII, 0.5, 0.7, 20.0, 24.0).unwrap();
    assert!(
        ((got - FROZEN_TYPE_II) / FROZEN_TYPE_II).abs() < 1e-12,
        "{got}"
    );
    let bis = common::bisect_prey_remaining(MechanisticType::TypeII, 0.5, 0.7, 20.0, 24.0);
    assert!(
        ((bis - FROZEN_TYPE_II) / FROZEN_TYPE_II).abs() < 1e-12,
        "{bis}"
    );
}

#[test]
fn type_iii_agrees_with_both_oracles() {
    for &(a, th, n0) in &[
        (0.05, 0.0, 1.0),
        (5.0, 5.0, 300.0),
        (1.3, 0.02, 77.0),
        (0.2, 4.0, 2.0),
    ] {
        let got = solve_prey_remaining(MechanisticType::TypeIII, a, th, n0, 24.0).unwrap();
        let ode = common::ode_prey_remaining(MechanisticType::TypeIII, a, th, n0, 24.0);
        let bis = common::bisect_prey_remaining(MechanisticType::TypeIII, a, th, n0, 24.0);
        assert!(
            ((got - ode) / ode).abs() < 1e-9,
            "{a} {th} {n0}: {got} vs {ode}"
        );
        assert!(
            ((got - bis) / bis).abs() < 1e-9,
            "{a} {th} {n0}: {got} vs {bis}"
        );
    }
}

fn mech() -> impl Strategy<Value = MechanisticType> {
    prop_oneof![
        Just(MechanisticType::TypeII),
        Just(MechanisticType::TypeIII)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn remaining_prey_is_bounded_and_matches_bisection(
        m in mech(), a in 0.01f64..10.0, th in 0.0f64..10.0, n0 in 1u32..=300, tau in 0.01f64..72.0,
    ) {
        let n0 = f64::from(n0);
        let n = solve_prey_remaining(m, a, th, n0, tau).unwrap();
        prop_assert!(n > 0.0 && n <= n0);
        let bis = common::bisect_prey_remaining(m, a, th, n0, tau);
        prop_assert!(((n - bis) / bis).abs() < 1e-9, "{} vs {}", n, bis);
    }

    #[test]
    fn remaining_prey_falls_with_time_and_attack_rate(
        m in mech(), a in 0.01f64..5.0, th in 0.0f64..5.0, n0 in 1u32..=300, tau in 0.1f64..48.0,
    ) {
        let n0 = f64::from(n0);
        let base = solve_prey_remaining(m, a, th, n0, tau).unwrap();
        prop_assert!(solve_prey_remaining(m, a, th, n0, tau * 1.5).unwrap() <= base * (1.0 + 1e-12));
        prop_assert!(solve_prey_remaining(m, a * 1.5, th, n0, tau).unwrap() <= base * (1.0 + 1e-12));
    }

    #[test]
    fn pmfs_match_direct_products(
        n0 in 1u32..=120, p in 0.001f64..0.999, lambda in 0.001f64..5.0, frac in 0.0f64..=1.0,
    ) {
        let n = ((f64::from(n0) * frac).round() as u32).min(n0);
        let bb = log_pmf(n0, n, p, Some(lambda)).exp();
        let want = common::beta_binom_pmf(n0, n, p, lambda);
        prop_assert!((bb - want).abs() <= 1e-11 * want.max(1e-300) + 1e-300, "{} vs {}", bb, want);
        let b = log_pmf(n0, n, p, None).exp();
        let want = common::binom_pmf(n0, n, p);
        prop_assert!((b - want).abs() <= 1e-11 * want + 1e-300, "{} vs {}", b, want);
    }
}
