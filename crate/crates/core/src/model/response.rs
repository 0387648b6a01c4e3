use crate::error::{Error, Result};
use crate::model::{MechanisticType, Params, P_CLAMP};
use crate::scalar::Scalar;

const MAX_ITERATIONS: usize = 200;

fn check_inputs<T: Scalar>(a: T, th: T, n0: T, tau: T) -> Result<()> {
    let bad = |what: &str, v: T| {
        Err(Error::InvalidParameter(format!(
            "{what} = {v} is out of range"
        )))
    };
    if !(a.is_finite() && a > T::zero()) {
        return bad("attack rate a", a);
    }
    if !(n0.is_finite() && n0 > T::zero()) {
        return bad("initial density n0", n0);
    }
    if !(th.is_finite() && th >= T::zero()) {
        return bad("handling time T_h", th);
    }
    if !(tau.is_finite() && tau >= T::zero()) {
        return bad("exposure time tau", tau);
    }
    Ok(())
}

/// Depletion exponent `s = ln(n0 / N_τ)`.
///
/// Separating variables in the Holling ODEs gives, with `N_τ = n0·e^{−s}`,
///
/// * type II:  `s/a + T_h·n0·(1 − e^{−s}) = τ`
/// * type III: `(e^{s} − 1)/(a·n0) + T_h·n0·(1 − e^{−s}) = τ`
///
/// Both left-hand sides are strictly increasing in `s`, vanish at `s = 0` and
/// reach `τ` no later than `a·τ` (type II) or `ln(1 + a·n0·τ)` (type III),
/// so a safeguarded Newton iteration on that bracket finds the unique root.
/// Working in `s` keeps both `p_τ ≈ s` for light predation and `N_τ ≈ 0`
/// for heavy predation accurate.
pub fn depletion_exponent<T: Scalar>(
    mech: MechanisticType,
    a: T,
    th: T,
    n0: T,
    tau: T,
) -> Result<T> {
    check_inputs(a, th, n0, tau)?;
    if tau == T::zero() {
        return Ok(T::zero());
    }
    // Lower bounds: the handling term never exceeds T_h·n0, and for type II
    // 1 − e^{−s} ≤ s as well. Type II is concave in s, so Newton started
    // from below climbs monotonically to the root.
    let decay = th * n0;
    let slack = (tau - decay).max(T::zero());
    let (mut lo, mut hi) = match mech {
        MechanisticType::TypeII => ((tau / (a.recip() + decay)).max(a * slack), a * tau),
        MechanisticType::TypeIII => ((a * n0 * slack).ln_1p(), (a * n0 * tau).ln_1p()),
    };
    let lo0 = lo;
    let eval = |s: T| -> (T, T) {
        match mech {
            MechanisticType::TypeII => (
                s / a - decay * (-s).exp_m1() - tau,
                a.recip() + decay * (-s).exp(),
            ),
            MechanisticType::TypeIII => (
                s.exp_m1() / (a * n0) - decay * (-s).exp_m1() - tau,
                s.exp() / (a * n0) + decay * (-s).exp(),
            ),
        }
    };

    let (g_hi, _) = eval(hi);
    if g_hi <= T::zero() {
        // Only reachable through rounding at the bracket end (e.g. T_h = 0).
        return Ok(hi);
    }
    let eps = T::epsilon() * T::lit(2.0);
    if lo > hi {
        lo = T::zero();
    }
    let mut s = match mech {
        MechanisticType::TypeII => lo0.min(hi),
        // Linearization at s = 0, kept inside the bracket.
        MechanisticType::TypeIII => (tau / ((a * n0).recip() + decay)).max(lo).min(hi),
    };
    let mut step_prev = T::infinity();
    for _ in 0..MAX_ITERATIONS {
        let (g, dg) = eval(s);
        if g == T::zero() {
            return Ok(s);
        }
        if g < T::zero() {
            lo = s;
        } else {
            hi = s;
        }
        let delta = g / dg;
        let newton = s - delta;
        let step;
        if dg > T::zero() && newton >= lo && newton <= hi && delta.abs() <= step_prev * T::lit(0.5)
        {
            let scale = newton.abs().max(T::min_positive_value());
            if delta.abs() <= eps * scale {
                return Ok(newton);
            }
            step = delta;
            s = newton;
        } else {
            let mid = lo + (hi - lo) * T::lit(0.5);
            step = s - mid;
            s = mid;
        }
        step_prev = step.abs();
        let scale = s.abs().max(T::min_positive_value());
        if hi - lo <= eps * scale {
            return Ok(s);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        lo: lo.as_f64(),
        hi: hi.as_f64(),
    })
}

/// Prey remaining after `tau` hours, `N_τ ∈ (0, n0]` (it underflows to zero
/// only when predation is overwhelming).
pub fn solve_prey_remaining<T: Scalar>(
    mech: MechanisticType,
    a: T,
    th: T,
    n0: T,
    tau: T,
) -> Result<T> {
    let s = depletion_exponent(mech, a, th, n0, tau)?;
    Ok(n0 * (-s).exp())
}

/// Expected consumed proportion `p_τ = (n0 − N_τ)/n0`, clamped into
/// `[1e-12, 1 − 1e-12]`.
pub fn expected_proportion<T: Scalar>(
    mech: MechanisticType,
    params: &Params<T>,
    n0: u32,
    tau: T,
) -> Result<T> {
    if n0 == 0 {
        return Err(Error::InvalidParameter(
            "initial prey density must be >= 1".into(),
        ));
    }
    let s = depletion_exponent(mech, params.a(), params.th(), T::lit(f64::from(n0)), tau)?;
    let p = -(-s).exp_m1();
    Ok(clamp_proportion(p))
}

pub(crate) fn clamp_proportion<T: Scalar>(p: T) -> T {
    let lo = T::lit(P_CLAMP);
    let hi = T::one() - lo.max(T::epsilon());
    p.max(lo).min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use MechanisticType::*;

    fn residual(mech: MechanisticType, a: f64, th: f64, n0: f64, tau: f64, n: f64) -> f64 {
        match mech {
            TypeII => (n0 / n).ln() / a + th * (n0 - n) - tau,
            TypeIII => (1.0 / n - 1.0 / n0) / a + th * (n0 - n) - tau,
        }
    }

    #[test]
    fn zero_time_leaves_everything() {
        assert_eq!(
            solve_prey_remaining(TypeII, 0.3, 0.7, 20.0, 0.0).unwrap(),
            20.0
        );
        let p = Params::from_natural(0.3, 0.7, None).unwrap();
        assert_eq!(expected_proportion(TypeII, &p, 20, 0.0).unwrap(), 1e-12);
    }

    #[test]
    fn closed_forms_without_handling_time() {
        let n = solve_prey_remaining(TypeII, 0.1, 0.0, 50.0, 24.0).unwrap();
        assert!((n - 50.0 * (-2.4f64).exp()).abs() < 1e-12);
        assert!((n - 4.535_898).abs() < 1e-6);
        let n3 = solve_prey_remaining(TypeIII, 0.01f64, 0.0, 100.0, 24.0).unwrap();
        assert!((n3 - 4.0).abs() < 1e-12);
        let p = Params {
            log_a: 0.1f64.ln(),
            log_th: f64::NEG_INFINITY,
            log_lambda: None,
        };
        let pt = expected_proportion(TypeII, &p, 50, 24.0).unwrap();
        assert!((pt - (1.0 - (-2.4f64).exp())).abs() < 1e-12);
        assert!((pt - 0.909_282).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(solve_prey_remaining(TypeII, 0.0, 0.7, 20.0, 24.0).is_err());
        assert!(solve_prey_remaining(TypeII, f64::NAN, 0.7, 20.0, 24.0).is_err());
        assert!(solve_prey_remaining(TypeIII, 0.5, 0.7, -1.0, 24.0).is_err());
        assert!(solve_prey_remaining(TypeIII, 0.5, 0.7, 20.0, f64::INFINITY).is_err());
    }

    #[test]
    fn residuals_are_tiny_on_extremes() {
        for &mech in &[TypeII, TypeIII] {
            for &a in &[1e-4, 0.05, 0.5, 5.0, 200.0] {
                for &th in &[0.0, 1e-3, 0.7, 5.0, 50.0] {
                    for &n0 in &[1.0, 7.0, 300.0] {
                        for &tau in &[1e-3, 24.0, 48.0] {
                            let n = solve_prey_remaining(mech, a, th, n0, tau).unwrap();
                            assert!(n <= n0 && n >= 0.0);
                            if n > 1e-200 {
                                let r = residual(mech, a, th, n0, tau, n);
                                let scale = 1.0 + tau;
                                assert!(
                                    r.abs() < 1e-10 * scale,
                                    "{mech:?} a={a} th={th} n0={n0} tau={tau} r={r}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_precision_solves() {
        let n = solve_prey_remaining(TypeII, 0.5f32, 0.7, 20.0, 24.0).unwrap();
        let n64 = solve_prey_remaining(TypeII, 0.5f64, 0.7, 20.0, 24.0).unwrap();
        assert!((f64::from(n) - n64).abs() < 1e-4);
    }
}
