//! Reference implementations used as test oracles. They share no code with
//! the library: plain bisection, direct products and brute-force grids.
#![allow(dead_code)]

use fr_design::model::MechanisticType;
use ode_solvers::{Dop853, OutputType, System, Vector1};

/// `d ln N / dt` for the Holling equations, integrated on the log scale so
/// that heavy depletion keeps full relative accuracy.
struct LogHolling {
    mech: MechanisticType,
    a: f64,
    th: f64,
}

impl System<f64, Vector1<f64>> for LogHolling {
    fn system(&self, _t: f64, y: &Vector1<f64>, dy: &mut Vector1<f64>) {
        let n = y[0].exp();
        dy[0] = match self.mech {
            MechanisticType::TypeII => -self.a / (1.0 + self.a * self.th * n),
            MechanisticType::TypeIII => -self.a * n / (1.0 + self.a * self.th * n * n),
        };
    }
}

/// Prey remaining after `tau`, by adaptive 8th-order Runge-Kutta.
pub fn ode_prey_remaining(mech: MechanisticType, a: f64, th: f64, n0: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return n0;
    }
    // Step-point output: the last accepted step lands on tau (up to rounding).
    let mut solver = Dop853::from_param(
        LogHolling { mech, a, th },
        0.0,
        tau,
        tau,
        Vector1::new(n0.ln()),
        1e-13,
        1e-13,
        0.9,
        0.0,
        0.333,
        6.0,
        tau,
        0.0,
        1_000_000,
        1000,
        OutputType::Sparse,
    );
    solver.integrate().expect("ODE integration failed");
    let t_end = *solver.x_out().last().unwrap();
    assert!(
        (t_end - tau).abs() <= 1e-12 * tau,
        "stopped at {t_end}, wanted {tau}"
    );
    solver.y_out().last().unwrap()[0].exp()
}

/// Prey remaining by bisection on `t(N)`, the time needed to deplete `n0`
/// down to `N` (closed form for both types).
pub fn bisect_prey_remaining(mech: MechanisticType, a: f64, th: f64, n0: f64, tau: f64) -> f64 {
    // Work with u = ln N so that tiny remainders bisect in relative terms.
    let time_to = |u: f64| {
        let n = u.exp();
        match mech {
            MechanisticType::TypeII => (n0.ln() - u) / a + th * (n0 - n),
            MechanisticType::TypeIII => (1.0 / n - 1.0 / n0) / a + th * (n0 - n),
        }
    };
    let (mut lo, mut hi) = (n0.ln() - 1000.0, n0.ln());
    if time_to(lo) < tau {
        return lo.exp();
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if time_to(mid) > tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub fn bisect_proportion(mech: MechanisticType, a: f64, th: f64, n0: u32, tau: f64) -> f64 {
    let n0f = f64::from(n0);
    let p = 1.0 - bisect_prey_remaining(mech, a, th, n0f, tau) / n0f;
    p.clamp(1e-12, 1.0 - 1e-12)
}

pub fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| f64::from(k).ln()).sum()
}

pub fn ln_choose(n: u32, k: u32) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

pub fn binom_pmf(n0: u32, n: u32, p: f64) -> f64 {
    (ln_choose(n0, n) + f64::from(n) * p.ln() + f64::from(n0 - n) * (1.0 - p).ln()).exp()
}

/// Beta-binomial with mean `p` and `lambda = 1/(alpha + beta)`, as the
/// ratio of rising products.
pub fn beta_binom_pmf(n0: u32, n: u32, p: f64, lambda: f64) -> f64 {
    let (al, be) = (p / lambda, (1.0 - p) / lambda);
    let mut ln = ln_choose(n0, n);
    for i in 0..n {
        ln += (al + f64::from(i)).ln();
    }
    for i in 0..(n0 - n) {
        ln += (be + f64::from(i)).ln();
    }
    for i in 0..n0 {
        ln -= (al + be + f64::from(i)).ln();
    }
    ln.exp()
}

pub fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Posterior summaries of a two-parameter binomial model from a tensor grid.
#[derive(Debug, Clone, Copy)]
pub struct GridPosterior {
    pub mean: [f64; 2],
    pub sd: [f64; 2],
    pub log_evidence: f64,
}

const PRIOR_MEAN: f64 = -1.4;
const PRIOR_SD: f64 = 1.35;

fn grid_pass(
    mech: MechanisticType,
    data: &[(u32, u32)],
    tau: f64,
    n: usize,
    bounds: [[f64; 2]; 2],
) -> GridPosterior {
    let h = [
        (bounds[0][1] - bounds[0][0]) / n as f64,
        (bounds[1][1] - bounds[1][0]) / n as f64,
    ];
    let lc: Vec<f64> = data.iter().map(|&(d, k)| ln_choose(d, k)).collect();
    let mut logs = Vec::with_capacity(n * n);
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        let la = bounds[0][0] + (i as f64 + 0.5) * h[0];
        for j in 0..n {
            let lt = bounds[1][0] + (j as f64 + 0.5) * h[1];
            let mut l = normal_log_density(la, PRIOR_MEAN, PRIOR_SD)
                + normal_log_density(lt, PRIOR_MEAN, PRIOR_SD);
            for (&(d, k), c) in data.iter().zip(&lc) {
                let p = bisect_proportion(mech, la.exp(), lt.exp(), d, tau);
                l += c + f64::from(k) * p.ln() + f64::from(d - k) * (1.0 - p).ln();
            }
            logs.push(l);
            pts.push([la, lt]);
        }
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut mean = [0.0; 2];
    for (wi, p) in w.iter().zip(&pts) {
        mean[0] += wi * p[0] / total;
        mean[1] += wi * p[1] / total;
    }
    let mut var = [0.0; 2];
    for (wi, p) in w.iter().zip(&pts) {
        var[0] += wi * (p[0] - mean[0]).powi(2) / total;
        var[1] += wi * (p[1] - mean[1]).powi(2) / total;
    }
    GridPosterior {
        mean,
        sd: [var[0].sqrt(), var[1].sqrt()],
        log_evidence: top + (total * h[0] * h[1]).ln(),
    }
}

/// Posterior of a binomial model (3 or 4) under the standard prior, by
/// midpoint quadrature on an `n`×`n` grid over log a and log T_h. A first
/// pass spans ±5 prior sds; the second zooms to ±8 posterior sds.
pub fn grid_posterior(
    mech: MechanisticType,
    data: &[(u32, u32)],
    tau: f64,
    n: usize,
) -> GridPosterior {
    let span = 5.0 * PRIOR_SD;
    let wide = [[PRIOR_MEAN - span, PRIOR_MEAN + span]; 2];
    let first = grid_pass(mech, data, tau, n, wide);
    let zoom = |k: usize| {
        let lo = (first.mean[k] - 8.0 * first.sd[k]).max(wide[k][0]);
        let hi = (first.mean[k] + 8.0 * first.sd[k]).min(wide[k][1]);
        [lo, hi]
    };
    // Mass outside ±8 posterior sds is negligible for the evidence too.
    grid_pass(mech, data, tau, n, [zoom(0), zoom(1)])
}

/// Smallest `R` with `(1 − p)^R ≤ c`, counted up one by one.
pub fn count_moves(c: f64, p: f64) -> usize {
    let mut r = 1;
    let mut stay = 1.0 - p;
    while stay > c * (1.0 + 1e-12) {
        r += 1;
        stay *= 1.0 - p;
    }
    r
}
