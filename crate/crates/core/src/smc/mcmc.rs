use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{log_likelihood, ModelSpec, Observation, Params};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::smc::{MoveConfig, ParticleSet};

const VARIANCE_FLOOR: f64 = 1e-8;

/// Number of MCMC iterations `R` so that a particle stays put with
/// probability at most `c` given per-iteration acceptance `p`:
/// the smallest integer with `R ≥ log c / log(1 − p)`. `p` is floored at
/// `1/J` and the result capped at `cap`.
pub fn move_iterations(c: f64, p: f64, j: usize, cap: usize) -> usize {
    let p = p.max(1.0 / j.max(1) as f64);
    if p >= 1.0 {
        return 1;
    }
    let r = c.ln() / (1.0 - p).ln();
    // Guard against ratios like 2.0000000000000004 from rounding.
    let r = (r - 1e-9).ceil();
    (r.max(1.0) as usize).min(cap.max(1))
}

/// Metropolis–Hastings decision for a symmetric proposal:
/// accept with probability `min(1, exp(Δ))`.
#[inline]
pub fn mh_accept(delta_log_target: f64, uniform: f64) -> bool {
    delta_log_target >= 0.0 || uniform.ln() < delta_log_target
}

/// Unnormalized log posterior: log prior plus the log-likelihood of every
/// observation in `history`. `-inf` if any term cannot be evaluated.
pub fn log_target<T: Scalar>(
    model: &ModelSpec<T>,
    params: &Params<T>,
    history: &[Observation<T>],
) -> T {
    let mut acc = model.prior_log_density(params);
    for obs in history {
        match log_likelihood(model, params, obs) {
            Ok(l) => acc = acc + l,
            Err(_) => return T::neg_infinity(),
        }
    }
    if acc.is_nan() {
        T::neg_infinity()
    } else {
        acc
    }
}

/// Gaussian random-walk proposal in log-parameter space.
#[derive(Clone, Debug)]
pub struct ProposalKernel {
    chol: DMatrix<f64>,
    /// True when the covariance was singular and the floored diagonal is used.
    pub diagonal_fallback: bool,
}

impl ProposalKernel {
    /// `N(0, scale · cov)`; falls back to the per-coordinate variances floored
    /// at `1e-8` if `cov` has no Cholesky factor.
    pub fn from_covariance(cov: &DMatrix<f64>, scale: f64) -> Self {
        let scaled = cov * scale;
        let finite = scaled.iter().all(|x| x.is_finite());
        if finite {
            if let Some(ch) = scaled.clone().cholesky() {
                let l = ch.l();
                if l.diagonal().iter().all(|&d| d > 0.0) {
                    return Self {
                        chol: l,
                        diagonal_fallback: false,
                    };
                }
            }
        }
        let dim = cov.nrows();
        let mut chol = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let v = if scaled[(k, k)].is_finite() {
                scaled[(k, k)]
            } else {
                0.0
            };
            chol[(k, k)] = v.max(VARIANCE_FLOOR).sqrt();
        }
        Self {
            chol,
            diagonal_fallback: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn propose<T: Scalar, R: Rng + ?Sized>(&self, from: &[T], rng: &mut R) -> Vec<T> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &self.chol * z;
        from.iter()
            .zip(step.iter())
            .map(|(&x, &s)| x + T::lit(s))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveReport {
    /// Accepted fraction in the probing pass.
    pub probe_acceptance: f64,
    /// Total MCMC iterations including the probing pass.
    pub iterations: usize,
    /// Accepted fraction per iteration.
    pub acceptance: Vec<f64>,
    pub diagonal_fallback: bool,
}

/// Rejuvenates a freshly resampled set with MH moves targeting the posterior
/// given `history`: one probing pass to estimate the acceptance rate `p`, then
/// `R − 1` more passes with `R` from [`move_iterations`].
///
/// Randomness for particle `j` in pass `r` comes from its own stream keyed by
/// `(stream_key, r, j)`, so results do not depend on thread scheduling.
pub fn move_step<T: Scalar>(
    ps: &mut ParticleSet<T>,
    history: &[Observation<T>],
    cfg: &MoveConfig,
    kernel: &ProposalKernel,
    seed: u64,
    stream_key: &[u64],
) -> MoveReport {
    let model = ps.model.clone();
    let j = ps.len();
    let mut coords: Vec<Vec<T>> = ps.particles.iter().map(Params::coords).collect();
    let mut targets: Vec<T> = ps
        .particles
        .par_iter()
        .map(|p| log_target(&model, p, history))
        .collect();

    let run_pass = |pass: u64, coords: &mut Vec<Vec<T>>, targets: &mut Vec<T>| -> usize {
        coords
            .par_iter_mut()
            .zip(targets.par_iter_mut())
            .enumerate()
            .map(|(idx, (c, t))| {
                let mut key = stream_key.to_vec();
                key.extend_from_slice(&[pass, idx as u64]);
                let mut rng = stream_rng(seed, Stream::Mcmc, &key);
                let proposal = kernel.propose(c, &mut rng);
                let cand = log_target(&model, &Params::from_coords(&proposal), history);
                let u: f64 = rng.random();
                let delta = (cand - *t).as_f64();
                if cand.is_finite() && mh_accept(delta, u) {
                    *c = proposal;
                    *t = cand;
                    1
                } else {
                    0
                }
            })
            .sum()
    };

    let accepted = run_pass(0, &mut coords, &mut targets);
    let probe = accepted as f64 / j as f64;
    let iterations = move_iterations(cfg.c, probe, j, cfg.max_iterations);
    let mut acceptance = vec![probe];
    for pass in 1..iterations {
        let a = run_pass(pass as u64, &mut coords, &mut targets);
        acceptance.push(a as f64 / j as f64);
    }
    ps.particles = coords.iter().map(|c| Params::from_coords(c)).collect();
    MoveReport {
        probe_acceptance: probe,
        iterations,
        acceptance,
        diagonal_fallback: kernel.diagonal_fallback,
    }
}
