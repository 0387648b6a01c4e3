//! Data-annealed sequential Monte Carlo over each model's parameters.
//!
//! Each observation reweights the particles by its likelihood and adds the
//! log of the weight normalizer to the model's log evidence. When the
//! effective sample size falls below the threshold the set is resampled and
//! rejuvenated with random-walk Metropolis–Hastings moves.

mod mcmc;
mod state;

pub use mcmc::{log_target, mh_accept, move_iterations, move_step, MoveReport, ProposalKernel};
pub use state::{DesignState, ModelUpdate, UpdateReport};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_likelihood, ModelSpec, Observation, Params};
use crate::scalar::{log_sum_exp, Scalar};

/// Particle counts above this are reweighted in parallel.
const PAR_THRESHOLD: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoveConfig {
    /// Tolerated probability that a particle never moves.
    pub c: f64,
    /// Resample when `ESS < ess_threshold_frac · J`.
    pub ess_threshold_frac: f64,
    /// Multiplier on the weighted particle covariance used as the proposal.
    pub proposal_scale: f64,
    /// Upper bound on MCMC iterations per move step.
    pub max_iterations: usize,
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self {
            c: 0.01,
            ess_threshold_frac: 0.5,
            proposal_scale: 1.0,
            max_iterations: 100,
        }
    }
}

impl MoveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "move tolerance c must be in (0,1), got {}",
                self.c
            )));
        }
        if !(self.ess_threshold_frac > 0.0 && self.ess_threshold_frac <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ESS threshold fraction must be in (0,1], got {}",
                self.ess_threshold_frac
            )));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::InvalidParameter("proposal scale must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `1 / Σ W²` for normalized weights.
pub fn effective_sample_size<T: Scalar>(weights: &[T]) -> T {
    let sum_sq = weights.iter().fold(T::zero(), |acc, &w| acc + w * w);
    sum_sq.recip()
}

/// Systematic resampling: one uniform offset, `J` evenly spaced positions.
/// Particle `j` is copied between `⌊J·W_j⌋` and `⌈J·W_j⌉` times.
pub fn systematic_indices<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> Vec<usize> {
    let j = weights.len();
    let jf = j as f64;
    let offset: f64 = rng.random();
    let mut out = Vec::with_capacity(j);
    let mut idx = 0usize;
    let mut upper = weights.first().map_or(0.0, |w| w.as_f64()) * jf;
    for k in 0..j {
        let pos = offset + k as f64;
        while pos >= upper && idx + 1 < j {
            idx += 1;
            upper += weights[idx].as_f64() * jf;
        }
        out.push(idx);
    }
    out
}

/// Weighted particle approximation of one model's posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParticleSet<T> {
    pub model: ModelSpec<T>,
    pub particles: Vec<Params<T>>,
    pub weights: Vec<T>,
    #[serde(with = "crate::serde_float")]
    pub log_evidence: T,
    #[serde(with = "crate::serde_float")]
    pub ess: T,
    /// Observations absorbed so far.
    pub observations: usize,
}

impl<T: Scalar> ParticleSet<T> {
    pub fn from_prior<R: Rng + ?Sized>(model: ModelSpec<T>, j: usize, rng: &mut R) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidParameter(
                "particle count must be >= 1".into(),
            ));
        }
        let particles = (0..j).map(|_| model.prior_sample(rng)).collect();
        Ok(Self::from_particles(model, particles))
    }

    /// Equally weighted set with zero log evidence.
    pub fn from_particles(model: ModelSpec<T>, particles: Vec<Params<T>>) -> Self {
        let j = particles.len();
        Self {
            model,
            weights: vec![T::one() / T::of_usize(j); j],
            particles,
            log_evidence: T::zero(),
            ess: T::of_usize(j),
            observations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// `log f(obs | θ_j)` for every particle.
    pub fn log_likelihoods(&self, obs: &Observation<T>) -> Result<Vec<T>> {
        let eval = |p: &Params<T>| log_likelihood(&self.model, p, obs);
        if self.len() >= PAR_THRESHOLD {
            self.particles.par_iter().map(eval).collect()
        } else {
            self.particles.iter().map(eval).collect()
        }
    }

    /// Importance reweighting on one new observation. Returns the log of the
    /// incremental evidence `Σ_j W_j f(y | θ_j)`, which is also added to
    /// `log_evidence`. The set is left untouched on error.
    pub fn reweight(&mut self, obs: &Observation<T>) -> Result<T> {
        let ll = self.log_likelihoods(obs)?;
        let logw: Vec<T> = self
            .weights
            .iter()
            .zip(&ll)
            .map(|(&w, &l)| {
                if w > T::zero() {
                    w.ln() + l
                } else {
                    T::neg_infinity()
                }
            })
            .collect();
        let log_inc = log_sum_exp(&logw);
        if !log_inc.is_finite() {
            let max_ll = ll.iter().copied().fold(T::neg_infinity(), T::max);
            return Err(Error::DegenerateUpdate {
                model: self.model.id,
                max_log_likelihood: max_ll.as_f64(),
            });
        }
        for (w, lw) in self.weights.iter_mut().zip(&logw) {
            *w = (*lw - log_inc).exp();
        }
        // Renormalize the rounding residue away.
        let total = self.weights.iter().fold(T::zero(), |a, &w| a + w);
        for w in &mut self.weights {
            *w = *w / total;
        }
        self.ess = effective_sample_size(&self.weights);
        self.log_evidence = self.log_evidence + log_inc;
        self.observations += 1;
        Ok(log_inc)
    }

    /// Systematic resampling; weights reset to `1/J`, ESS to `J`.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let idx = systematic_indices(&self.weights, rng);
        self.particles = idx.iter().map(|&i| self.particles[i]).collect();
        let j = self.len();
        self.weights = vec![T::one() / T::of_usize(j); j];
        self.ess = T::of_usize(j);
    }

    /// Weighted mean and (population) covariance of the log-scale particles.
    pub fn weighted_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let dim = self.model.dim();
        let mut mean = DVector::zeros(dim);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let w = w.as_f64();
            for (k, c) in p.coords().iter().enumerate() {
                mean[k] += w * c.as_f64();
            }
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let w = w.as_f64();
            let c: Vec<f64> = p.coords().iter().map(|x| x.as_f64()).collect();
            for a in 0..dim {
                let da = c[a] - mean[a];
                for b in 0..=a {
                    cov[(a, b)] += w * da * (c[b] - mean[b]);
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        (mean, cov)
    }
}

/// Bayesian D-posterior precision `1 / det(Σ̂)` of a particle set, held on the
/// log scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DPrecision {
    /// `−log det Σ̂`; `+∞` when the covariance is not positive definite.
    #[serde(with = "crate::serde_float")]
    pub log_precision: f64,
    pub degenerate: bool,
}

impl DPrecision {
    pub fn precision(&self) -> f64 {
        self.log_precision.exp()
    }
}

pub fn d_posterior_precision<T: Scalar>(ps: &ParticleSet<T>) -> DPrecision {
    let (_, cov) = ps.weighted_moments();
    match log_det_spd(&cov) {
        Some(ld) => DPrecision {
            log_precision: -ld,
            degenerate: false,
        },
        None => {
            log::warn!(
                "model {}: weighted covariance is not positive definite, reporting infinite precision",
                ps.model.id
            );
            DPrecision {
                log_precision: f64::INFINITY,
                degenerate: true,
            }
        }
    }
}

/// `log det` through a Cholesky factor; `None` unless strictly positive definite.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut ld = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) {
            return None;
        }
        ld += 2.0 * d.ln();
    }
    Some(ld)
}

/// Posterior model probabilities: softmax of `log Z_m + log π₀(m)`.
pub fn posterior_model_probs<T: Scalar>(log_evidences: &[T], prior_probs: &[T]) -> Vec<T> {
    let logits: Vec<T> = log_evidences
        .iter()
        .zip(prior_probs)
        .map(|(&z, &p)| z + p.ln())
        .collect();
    let norm = log_sum_exp(&logits);
    if !norm.is_finite() {
        let total = prior_probs.iter().fold(T::zero(), |a, &p| a + p);
        return prior_probs.iter().map(|&p| p / total).collect();
    }
    logits.iter().map(|&l| (l - norm).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn set_with(particles: Vec<[f64; 2]>, weights: Vec<f64>) -> ParticleSet<f64> {
        let m = ModelSpec::standard(3, 1.0).unwrap();
        let mut ps = ParticleSet::from_particles(
            m,
            particles
                .into_iter()
                .map(|c| Params::from_coords(&c))
                .collect(),
        );
        ps.weights = weights;
        ps.ess = effective_sample_size(&ps.weights);
        ps
    }

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&vec![0.01f64; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(effective_sample_size(&[1.0f64, 0.0, 0.0]), 1.0);
        assert_eq!(effective_sample_size(&[0.5f64, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn constant_likelihood_keeps_weights() {
        let mut rng = stream_rng(1, Stream::Prior, &[]);
        let m = ModelSpec::<f64>::standard(3, 1.0).unwrap();
        let mut ps = ParticleSet::from_prior(m, 50, &mut rng).unwrap();
        // All particles identical: every likelihood equal.
        let p0 = ps.particles[0];
        ps.particles.iter_mut().for_each(|p| *p = p0);
        let obs = Observation::new(10, 4, 24.0).unwrap();
        let l = log_likelihood(&ps.model, &p0, &obs).unwrap();
        let before = ps.weights.clone();
        let inc = ps.reweight(&obs).unwrap();
        assert!((inc - l).abs() < 1e-12);
        for (a, b) in before.iter().zip(&ps.weights) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(ps.observations, 1);
    }

    #[test]
    fn single_particle_reweight() {
        let mut ps = set_with(vec![[-1.0, -2.0]], vec![1.0]);
        let obs = Observation::new(30, 12, 24.0).unwrap();
        let l = log_likelihood(&ps.model, &ps.particles[0], &obs).unwrap();
        ps.reweight(&obs).unwrap();
        assert_eq!(ps.weights, vec![1.0]);
        assert!((ps.log_evidence - l).abs() < 1e-12);
    }

    #[test]
    fn resample_uniform_is_permutation() {
        let j = 64;
        let mut ps = set_with(
            (0..j).map(|k| [k as f64, 0.0]).collect(),
            vec![1.0 / j as f64; j],
        );
        let mut rng = stream_rng(2, Stream::Resample, &[]);
        ps.resample(&mut rng);
        let mut seen: Vec<i64> = ps.particles.iter().map(|p| p.log_a as i64).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..j as i64).collect::<Vec<_>>());
    }

    #[test]
    fn resample_point_mass() {
        let mut w = vec![0.0; 10];
        w[0] = 1.0;
        let mut ps = set_with((0..10).map(|k| [k as f64, 0.0]).collect(), w);
        let mut rng = stream_rng(3, Stream::Resample, &[]);
        ps.resample(&mut rng);
        assert!(ps.particles.iter().all(|p| p.log_a == 0.0));
        assert_eq!(ps.ess, 10.0);
    }

    #[test]
    fn resample_preserves_weighted_mean() {
        let j = 200;
        let xs: Vec<f64> = (0..j).map(|k| (k as f64 * 0.37).sin() * 3.0).collect();
        let raw: Vec<f64> = (0..j).map(|k| 1.0 + (k as f64 * 1.3).cos()).collect();
        let tot: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / tot).collect();
        let mean: f64 = xs.iter().zip(&w).map(|(x, w)| x * w).sum();
        let var: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum();
        let base = set_with(xs.iter().map(|&x| [x, 0.0]).collect(), w);
        let reps = 1000;
        let mut acc = 0.0;
        for r in 0..reps {
            let mut ps = base.clone();
            let mut rng = stream_rng(4, Stream::Resample, &[r]);
            ps.resample(&mut rng);
            acc += ps.particles.iter().map(|p| p.log_a).sum::<f64>() / j as f64;
        }
        let avg = acc / reps as f64;
        assert!((avg - mean).abs() < 3.0 * var.sqrt() / (j as f64).sqrt());
    }

    #[test]
    fn precision_examples() {
        // Four points at (±1, ±1): identity covariance.
        let ps = set_with(
            vec![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]],
            vec![0.25; 4],
        );
        let p = d_posterior_precision(&ps);
        assert!(p.log_precision.abs() < 1e-12);
        assert!((p.precision() - 1.0).abs() < 1e-12);
        let wide = set_with(
            vec![[2.0, 1.0], [2.0, -1.0], [-2.0, 1.0], [-2.0, -1.0]],
            vec![0.25; 4],
        );
        assert!((d_posterior_precision(&wide).precision() - 0.25).abs() < 1e-12);
        let degenerate = set_with(vec![[1.0, 1.0]; 4], vec![0.25; 4]);
        let d = d_posterior_precision(&degenerate);
        assert!(d.degenerate && d.log_precision == f64::INFINITY);
    }

    #[test]
    fn model_prob_examples() {
        let p = posterior_model_probs(&[0.0f64; 4], &[0.25; 4]);
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let p = posterior_model_probs(&[0.0f64, f64::NEG_INFINITY], &[0.5, 0.5]);
        assert_eq!(p[1], 0.0);
        let p = posterior_model_probs(&[3f64.ln(), 0.0], &[0.5, 0.5]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn systematic_counts_within_one(raw in proptest::collection::vec(0.0f64..1.0, 1..200), seed in 0u64..1000) {
            let tot: f64 = raw.iter().sum();
            prop_assume!(tot > 0.0);
            let w: Vec<f64> = raw.iter().map(|x| x / tot).collect();
            let j = w.len();
            let mut rng = stream_rng(seed, Stream::Resample, &[]);
            let idx = systematic_indices(&w, &mut rng);
            prop_assert_eq!(idx.len(), j);
            let mut counts = vec![0usize; j];
            for i in idx { counts[i] += 1; }
            for (c, wk) in counts.iter().zip(&w) {
                let e = wk * j as f64;
                prop_assert!((*c as f64) >= e.floor() - 1e-9 && (*c as f64) <= e.ceil() + 1e-9, "count {} expected {}", c, e);
            }
        }

        #[test]
        fn reweight_keeps_simplex(seed in 0u64..500, n in 0u32..=20) {
            let mut rng = stream_rng(seed, Stream::Prior, &[]);
            let m = ModelSpec::<f64>::standard(1 + (seed % 4) as u8, 1.0).unwrap();
            let mut ps = ParticleSet::from_prior(m, 100, &mut rng).unwrap();
            for _ in 0..3 {
                ps.reweight(&Observation::new(20, n, 24.0).unwrap()).unwrap();
                let total: f64 = ps.weights.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-10);
                prop_assert!(ps.ess >= 1.0 - 1e-9 && ps.ess <= 100.0 + 1e-9);
            }
        }
    }
}
