use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::smc::{d_posterior_precision, ParticleSet};

/// Bins per marginal histogram.
pub const HISTOGRAM_BINS: usize = 40;
/// Histogram half-width in prior standard deviations.
pub const HISTOGRAM_SPAN_SDS: f64 = 4.0;

/// Weighted mean, covariance and ESS of one model's particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub model: u8,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub ess: f64,
}

impl ParticleSummary {
    pub fn of<T: Scalar>(ps: &ParticleSet<T>) -> Self {
        let (mean, cov) = ps.weighted_moments();
        let dim = mean.len();
        Self {
            model: ps.model.id,
            mean: mean.iter().copied().collect(),
            cov: (0..dim)
                .map(|r| (0..dim).map(|c| cov[(r, c)]).collect())
                .collect(),
            ess: ps.ess.as_f64(),
        }
    }
}

/// Weighted posterior histogram of one log-scale parameter over
/// `prior mean ± 4 prior sd`, normalized as a density. Mass outside the
/// window is reported separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub parameter: String,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub mean: f64,
    pub sd: f64,
    /// `HISTOGRAM_BINS + 1` bin edges.
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub outside_mass: f64,
}

pub const PARAMETER_NAMES: [&str; 3] = ["log_a", "log_th", "log_lambda"];

pub fn marginals<T: Scalar>(ps: &ParticleSet<T>) -> Vec<Marginal> {
    let priors = ps.model.prior.coordinates();
    let total: f64 = ps.weights.iter().map(|w| w.as_f64()).sum();
    priors
        .iter()
        .enumerate()
        .map(|(k, prior)| {
            let (pm, psd) = (prior.mean.as_f64(), prior.sd.as_f64());
            let lo = pm - HISTOGRAM_SPAN_SDS * psd;
            let width = 2.0 * HISTOGRAM_SPAN_SDS * psd / HISTOGRAM_BINS as f64;
            let mut mass = vec![0.0; HISTOGRAM_BINS];
            let mut outside = 0.0;
            let (mut m1, mut m2) = (0.0, 0.0);
            for (p, w) in ps.particles.iter().zip(&ps.weights) {
                let w = w.as_f64() / total;
                let x = p.coords()[k].as_f64();
                m1 += w * x;
                m2 += w * x * x;
                let bin = ((x - lo) / width).floor();
                if bin >= 0.0 && (bin as usize) < HISTOGRAM_BINS {
                    mass[bin as usize] += w;
                } else {
                    outside += w;
                }
            }
            Marginal {
                parameter: PARAMETER_NAMES[k].to_string(),
                prior_mean: pm,
                prior_sd: psd,
                mean: m1,
                sd: (m2 - m1 * m1).max(0.0).sqrt(),
                edges: (0..=HISTOGRAM_BINS)
                    .map(|b| lo + b as f64 * width)
                    .collect(),
                density: mass.iter().map(|m| m / width).collect(),
                outside_mass: outside,
            }
        })
        .collect()
}

/// What a client needs to draw one model's current posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub model: u8,
    #[serde(with = "crate::serde_float")]
    pub probability: f64,
    #[serde(with = "crate::serde_float")]
    pub log_evidence: f64,
    #[serde(with = "crate::serde_float")]
    pub log_precision: f64,
    pub ess: f64,
    pub marginals: Vec<Marginal>,
}

pub fn snapshot<T: Scalar>(ps: &ParticleSet<T>, probability: T) -> ModelSnapshot {
    ModelSnapshot {
        model: ps.model.id,
        probability: probability.as_f64(),
        log_evidence: ps.log_evidence.as_f64(),
        log_precision: d_posterior_precision(ps).log_precision,
        ess: ps.ess.as_f64(),
        marginals: marginals(ps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Params};

    #[test]
    fn histogram_of_prior_draws_integrates_to_inside_mass() {
        let m = ModelSpec::<f64>::standard(1, 1.0).unwrap();
        let mut rng = crate::rng::stream_rng(1, crate::rng::Stream::Prior, &[]);
        let ps = ParticleSet::from_prior(m, 4000, &mut rng).unwrap();
        let ms = marginals(&ps);
        assert_eq!(ms.len(), 3);
        for m in &ms {
            assert_eq!(m.edges.len(), HISTOGRAM_BINS + 1);
            let width = m.edges[1] - m.edges[0];
            let inside: f64 = m.density.iter().map(|d| d * width).sum();
            assert!((inside + m.outside_mass - 1.0).abs() < 1e-12);
            assert!((m.mean + 1.4).abs() < 0.1);
            assert!((m.sd - 1.35).abs() < 0.1);
        }
    }

    #[test]
    fn summary_of_point_mass() {
        let m = ModelSpec::<f64>::standard(3, 1.0).unwrap();
        let th = Params::from_natural(0.5, 0.7, None).unwrap();
        let ps = ParticleSet::from_particles(m, vec![th; 5]);
        let s = ParticleSummary::of(&ps);
        assert!((s.mean[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!(s.cov[0][0].abs() < 1e-15);
        assert_eq!(s.ess, 5.0);
        let snap = snapshot(&ps, 1.0);
        assert!(snap.log_precision > 50.0);
        let back: ModelSnapshot =
            serde_json::from_str(&serde_json::to_string(&snap).unwrap()).unwrap();
        assert_eq!(back, snap);
    }
}
