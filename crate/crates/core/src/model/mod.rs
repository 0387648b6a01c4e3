//! Holling type II/III prey-depletion models and their observation
//! likelihoods.

mod likelihood;
mod response;

pub(crate) use likelihood::family_lambda;
pub use likelihood::{
    beta_binomial_shapes, log_likelihood, log_pmf, log_pmf_row, pmf_row_into, pmf_row_linear,
    sample_observation, PmfRowCache,
};
pub use response::{depletion_exponent, expected_proportion, solve_prey_remaining};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower and upper clamp applied to the expected consumed proportion.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MechanisticType {
    TypeII,
    TypeIII,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservationFamily {
    Binomial,
    BetaBinomial,
}

/// Independent normal prior on one log-scale coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior<T> {
    pub mean: T,
    pub sd: T,
}

impl<T: Scalar> NormalPrior<T> {
    pub fn new(mean: T, sd: T) -> Result<Self> {
        if !(sd > T::zero()) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "normal prior needs finite mean and sd > 0, got mean={mean} sd={sd}"
            )));
        }
        Ok(Self { mean, sd })
    }

    pub fn log_density(&self, x: T) -> T {
        let z = (x - self.mean) / self.sd;
        -T::lit(0.5) * z * z - self.sd.ln() - T::lit(0.5) * (T::TAU()).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.sd * T::lit(z)
    }

    pub fn cast<U: Scalar>(&self) -> NormalPrior<U> {
        NormalPrior {
            mean: U::lit(self.mean.as_f64()),
            sd: U::lit(self.sd.as_f64()),
        }
    }
}

/// Priors on `(log a, log T_h, log λ)`. `log_lambda` is present exactly for
/// beta-binomial models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec<T> {
    pub log_a: NormalPrior<T>,
    pub log_th: NormalPrior<T>,
    pub log_lambda: Option<NormalPrior<T>>,
}

impl<T: Scalar> PriorSpec<T> {
    /// Default simulation-study prior: every log coordinate ~ N(−1.4, 1.35²).
    pub fn standard(obs: ObservationFamily) -> Self {
        let n = NormalPrior {
            mean: T::lit(-1.4),
            sd: T::lit(1.35),
        };
        Self {
            log_a: n,
            log_th: n,
            log_lambda: (obs == ObservationFamily::BetaBinomial).then_some(n),
        }
    }

    pub fn coordinates(&self) -> Vec<NormalPrior<T>> {
        let mut v = vec![self.log_a, self.log_th];
        v.extend(self.log_lambda);
        v
    }

    pub fn dim(&self) -> usize {
        2 + usize::from(self.log_lambda.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        for c in self.coordinates() {
            NormalPrior::new(c.mean, c.sd)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> PriorSpec<U> {
        PriorSpec {
            log_a: self.log_a.cast(),
            log_th: self.log_th.cast(),
            log_lambda: self.log_lambda.map(|p| p.cast()),
        }
    }
}

/// One candidate model: mechanistic type, observation family and prior.
///
/// Ids follow the usual numbering: 1 = beta-binomial II, 2 = beta-binomial
/// III, 3 = binomial II, 4 = binomial III.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<T> {
    pub id: u8,
    pub mech: MechanisticType,
    pub obs: ObservationFamily,
    pub prior: PriorSpec<T>,
    pub prior_model_prob: T,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn cast<U: Scalar>(&self) -> ModelSpec<U> {
        ModelSpec {
            id: self.id,
            mech: self.mech,
            obs: self.obs,
            prior: self.prior.cast(),
            prior_model_prob: U::lit(self.prior_model_prob.as_f64()),
        }
    }

    pub fn kind_of(id: u8) -> Result<(MechanisticType, ObservationFamily)> {
        use MechanisticType::*;
        use ObservationFamily::*;
        match id {
            1 => Ok((TypeII, BetaBinomial)),
            2 => Ok((TypeIII, BetaBinomial)),
            3 => Ok((TypeII, Binomial)),
            4 => Ok((TypeIII, Binomial)),
            _ => Err(Error::InvalidParameter(format!("unknown model id {id}"))),
        }
    }

    /// Model `id` with the standard prior.
    pub fn standard(id: u8, prior_model_prob: T) -> Result<Self> {
        let (mech, obs) = Self::kind_of(id)?;
        Ok(Self {
            id,
            mech,
            obs,
            prior: PriorSpec::standard(obs),
            prior_model_prob,
        })
    }

    /// The four standard models with equal prior probability.
    pub fn standard_set() -> Vec<Self> {
        (1..=4)
            .map(|id| Self::standard(id, T::lit(0.25)).expect("ids 1..=4 are valid"))
            .collect()
    }

    /// Standard models restricted to `ids`, with equal prior probability.
    pub fn standard_subset(ids: &[u8]) -> Result<Vec<Self>> {
        if ids.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one model is required".into(),
            ));
        }
        let p = T::one() / T::of_usize(ids.len());
        ids.iter().map(|&id| Self::standard(id, p)).collect()
    }

    pub fn dim(&self) -> usize {
        match self.obs {
            ObservationFamily::Binomial => 2,
            ObservationFamily::BetaBinomial => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (mech, obs) = Self::kind_of(self.id)?;
        if mech != self.mech || obs != self.obs {
            return Err(Error::InvalidParameter(format!(
                "model {} must be {mech:?}/{obs:?}",
                self.id
            )));
        }
        if self.prior.log_lambda.is_some() != (obs == ObservationFamily::BetaBinomial) {
            return Err(Error::InvalidParameter(format!(
                "model {}: log_lambda prior must be present exactly for beta-binomial models",
                self.id
            )));
        }
        if !(self.prior_model_prob > T::zero() && self.prior_model_prob <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "model {}: prior model probability must lie in (0, 1]",
                self.id
            )));
        }
        self.prior.validate()
    }

    pub fn prior_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Params<T> {
        Params {
            log_a: self.prior.log_a.sample(rng),
            log_th: self.prior.log_th.sample(rng),
            log_lambda: self.prior.log_lambda.map(|p| p.sample(rng)),
        }
    }

    pub fn prior_log_density(&self, params: &Params<T>) -> T {
        let mut lp = self.prior.log_a.log_density(params.log_a)
            + self.prior.log_th.log_density(params.log_th);
        if let (Some(p), Some(x)) = (self.prior.log_lambda, params.log_lambda) {
            lp = lp + p.log_density(x);
        }
        lp
    }

    pub fn check_params(&self, params: &Params<T>) -> Result<()> {
        if params.log_lambda.is_some() != (self.obs == ObservationFamily::BetaBinomial) {
            return Err(Error::InvalidParameter(format!(
                "model {} ({:?}) given parameters {}log_lambda",
                self.id,
                self.obs,
                if params.log_lambda.is_some() {
                    "with "
                } else {
                    "without "
                }
            )));
        }
        if !params.coords().iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Checks that prior model probabilities form a simplex.
pub fn validate_model_set<T: Scalar>(models: &[ModelSpec<T>]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("empty model set".into()));
    }
    for m in models {
        m.validate()?;
    }
    let total = models
        .iter()
        .fold(T::zero(), |acc, m| acc + m.prior_model_prob);
    if (total - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::InvalidParameter(format!(
            "prior model probabilities sum to {total}, expected 1"
        )));
    }
    let mut ids: Vec<u8> = models.iter().map(|m| m.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != models.len() {
        return Err(Error::InvalidParameter("duplicate model ids".into()));
    }
    Ok(())
}

/// Log-scale parameters `θ = (log a, log T_h[, log λ])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    pub log_a: T,
    pub log_th: T,
    #[serde(default = "none", skip_serializing_if = "Option::is_none")]
    pub log_lambda: Option<T>,
}

fn none<T>() -> Option<T> {
    None
}

impl<T: Scalar> Params<T> {
    /// From natural-scale values. All must be strictly positive.
    pub fn from_natural(a: T, th: T, lambda: Option<T>) -> Result<Self> {
        let pos = |x: T, name: &str| {
            if x > T::zero() && x.is_finite() {
                Ok(x.ln())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {x}"
                )))
            }
        };
        Ok(Self {
            log_a: pos(a, "a")?,
            log_th: pos(th, "T_h")?,
            log_lambda: lambda.map(|l| pos(l, "lambda")).transpose()?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            log_a: U::lit(self.log_a.as_f64()),
            log_th: U::lit(self.log_th.as_f64()),
            log_lambda: self.log_lambda.map(|l| U::lit(l.as_f64())),
        }
    }

    pub fn a(&self) -> T {
        self.log_a.exp()
    }

    pub fn th(&self) -> T {
        self.log_th.exp()
    }

    pub fn lambda(&self) -> Option<T> {
        self.log_lambda.map(T::exp)
    }

    pub fn coords(&self) -> Vec<T> {
        let mut v = vec![self.log_a, self.log_th];
        v.extend(self.log_lambda);
        v
    }

    /// Inverse of [`Params::coords`]; a third coordinate becomes `log_lambda`.
    pub fn from_coords(c: &[T]) -> Self {
        Self {
            log_a: c[0],
            log_th: c[1],
            log_lambda: c.get(2).copied(),
        }
    }
}

/// One trial: `n` of `n0` prey eaten over `tau` hours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub n0: u32,
    pub n: u32,
    pub tau: T,
}

impl<T: Scalar> Observation<T> {
    pub fn new(n0: u32, n: u32, tau: T) -> Result<Self> {
        let obs = Self { n0, n, tau };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 {
            return Err(Error::InvalidParameter(
                "initial prey density must be >= 1".into(),
            ));
        }
        if self.n > self.n0 {
            return Err(Error::ObservationOutOfRange {
                n: self.n,
                n0: self.n0,
            });
        }
        if !(self.tau >= T::zero()) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tau must be finite and >= 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn table_numbering() {
        use MechanisticType::*;
        use ObservationFamily::*;
        let set = ModelSpec::<f64>::standard_set();
        let kinds: Vec<_> = set.iter().map(|m| (m.id, m.mech, m.obs, m.dim())).collect();
        assert_eq!(
            kinds,
            vec![
                (1, TypeII, BetaBinomial, 3),
                (2, TypeIII, BetaBinomial, 3),
                (3, TypeII, Binomial, 2),
                (4, TypeIII, Binomial, 2)
            ]
        );
        validate_model_set(&set).unwrap();
        assert!(ModelSpec::<f64>::standard(5, 1.0).is_err());
    }

    #[test]
    fn prior_density_at_mean() {
        for m in ModelSpec::<f64>::standard_set() {
            let at_mean = Params {
                log_a: -1.4,
                log_th: -1.4,
                log_lambda: m.prior.log_lambda.map(|_| -1.4),
            };
            let per = -(1.35 * (2.0 * std::f64::consts::PI).sqrt()).ln();
            let expected = per * m.dim() as f64;
            assert!((m.prior_log_density(&at_mean) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_sample_mean_and_family_rule() {
        let m1 = ModelSpec::<f64>::standard(1, 0.5).unwrap();
        let m3 = ModelSpec::<f64>::standard(3, 0.5).unwrap();
        let mut rng = stream_rng(11, Stream::Prior, &[]);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let p = m1.prior_sample(&mut rng);
            assert!(p.log_lambda.is_some());
            sum += p.log_a;
            assert!(m3.prior_sample(&mut rng).log_lambda.is_none());
        }
        let se = 1.35 / (n as f64).sqrt();
        assert!((sum / n as f64 + 1.4).abs() < 3.0 * se);
    }

    #[test]
    fn params_family_mismatch_is_rejected() {
        let m3 = ModelSpec::<f64>::standard(3, 1.0).unwrap();
        let p = Params::from_natural(0.5, 0.7, Some(0.5)).unwrap();
        assert!(matches!(
            m3.check_params(&p),
            Err(Error::InvalidParameter(_))
        ));
        assert!(Params::<f64>::from_natural(0.0, 0.7, None).is_err());
    }

    #[test]
    fn nonpositive_prior_sd_rejected() {
        assert!(NormalPrior::new(0.0f64, 0.0).is_err());
        assert!(NormalPrior::new(0.0f64, -1.0).is_err());
    }

    #[test]
    fn observation_bounds() {
        assert!(Observation::new(5, 5, 24.0f64).is_ok());
        assert_eq!(
            Observation::new(5, 6, 24.0f64),
            Err(Error::ObservationOutOfRange { n: 6, n0: 5 })
        );
        assert!(Observation::new(0, 0, 24.0f64).is_err());
    }
}
