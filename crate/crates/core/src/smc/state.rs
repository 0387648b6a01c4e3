use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_model_set, ModelSpec, Observation};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::smc::{
    d_posterior_precision, move_step, posterior_model_probs, DPrecision, MoveConfig, MoveReport,
    ParticleSet, ProposalKernel,
};

/// ESS below this after a reweight is reported as a collapse warning.
const COLLAPSE_ESS: f64 = 2.0;

/// Per-session inference state: one particle set per candidate model and the
/// observation history they all share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DesignState<T> {
    pub sets: Vec<ParticleSet<T>>,
    pub history: Vec<Observation<T>>,
    pub seed: u64,
    pub move_cfg: MoveConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub model: u8,
    #[serde(with = "crate::serde_float")]
    pub log_increment: f64,
    pub ess_after_reweight: f64,
    pub resampled: bool,
    pub moved: Option<MoveReport>,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub models: Vec<ModelUpdate>,
}

impl UpdateReport {
    pub fn warnings(&self) -> Vec<String> {
        self.models
            .iter()
            .filter_map(|m| m.warning.clone())
            .collect()
    }
}

impl<T: Scalar> DesignState<T> {
    /// Draws `j` prior particles per model, each model from its own stream.
    pub fn new(
        models: Vec<ModelSpec<T>>,
        j: usize,
        move_cfg: MoveConfig,
        seed: u64,
    ) -> Result<Self> {
        validate_model_set(&models)?;
        move_cfg.validate()?;
        let sets = models
            .into_iter()
            .enumerate()
            .map(|(idx, m)| {
                let mut rng = stream_rng(seed, Stream::Prior, &[idx as u64]);
                ParticleSet::from_prior(m, j, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sets,
            history: Vec::new(),
            seed,
            move_cfg,
        })
    }

    pub fn iteration(&self) -> usize {
        self.history.len()
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelSpec<T>> {
        self.sets.iter().map(|s| &s.model)
    }

    pub fn log_evidences(&self) -> Vec<T> {
        self.sets.iter().map(|s| s.log_evidence).collect()
    }

    pub fn prior_model_probs(&self) -> Vec<T> {
        self.sets.iter().map(|s| s.model.prior_model_prob).collect()
    }

    pub fn model_probs(&self) -> Vec<T> {
        posterior_model_probs(&self.log_evidences(), &self.prior_model_probs())
    }

    pub fn log_precisions(&self) -> Vec<DPrecision> {
        self.sets.iter().map(d_posterior_precision).collect()
    }

    pub fn index_of(&self, model_id: u8) -> Option<usize> {
        self.sets.iter().position(|s| s.model.id == model_id)
    }

    /// Absorbs one observation into every model: reweight, and when the ESS
    /// drops below `ess_threshold_frac · J`, resample and move.
    ///
    /// A model whose weights all underflow keeps its particles, gets log
    /// evidence `-inf` (probability zero) and a warning; the session carries on.
    pub fn update(&mut self, obs: Observation<T>) -> Result<UpdateReport> {
        obs.validate()?;
        if self
            .sets
            .iter()
            .any(|s| s.observations != self.history.len())
        {
            return Err(Error::InvalidParameter(
                "particle sets out of step with history".into(),
            ));
        }
        self.history.push(obs);
        let history = &self.history;
        let seed = self.seed;
        let cfg = &self.move_cfg;
        let i = history.len() as u64;
        let models = self
            .sets
            .par_iter_mut()
            .enumerate()
            .map(|(idx, ps)| update_one(ps, idx as u64, i, history, cfg, seed))
            .collect();
        Ok(UpdateReport { models })
    }
}

fn update_one<T: Scalar>(
    ps: &mut ParticleSet<T>,
    idx: u64,
    i: u64,
    history: &[Observation<T>],
    cfg: &MoveConfig,
    seed: u64,
) -> ModelUpdate {
    let id = ps.model.id;
    let obs = history.last().expect("non-empty history");
    let (_, cov) = ps.weighted_moments();
    match ps.reweight(obs) {
        Err(e) => {
            ps.log_evidence = T::neg_infinity();
            ps.observations += 1;
            ModelUpdate {
                model: id,
                log_increment: f64::NEG_INFINITY,
                ess_after_reweight: ps.ess.as_f64(),
                resampled: false,
                moved: None,
                warning: Some(format!("model {id}: {e}")),
            }
        }
        Ok(inc) => {
            let ess = ps.ess.as_f64();
            let mut warning = (ess < COLLAPSE_ESS).then(|| {
                format!(
                    "model {id}: effective sample size collapsed to {ess:.3} after observation {i}"
                )
            });
            let threshold = cfg.ess_threshold_frac * ps.len() as f64;
            let mut moved = None;
            if ess < threshold {
                // Proposal scale comes from the weighted cloud before resampling.
                let kernel = ProposalKernel::from_covariance(&cov, cfg.proposal_scale);
                let mut rng = stream_rng(seed, Stream::Resample, &[idx, i]);
                ps.resample(&mut rng);
                let report = move_step(ps, history, cfg, &kernel, seed, &[idx, i]);
                if report.probe_acceptance == 0.0 && warning.is_none() {
                    warning = Some(format!(
                        "model {id}: no MCMC proposal accepted in the probing pass"
                    ));
                }
                moved = Some(report);
            }
            ModelUpdate {
                model: id,
                log_increment: inc.as_f64(),
                ess_after_reweight: ess,
                resampled: moved.is_some(),
                moved,
                warning,
            }
        }
    }
}
