//! The design → observe → update loop, shared by simulated runs (outcomes
//! drawn from a known truth) and assisted runs (outcomes typed in by the
//! experimenter).

mod config;
mod persist;
mod summary;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_observation, ModelSpec, Observation, Params};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::smc::DesignState;
use crate::utility::{utility_surface, UtilitySurface};

pub use config::{DesignGrid, EarlyStop, ModelEntry, SelectionMode, SessionConfig};
pub use persist::{read_trace_csv, write_trace_csv, SessionFile, TraceRow, SCHEMA_VERSION};
pub use summary::{
    marginals, snapshot, Marginal, ModelSnapshot, ParticleSummary, HISTOGRAM_BINS,
    HISTOGRAM_SPAN_SDS, PARAMETER_NAMES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    AwaitingDesign,
    AwaitingObservation,
    Complete,
}

/// The design proposed for the next experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// 1-based index of the experiment this proposal is for.
    pub index: usize,
    pub d: u32,
    /// Absent in random selection mode.
    pub surface: Option<UtilitySurface>,
}

/// Everything recorded about one completed experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// 1-based.
    pub index: usize,
    pub d: u32,
    pub n: u32,
    pub tau: f64,
    pub model_ids: Vec<u8>,
    #[serde(with = "crate::serde_float::vec")]
    pub log_evidences: Vec<f64>,
    #[serde(with = "crate::serde_float::vec")]
    pub model_probs: Vec<f64>,
    #[serde(with = "crate::serde_float::vec")]
    pub log_precisions: Vec<f64>,
    pub particles: Vec<ParticleSummary>,
    /// Posterior marginals after this experiment, one per model.
    pub snapshots: Vec<ModelSnapshot>,
    /// Surface that was on offer when this observation came in.
    pub surface: Option<UtilitySurface>,
    pub warnings: Vec<String>,
}

impl ExperimentRecord {
    pub fn prob_of(&self, model: u8) -> Option<f64> {
        self.model_ids
            .iter()
            .position(|&m| m == model)
            .map(|k| self.model_probs[k])
    }

    pub fn log_precision_of(&self, model: u8) -> Option<f64> {
        self.model_ids
            .iter()
            .position(|&m| m == model)
            .map(|k| self.log_precisions[k])
    }
}

/// One experimental session: configuration, particle state and the
/// append-only record of experiments so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Session<T> {
    config: SessionConfig,
    state: DesignState<T>,
    records: Vec<ExperimentRecord>,
    pending: Option<Proposal>,
    stopped: Option<String>,
    initial_log_precisions: Vec<f64>,
}

impl<T: Scalar> Session<T> {
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let models: Vec<ModelSpec<T>> = config
            .resolve_models()?
            .iter()
            .map(ModelSpec::cast)
            .collect();
        let state = DesignState::new(models, config.particles, config.moves.clone(), config.seed)?;
        let initial_log_precisions = state
            .log_precisions()
            .iter()
            .map(|p| p.log_precision)
            .collect();
        Ok(Self {
            config,
            state,
            records: Vec::new(),
            pending: None,
            stopped: None,
            initial_log_precisions,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &DesignState<T> {
        &self.state
    }

    pub fn records(&self) -> &[ExperimentRecord] {
        &self.records
    }

    pub fn pending(&self) -> Option<&Proposal> {
        self.pending.as_ref()
    }

    /// Why the session stopped early, if it did.
    pub fn stop_reason(&self) -> Option<&str> {
        self.stopped.as_deref()
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() >= self.config.experiments || self.stopped.is_some()
    }

    pub fn status(&self) -> SessionStatus {
        if self.is_complete() {
            SessionStatus::Complete
        } else if self.pending.is_some() {
            SessionStatus::AwaitingObservation
        } else {
            SessionStatus::AwaitingDesign
        }
    }

    pub fn model_ids(&self) -> Vec<u8> {
        self.state.models().map(|m| m.id).collect()
    }

    pub fn model_probs(&self) -> Vec<f64> {
        self.state
            .model_probs()
            .iter()
            .map(|p| p.as_f64())
            .collect()
    }

    pub fn snapshots(&self) -> Vec<ModelSnapshot> {
        self.state
            .sets
            .iter()
            .zip(self.state.model_probs())
            .map(|(ps, p)| snapshot(ps, p))
            .collect()
    }

    /// Proposes the design for the next experiment. The proposal is cached
    /// until an observation is recorded.
    pub fn propose_next_design(&mut self) -> Result<&Proposal> {
        if self.is_complete() {
            return Err(Error::SessionComplete(self.config.experiments));
        }
        if self.pending.is_none() {
            let index = self.records.len() + 1;
            let grid = self.config.design_grid.points();
            let proposal = match self.config.selection {
                SelectionMode::Random => {
                    let mut rng = stream_rng(self.config.seed, Stream::Design, &[index as u64]);
                    let d = grid[rng.random_range(0..grid.len())];
                    Proposal {
                        index,
                        d,
                        surface: None,
                    }
                }
                SelectionMode::Optimal => {
                    let surface = utility_surface(
                        &self.state,
                        grid,
                        T::lit(self.config.tau),
                        self.config.utility,
                        self.config.surface,
                    )?;
                    Proposal {
                        index,
                        d: surface.argmax,
                        surface: Some(surface),
                    }
                }
            };
            self.pending = Some(proposal);
        }
        Ok(self.pending.as_ref().expect("just set"))
    }

    /// Absorbs the outcome `n` of a trial run at initial density `d`.
    /// Everything is validated before any state changes.
    pub fn record_observation(&mut self, d: u32, n: u32) -> Result<&ExperimentRecord> {
        if self.is_complete() {
            return Err(Error::SessionComplete(self.config.experiments));
        }
        if !self.config.design_grid.contains(d) {
            return Err(Error::DesignOutOfGrid(d));
        }
        let obs = Observation::new(d, n, T::lit(self.config.tau))?;
        let report = self.state.update(obs)?;
        let precisions: Vec<f64> = self
            .state
            .log_precisions()
            .iter()
            .map(|p| p.log_precision)
            .collect();
        let record = ExperimentRecord {
            index: self.records.len() + 1,
            d,
            n,
            tau: self.config.tau,
            model_ids: self.model_ids(),
            log_evidences: self
                .state
                .log_evidences()
                .iter()
                .map(|z| z.as_f64())
                .collect(),
            model_probs: self.model_probs(),
            log_precisions: precisions,
            particles: self.state.sets.iter().map(ParticleSummary::of).collect(),
            snapshots: self.snapshots(),
            surface: self.pending.take().and_then(|p| p.surface),
            warnings: report.warnings(),
        };
        for w in &record.warnings {
            log::warn!("experiment {}: {w}", record.index);
        }
        self.stopped = self.check_early_stop(&record);
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    fn check_early_stop(&self, record: &ExperimentRecord) -> Option<String> {
        let rule = self.config.early_stop;
        let (best, &p) = record
            .model_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        if let Some(threshold) = rule.max_model_prob {
            if p >= threshold {
                return Some(format!(
                    "model {} reached probability {p:.4}",
                    record.model_ids[best]
                ));
            }
        }
        if let Some(eps) = rule.min_log_precision_gain {
            let before = self
                .records
                .last()
                .map_or(self.initial_log_precisions[best], |r| {
                    r.log_precisions[best]
                });
            let gain = record.log_precisions[best] - before;
            if gain < eps {
                return Some(format!(
                    "log precision of model {} grew by {gain:.4} < {eps}",
                    record.model_ids[best]
                ));
            }
        }
        None
    }

    /// Rebuilds a session from its configuration and observed `(d, n)` pairs.
    pub fn replay(config: SessionConfig, observations: &[(u32, u32)]) -> Result<Self> {
        let mut s = Self::new(config)?;
        for &(d, n) in observations {
            s.record_observation(d, n)?;
        }
        Ok(s)
    }

    /// Runs the planned experiments against a known truth: propose, draw the
    /// outcome from the true model, record. Stops early if a stop rule fires.
    pub fn simulate(&mut self, truth: &ModelSpec<f64>, theta: &Params<f64>) -> Result<()> {
        while !self.is_complete() {
            let d = self.propose_next_design()?.d;
            let n = self.draw_outcome(truth, theta, d)?;
            self.record_observation(d, n)?;
        }
        Ok(())
    }

    /// Like [`Session::simulate`], but along a fixed design sequence instead of
    /// proposed designs. Stops early if the session completes first.
    pub fn simulate_along(
        &mut self,
        truth: &ModelSpec<f64>,
        theta: &Params<f64>,
        designs: &[u32],
    ) -> Result<()> {
        for &d in designs {
            if self.is_complete() {
                break;
            }
            let n = self.draw_outcome(truth, theta, d)?;
            self.record_observation(d, n)?;
        }
        Ok(())
    }

    /// Outcome of the next experiment at `d` under the truth, from the
    /// observation stream of its index.
    fn draw_outcome(&self, truth: &ModelSpec<f64>, theta: &Params<f64>, d: u32) -> Result<u32> {
        let index = self.records.len() + 1;
        let mut rng = stream_rng(self.config.seed, Stream::Observation, &[index as u64]);
        let obs = sample_observation(
            &truth.cast::<T>(),
            &theta.cast::<T>(),
            d,
            T::lit(self.config.tau),
            &mut rng,
        )?;
        Ok(obs.n)
    }
}

/// Simulation mode end to end. The true model must be one of the configured
/// models (matched by id).
pub fn run_simulation<T: Scalar>(
    config: SessionConfig,
    truth_model: u8,
    theta: &Params<f64>,
) -> Result<Session<T>> {
    let mut session = Session::<T>::new(config)?;
    let truth = session
        .config
        .resolve_models()?
        .into_iter()
        .find(|m| m.id == truth_model)
        .ok_or_else(|| {
            Error::Config(format!(
                "true model {truth_model} is not among the configured models"
            ))
        })?;
    truth.check_params(theta)?;
    session.simulate(&truth, theta)?;
    Ok(session)
}
