//! Static (whole-experiment) Bayesian design baseline: Laplace-approximated
//! utilities, Monte Carlo expected utility over prior predictive draws and
//! coordinate exchange over the full design vector.

mod exchange;
mod laplace;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_file::{locate, parse_toml, read_toml};
use crate::error::{Error, Result};
use crate::model::{sample_observation, ModelSpec, Observation};
use crate::rng::{stream_rng, Stream};
use crate::sequential::{DesignGrid, ModelEntry, SessionConfig};
use crate::smc::log_det_spd;
use crate::utility::UtilityKind;

pub use exchange::{candidate_subgrid, coordinate_exchange, ExchangeOptions, StaticDesign};
pub use laplace::{
    default_starts, floor_eigenvalues, gradient, hessian, laplace_fit, laplace_fit_target,
    LaplaceFit, LogJoint, ModelLogJoint, EXTRA_STARTS, HESSIAN_FLOOR,
};

/// Draws per expected-utility evaluation unless configured otherwise.
pub const DEFAULT_DRAWS: usize = 200;
/// Largest tolerated share of failed Laplace fits in one estimate.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// `KL(N(mean0, cov0) ‖ N(mean1, cov1))`.
pub fn kld_mvn(
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
) -> Result<f64> {
    let p = mean0.len();
    if cov0.shape() != (p, p) || cov1.shape() != (p, p) || mean1.len() != p {
        return Err(Error::InvalidParameter("dimension mismatch".into()));
    }
    let not_spd = |which: &str| Error::NotPositiveDefinite(format!("{which} covariance"));
    let ld0 = log_det_spd(cov0).ok_or_else(|| not_spd("first"))?;
    let chol1 = cov1.clone().cholesky().ok_or_else(|| not_spd("second"))?;
    let ld1 = log_det_spd(cov1).ok_or_else(|| not_spd("second"))?;
    let diff = mean1 - mean0;
    let trace = chol1.solve(cov0).trace();
    let quad = diff.dot(&chol1.solve(&diff));
    Ok((0.5 * (trace + quad - p as f64 + ld1 - ld0)).max(0.0))
}

/// The model's prior as a normal distribution on the log scale (exact, since
/// the priors are independent normals there).
pub fn prior_normal(model: &ModelSpec<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let c = model.prior.coordinates();
    let mean = DVector::from_iterator(c.len(), c.iter().map(|n| n.mean));
    let var = DVector::from_iterator(c.len(), c.iter().map(|n| n.sd * n.sd));
    (mean, DMatrix::from_diagonal(&var))
}

/// KLD from the prior to the Laplace posterior of one model.
pub fn static_pe_utility(model: &ModelSpec<f64>, fit: &LaplaceFit) -> Result<f64> {
    let (m1, c1) = prior_normal(model);
    kld_mvn(&DVector::from_column_slice(&fit.mode), &fit.cov, &m1, &c1)
}

/// Log approximate posterior probabilities of every model from Laplace log
/// marginals.
pub fn laplace_log_model_probs(models: &[ModelSpec<f64>], fits: &[LaplaceFit]) -> Vec<f64> {
    let scores: Vec<f64> = models
        .iter()
        .zip(fits)
        .map(|(m, f)| f.log_marginal + m.prior_model_prob.ln())
        .collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Utility of one `(m, y)` pair given Laplace fits of every model to `y`.
pub fn static_utility(
    kind: UtilityKind,
    models: &[ModelSpec<f64>],
    m: usize,
    fits: &[LaplaceFit],
) -> Result<f64> {
    if fits.len() != models.len() || m >= models.len() {
        return Err(Error::InvalidParameter(
            "one fit per model is required".into(),
        ));
    }
    let md = || laplace_log_model_probs(models, fits)[m];
    Ok(match kind {
        UtilityKind::ParameterEstimation => static_pe_utility(&models[m], &fits[m])?,
        UtilityKind::ModelDiscrimination => md(),
        UtilityKind::TotalEntropy => static_pe_utility(&models[m], &fits[m])? + md(),
    })
}

/// Monte Carlo estimate of a static design's expected utility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticEstimate {
    pub estimate: f64,
    /// Monte Carlo standard error.
    pub se: f64,
    pub draws: usize,
    pub failures: usize,
}

/// Expected static utility of the design `d`, averaging over `draws` joint
/// draws of model, parameters and outcomes.
///
/// Draw `b` takes its model and parameters, each outcome `y_k` and its
/// optimizer starts from separate streams keyed by `b`, so two designs
/// evaluated with one seed share random numbers wherever they agree.
pub fn expected_static_utility(
    models: &[ModelSpec<f64>],
    d: &[u32],
    tau: f64,
    kind: UtilityKind,
    draws: usize,
    seed: u64,
) -> Result<StaticEstimate> {
    if draws == 0 {
        return Err(Error::InvalidParameter(
            "at least one Monte Carlo draw is required".into(),
        ));
    }
    if models.is_empty() {
        return Err(Error::InvalidParameter("no models".into()));
    }
    if let Some(&bad) = d.iter().find(|&&x| x == 0) {
        return Err(Error::DesignOutOfGrid(bad));
    }
    let values: Vec<Option<f64>> = (0..draws as u64)
        .into_par_iter()
        .map(|b| one_draw(models, d, tau, kind, seed, b))
        .collect::<Result<_>>()?;
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failures = draws - ok.len();
    if failures as f64 > MAX_FAILURE_SHARE * draws as f64 || ok.is_empty() {
        return Err(Error::UnreliableEstimate {
            failed: failures,
            total: draws,
        });
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let se = if ok.len() > 1 {
        (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(StaticEstimate {
        estimate: mean,
        se,
        draws,
        failures,
    })
}

fn pick_model<R: Rng + ?Sized>(models: &[ModelSpec<f64>], rng: &mut R) -> usize {
    let total: f64 = models.iter().map(|m| m.prior_model_prob).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, m) in models.iter().enumerate() {
        if u < m.prior_model_prob {
            return k;
        }
        u -= m.prior_model_prob;
    }
    models.len() - 1
}

/// `Ok(None)` when a Laplace fit fails for this draw.
fn one_draw(
    models: &[ModelSpec<f64>],
    d: &[u32],
    tau: f64,
    kind: UtilityKind,
    seed: u64,
    b: u64,
) -> Result<Option<f64>> {
    let mut rng = stream_rng(seed, Stream::Static, &[b, 0]);
    let m = pick_model(models, &mut rng);
    let theta = models[m].prior_sample(&mut rng);
    let ys: Vec<Observation<f64>> = d
        .iter()
        .enumerate()
        .map(|(k, &dk)| {
            let mut r = stream_rng(seed, Stream::Static, &[b, 1, k as u64]);
            sample_observation(&models[m], &theta, dk, tau, &mut r)
        })
        .collect::<Result<_>>()?;
    let mut start_rng = stream_rng(seed, Stream::Static, &[b, 2]);
    let fit = |k: usize, rng: &mut _| laplace_fit(&models[k], &ys, rng);
    let value = match kind {
        UtilityKind::ParameterEstimation => {
            // Only the generating model's fit is needed.
            match fit(m, &mut start_rng) {
                Ok(f) => static_pe_utility(&models[m], &f)?,
                Err(_) => return Ok(None),
            }
        }
        _ => {
            let mut fits = Vec::with_capacity(models.len());
            for k in 0..models.len() {
                match fit(k, &mut start_rng) {
                    Ok(f) => fits.push(f),
                    Err(_) => return Ok(None),
                }
            }
            static_utility(kind, models, m, &fits)?
        }
    };
    Ok(value.is_finite().then_some(value))
}

/// Configuration of a standalone static-design search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticDesignConfig {
    pub models: Vec<ModelEntry>,
    /// Number of design points (`I`).
    pub experiments: usize,
    pub design_grid: DesignGrid,
    pub tau: f64,
    pub utility: UtilityKind,
    /// Monte Carlo draws per expected-utility evaluation (`B`).
    pub draws: usize,
    pub exchange: ExchangeOptions,
    /// Starting design; a uniform random design from the grid when absent.
    pub initial: Option<Vec<u32>>,
    pub seed: u64,
}

impl Default for StaticDesignConfig {
    fn default() -> Self {
        Self {
            models: (1..=4).map(ModelEntry::Id).collect(),
            experiments: 25,
            design_grid: DesignGrid::default(),
            tau: 24.0,
            utility: UtilityKind::TotalEntropy,
            draws: DEFAULT_DRAWS,
            exchange: ExchangeOptions::default(),
            initial: None,
            seed: 0,
        }
    }
}

impl StaticDesignConfig {
    pub fn resolve_models(&self) -> Result<Vec<ModelSpec<f64>>> {
        SessionConfig {
            models: self.models.clone(),
            ..SessionConfig::default()
        }
        .resolve_models()
    }

    fn check_field(&self) -> std::result::Result<(), (&'static str, Error)> {
        let cfg = |key, msg: String| Err((key, Error::Config(msg)));
        self.resolve_models().map_err(|e| ("models", e))?;
        if self.experiments == 0 {
            return cfg("experiments", "experiments must be at least 1".into());
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return cfg("tau", format!("tau must be positive, got {}", self.tau));
        }
        if self.draws == 0 {
            return cfg("draws", "draws must be at least 1".into());
        }
        if let Some(init) = &self.initial {
            if init.len() != self.experiments {
                return cfg(
                    "initial",
                    format!(
                        "initial design has {} points, expected {}",
                        init.len(),
                        self.experiments
                    ),
                );
            }
            if let Some(bad) = init.iter().find(|d| !self.design_grid.contains(**d)) {
                return cfg(
                    "initial",
                    format!("initial design point {bad} is not in the design grid"),
                );
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_field().map_err(|(_, e)| e)
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let c: Self = parse_toml(text, origin)?;
        c.check_field()
            .map_err(|(key, e)| locate(e, text, origin, key))?;
        Ok(c)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let (c, text): (Self, String) = read_toml(path)?;
        let origin = path.display().to_string();
        c.check_field()
            .map_err(|(key, e)| locate(e, &text, &origin, key))?;
        Ok(c)
    }

    pub fn initial_design(&self) -> Vec<u32> {
        self.initial.clone().unwrap_or_else(|| {
            let grid = self.design_grid.points();
            let mut rng = stream_rng(self.seed, Stream::Design, &[]);
            (0..self.experiments)
                .map(|_| grid[rng.random_range(0..grid.len())])
                .collect()
        })
    }
}

/// Coordinate exchange as configured, with one seed shared by every
/// evaluation (common random numbers).
pub fn run_static_design(cfg: &StaticDesignConfig) -> Result<StaticDesign> {
    cfg.validate()?;
    let models = cfg.resolve_models()?;
    coordinate_exchange(
        |d| expected_static_utility(&models, d, cfg.tau, cfg.utility, cfg.draws, cfg.seed),
        &cfg.initial_design(),
        cfg.design_grid.points(),
        cfg.exchange,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kld_identities() {
        let m = DVector::from_vec(vec![0.1, -0.3]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        assert!(kld_mvn(&m, &c, &m, &c).unwrap().abs() < 1e-12);
        let one = DMatrix::from_element(1, 1, 1.0);
        let v = kld_mvn(
            &DVector::from_element(1, 0.0),
            &one,
            &DVector::from_element(1, 1.0),
            &one,
        )
        .unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(kld_mvn(&m, &bad, &m, &c).is_err());
        assert!(kld_mvn(&m, &c, &m, &bad).is_err());
    }

    #[test]
    fn md_utilities_form_a_log_simplex() {
        let models = ModelSpec::standard_set();
        let mut rng = stream_rng(3, Stream::Static, &[]);
        let obs = [
            Observation::new(40, 22, 24.0).unwrap(),
            Observation::new(200, 71, 24.0).unwrap(),
        ];
        let fits: Vec<LaplaceFit> = models
            .iter()
            .map(|m| laplace_fit(m, &obs, &mut rng).unwrap())
            .collect();
        let lp = laplace_log_model_probs(&models, &fits);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for m in 0..4 {
            let md = static_utility(UtilityKind::ModelDiscrimination, &models, m, &fits).unwrap();
            let pe = static_utility(UtilityKind::ParameterEstimation, &models, m, &fits).unwrap();
            let te = static_utility(UtilityKind::TotalEntropy, &models, m, &fits).unwrap();
            assert_eq!(md, lp[m]);
            assert!((te - pe - md).abs() < 1e-12);
        }
    }

    #[test]
    fn single_model_md_is_zero_and_empty_data_pe_is_zero() {
        let models = vec![ModelSpec::standard(3, 1.0).unwrap()];
        let mut rng = stream_rng(4, Stream::Static, &[]);
        let fit = laplace_fit(&models[0], &[], &mut rng).unwrap();
        assert_eq!(
            static_utility(UtilityKind::ModelDiscrimination, &models, 0, &[fit.clone()]).unwrap(),
            0.0
        );
        assert!(static_pe_utility(&models[0], &fit).unwrap() < 1e-8);
    }

    #[test]
    fn estimates_are_reproducible() {
        let models = ModelSpec::standard_set();
        let a = expected_static_utility(&models, &[30, 120], 24.0, UtilityKind::TotalEntropy, 8, 5)
            .unwrap();
        let b = expected_static_utility(&models, &[30, 120], 24.0, UtilityKind::TotalEntropy, 8, 5)
            .unwrap();
        assert_eq!(a, b);
        let one =
            expected_static_utility(&models, &[30], 24.0, UtilityKind::ParameterEstimation, 1, 5)
                .unwrap();
        assert_eq!(one.draws, 1);
        assert!(one.se.is_infinite());
        assert!(expected_static_utility(
            &models,
            &[30],
            24.0,
            UtilityKind::ParameterEstimation,
            0,
            5
        )
        .is_err());
    }

    #[test]
    fn config_validation_and_a_small_search() {
        let e = StaticDesignConfig::from_toml_str("experiments = 2\ninitial = [1, 2, 3]\n", "c")
            .unwrap_err()
            .to_string();
        assert!(e.contains("c:2:"), "{e}");
        let cfg = StaticDesignConfig::from_toml_str(
            "models = [3]\nexperiments = 2\ndraws = 6\nutility = \"pe\"\ndesign_grid = { from = 10, to = 200, step = 10 }\n[exchange]\npasses = 1\ncandidates = 3\n",
            "c",
        )
        .unwrap();
        let out = run_static_design(&cfg).unwrap();
        assert_eq!(out.points.len(), 2);
        assert!(out.points.iter().all(|d| cfg.design_grid.contains(*d)));
        assert_eq!(out, run_static_design(&cfg).unwrap());
    }
}
