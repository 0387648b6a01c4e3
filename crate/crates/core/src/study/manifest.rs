use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config_file::{locate, parse_toml, read_toml};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Params};
use crate::rng::{stream_rng, Stream};
use crate::sequential::{DesignGrid, ModelEntry, SessionConfig};
use crate::smc::MoveConfig;
use crate::static_design::{ExchangeOptions, DEFAULT_DRAWS};
use crate::utility::{SurfaceOptions, UtilityKind};

/// How the designs of one study cell are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "RG")]
    Random,
    #[serde(rename = "PE")]
    ParameterEstimation,
    #[serde(rename = "MD")]
    ModelDiscrimination,
    #[serde(rename = "TE")]
    TotalEntropy,
    #[serde(rename = "STATIC-PE")]
    StaticParameterEstimation,
    #[serde(rename = "STATIC-MD")]
    StaticModelDiscrimination,
    #[serde(rename = "STATIC-TE")]
    StaticTotalEntropy,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Random,
        Strategy::ParameterEstimation,
        Strategy::ModelDiscrimination,
        Strategy::TotalEntropy,
        Strategy::StaticParameterEstimation,
        Strategy::StaticModelDiscrimination,
        Strategy::StaticTotalEntropy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Random => "RG",
            Strategy::ParameterEstimation => "PE",
            Strategy::ModelDiscrimination => "MD",
            Strategy::TotalEntropy => "TE",
            Strategy::StaticParameterEstimation => "STATIC-PE",
            Strategy::StaticModelDiscrimination => "STATIC-MD",
            Strategy::StaticTotalEntropy => "STATIC-TE",
        }
    }

    /// Utility behind an optimal strategy; `None` for random designs.
    pub fn utility(self) -> Option<UtilityKind> {
        match self {
            Strategy::Random => None,
            Strategy::ParameterEstimation | Strategy::StaticParameterEstimation => {
                Some(UtilityKind::ParameterEstimation)
            }
            Strategy::ModelDiscrimination | Strategy::StaticModelDiscrimination => {
                Some(UtilityKind::ModelDiscrimination)
            }
            Strategy::TotalEntropy | Strategy::StaticTotalEntropy => {
                Some(UtilityKind::TotalEntropy)
            }
        }
    }

    pub fn is_static(self) -> bool {
        matches!(
            self,
            Strategy::StaticParameterEstimation
                | Strategy::StaticModelDiscrimination
                | Strategy::StaticTotalEntropy
        )
    }

    pub(crate) fn code(self) -> u64 {
        Self::ALL.iter().position(|&s| s == self).expect("listed") as u64
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|x| x.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// A data-generating truth: model id and natural-scale parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub model: u8,
    pub a: f64,
    pub th: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Truth {
    pub fn params(&self) -> Result<Params<f64>> {
        Params::from_natural(self.a, self.th, self.lambda)
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| match self.lambda {
            Some(l) => format!(
                "m{}(a={:.4},th={:.4},lambda={:.4})",
                self.model, self.a, self.th, l
            ),
            None => format!("m{}(a={:.4},th={:.4})", self.model, self.a, self.th),
        })
    }

    /// The worked-example truth: beta-binomial type II with a = 0.5,
    /// T_h = 0.7, λ = 0.5.
    pub fn illustration() -> Self {
        Self {
            model: 1,
            a: 0.5,
            th: 0.7,
            lambda: Some(0.5),
            label: Some("illustration".into()),
        }
    }
}

/// Truths used when the manifest lists none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefaultTruths {
    /// Include the worked-example truth.
    pub illustration: bool,
    /// Prior draws per candidate model.
    pub draws_per_model: usize,
}

impl Default for DefaultTruths {
    fn default() -> Self {
        Self {
            illustration: true,
            draws_per_model: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSettings {
    /// Monte Carlo draws per expected-utility evaluation.
    pub draws: usize,
    pub passes: usize,
    pub candidates: usize,
    /// Optimize once per truth and reuse the design in every replication.
    pub reuse_across_replications: bool,
}

impl Default for StaticSettings {
    fn default() -> Self {
        let ex = ExchangeOptions::default();
        Self {
            draws: DEFAULT_DRAWS,
            passes: ex.passes,
            candidates: ex.candidates,
            reuse_across_replications: false,
        }
    }
}

impl StaticSettings {
    pub fn exchange(&self) -> ExchangeOptions {
        ExchangeOptions {
            passes: self.passes,
            candidates: self.candidates,
        }
    }
}

/// A batch comparison: truths × strategies × replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyManifest {
    pub seed: u64,
    pub replications: usize,
    /// Experiments per run (`I`).
    pub experiments: usize,
    /// Particles per model (`J`).
    pub particles: usize,
    pub tau: f64,
    pub design_grid: DesignGrid,
    /// Candidate models fitted in every run.
    pub models: Vec<ModelEntry>,
    pub strategies: Vec<Strategy>,
    /// Explicit truths; when empty, `default_truths` decides.
    pub truths: Vec<Truth>,
    pub default_truths: DefaultTruths,
    pub moves: MoveConfig,
    pub surface: SurfaceOptions,
    #[serde(rename = "static")]
    pub static_design: StaticSettings,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for StudyManifest {
    fn default() -> Self {
        Self {
            seed: 0,
            replications: 10,
            experiments: 15,
            particles: 1000,
            tau: 24.0,
            design_grid: DesignGrid::default(),
            models: (1..=4).map(ModelEntry::Id).collect(),
            strategies: vec![
                Strategy::Random,
                Strategy::ParameterEstimation,
                Strategy::ModelDiscrimination,
                Strategy::TotalEntropy,
            ],
            truths: Vec::new(),
            default_truths: DefaultTruths::default(),
            moves: MoveConfig::default(),
            surface: SurfaceOptions::default(),
            static_design: StaticSettings::default(),
            workers: 0,
        }
    }
}

impl StudyManifest {
    /// The full-scale protocol: 30 replications of 25 experiments.
    pub fn full_scale() -> Self {
        Self {
            replications: 30,
            experiments: 25,
            ..Self::default()
        }
    }

    fn check_field(&self) -> std::result::Result<(), (&'static str, Error)> {
        let cfg = |key, msg: String| Err((key, Error::Config(msg)));
        if self.replications == 0 {
            return cfg("replications", "replications must be at least 1".into());
        }
        if self.strategies.is_empty() {
            return cfg("strategies", "at least one strategy is required".into());
        }
        self.session_config(0, Strategy::Random)
            .validate()
            .map_err(|e| ("models", e))?;
        if self.static_design.draws == 0 {
            return cfg("draws", "static draws must be at least 1".into());
        }
        let models = self.resolved_models().map_err(|e| ("models", e))?;
        for t in &self.truths {
            let Some(m) = models.iter().find(|m| m.id == t.model) else {
                return cfg(
                    "truths",
                    format!("truth model {} is not among the candidate models", t.model),
                );
            };
            let params = t.params().map_err(|e| ("truths", e))?;
            m.check_params(&params).map_err(|e| ("truths", e))?;
        }
        if self.truths.is_empty()
            && !self.default_truths.illustration
            && self.default_truths.draws_per_model == 0
        {
            return cfg(
                "default_truths",
                "no truths: list some or enable default truths".into(),
            );
        }
        if self.truths.is_empty()
            && self.default_truths.illustration
            && !models.iter().any(|m| m.id == 1)
        {
            return cfg(
                "illustration",
                "the illustration truth needs model 1 among the candidates".into(),
            );
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_field().map_err(|(_, e)| e)
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let m: Self = parse_toml(text, origin)?;
        m.check_field()
            .map_err(|(key, e)| locate(e, text, origin, key))?;
        Ok(m)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let (m, text): (Self, String) = read_toml(path)?;
        let origin = path.display().to_string();
        m.check_field()
            .map_err(|(key, e)| locate(e, &text, &origin, key))?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn resolved_models(&self) -> Result<Vec<ModelSpec<f64>>> {
        self.session_config(0, Strategy::Random).resolve_models()
    }

    /// Session configuration of one cell.
    pub fn session_config(&self, seed: u64, strategy: Strategy) -> SessionConfig {
        use crate::sequential::SelectionMode;
        SessionConfig {
            models: self.models.clone(),
            particles: self.particles,
            moves: self.moves.clone(),
            design_grid: self.design_grid.clone(),
            tau: self.tau,
            experiments: self.experiments,
            utility: strategy.utility().unwrap_or(UtilityKind::TotalEntropy),
            selection: if strategy == Strategy::Random || strategy.is_static() {
                SelectionMode::Random
            } else {
                SelectionMode::Optimal
            },
            seed,
            surface: self.surface,
            early_stop: Default::default(),
        }
    }

    /// Explicit truths, or the defaults: the worked-example truth and
    /// `draws_per_model` prior draws for each candidate model.
    pub fn resolved_truths(&self) -> Result<Vec<Truth>> {
        if !self.truths.is_empty() {
            return Ok(self.truths.clone());
        }
        let mut out = Vec::new();
        if self.default_truths.illustration {
            out.push(Truth::illustration());
        }
        for m in self.resolved_models()? {
            for k in 0..self.default_truths.draws_per_model {
                let mut rng = stream_rng(
                    self.seed,
                    Stream::Study,
                    &[u64::MAX, u64::from(m.id), k as u64],
                );
                let p = m.prior_sample(&mut rng);
                out.push(Truth {
                    model: m.id,
                    a: p.a(),
                    th: p.th(),
                    lambda: p.lambda(),
                    label: Some(format!("m{}-draw{}", m.id, k + 1)),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_parse_and_print() {
        for s in Strategy::ALL {
            assert_eq!(s.label().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!(
            "static-te".parse::<Strategy>().unwrap(),
            Strategy::StaticTotalEntropy
        );
        let m =
            StudyManifest::from_toml_str("strategies = [\"RG\", \"STATIC-PE\"]\n", "m").unwrap();
        assert_eq!(
            m.strategies,
            vec![Strategy::Random, Strategy::StaticParameterEstimation]
        );
    }

    #[test]
    fn default_truths_are_seeded_prior_draws() {
        let m = StudyManifest {
            default_truths: DefaultTruths {
                illustration: true,
                draws_per_model: 2,
            },
            ..StudyManifest::default()
        };
        let t = m.resolved_truths().unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t[0], Truth::illustration());
        assert_eq!(t, m.resolved_truths().unwrap());
        assert!(t[1..]
            .iter()
            .filter(|x| x.model <= 2)
            .all(|x| x.lambda.is_some()));
        assert!(t[1..]
            .iter()
            .filter(|x| x.model >= 3)
            .all(|x| x.lambda.is_none()));
    }

    #[test]
    fn validation_points_at_the_key() {
        let e = StudyManifest::from_toml_str("seed = 3\nreplications = 0\n", "s.toml")
            .unwrap_err()
            .to_string();
        assert!(e.contains("s.toml:2:"), "{e}");
        let e = StudyManifest::from_toml_str("strategies = []\n", "s")
            .unwrap_err()
            .to_string();
        assert!(e.contains("s:1:"), "{e}");
        let text = "models = [3, 4]\n[[truths]]\nmodel = 1\na = 0.5\nth = 0.7\nlambda = 0.5\n";
        assert!(StudyManifest::from_toml_str(text, "s").is_err());
        let text = "models = [3]\n[[truths]]\nmodel = 3\na = 0.5\nth = 0.7\n";
        assert!(StudyManifest::from_toml_str(text, "s").is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let m = StudyManifest::full_scale();
        let back = StudyManifest::from_toml_str(&m.to_toml().unwrap(), "m").unwrap();
        assert_eq!(back, m);
    }
}
