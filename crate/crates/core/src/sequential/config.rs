use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config_file::{locate, parse_toml, read_toml};
use crate::error::{Error, Result};
use crate::model::{validate_model_set, ModelSpec};
use crate::smc::MoveConfig;
use crate::utility::{SurfaceOptions, UtilityKind};

/// Candidate design points (initial prey densities), in evaluation order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignGrid(Vec<u32>);

impl DesignGrid {
    pub fn new(points: Vec<u32>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("design grid is empty".into()));
        }
        if points.contains(&0) {
            return Err(Error::Config("design grid entries must be positive".into()));
        }
        Ok(Self(points))
    }

    /// `from, from + step, …` up to and including `to` where it lands on it.
    pub fn range(from: u32, to: u32, step: u32) -> Result<Self> {
        if step == 0 || from > to {
            return Err(Error::Config(format!(
                "bad design range {from}..={to} step {step}"
            )));
        }
        Self::new((from..=to).step_by(step as usize).collect())
    }

    pub fn points(&self) -> &[u32] {
        &self.0
    }

    pub fn contains(&self, d: u32) -> bool {
        self.0.contains(&d)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn as_range(&self) -> Option<(u32, u32, u32)> {
        let p = &self.0;
        if p.len() < 2 || p[1] <= p[0] {
            return None;
        }
        let step = p[1] - p[0];
        p.windows(2)
            .all(|w| w[1] > w[0] && w[1] - w[0] == step)
            .then(|| (p[0], *p.last().unwrap(), step))
    }
}

impl Default for DesignGrid {
    fn default() -> Self {
        Self((1..=300).collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GridRepr {
    Range {
        from: u32,
        to: u32,
        #[serde(default = "one")]
        step: u32,
    },
    List(Vec<u32>),
}

fn one() -> u32 {
    1
}

impl Serialize for DesignGrid {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.as_range() {
            Some((from, to, step)) => GridRepr::Range { from, to, step }.serialize(s),
            None => GridRepr::List(self.0.clone()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for DesignGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match GridRepr::deserialize(d)? {
            GridRepr::Range { from, to, step } => Self::range(from, to, step),
            GridRepr::List(v) => Self::new(v),
        }
        .map_err(D::Error::custom)
    }
}

/// A candidate model: a standard model id or a full specification with its
/// own prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Id(u8),
    Spec(ModelSpec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Maximize the expected utility.
    Optimal,
    /// Uniform draw from the grid.
    Random,
}

/// Optional stopping rules, checked after each observation. Both off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStop {
    /// Stop once some model's posterior probability reaches this.
    pub max_model_prob: Option<f64>,
    /// Stop once the most probable model's log precision grows by less than this.
    pub min_log_precision_gain: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub models: Vec<ModelEntry>,
    /// Particles per model (`J`).
    pub particles: usize,
    pub moves: MoveConfig,
    pub design_grid: DesignGrid,
    /// Trial duration in hours.
    pub tau: f64,
    /// Planned number of experiments (`I`).
    pub experiments: usize,
    pub utility: UtilityKind,
    pub selection: SelectionMode,
    pub seed: u64,
    pub surface: SurfaceOptions,
    pub early_stop: EarlyStop,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            models: (1..=4).map(ModelEntry::Id).collect(),
            particles: 1000,
            moves: MoveConfig::default(),
            design_grid: DesignGrid::default(),
            tau: 24.0,
            experiments: 25,
            utility: UtilityKind::TotalEntropy,
            selection: SelectionMode::Optimal,
            seed: 0,
            surface: SurfaceOptions::default(),
            early_stop: EarlyStop::default(),
        }
    }
}

impl SessionConfig {
    /// Model specifications. Bare ids get the standard prior and an equal
    /// share of prior model probability.
    pub fn resolve_models(&self) -> Result<Vec<ModelSpec<f64>>> {
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        let k = self.models.len() as f64;
        let models = self
            .models
            .iter()
            .map(|m| match m {
                ModelEntry::Id(id) => ModelSpec::standard(*id, 1.0 / k),
                ModelEntry::Spec(s) => Ok(s.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        validate_model_set(&models)?;
        Ok(models)
    }

    pub fn validate(&self) -> Result<()> {
        self.check_field().map_err(|(_, e)| e)
    }

    /// First validation failure together with the offending key.
    fn check_field(&self) -> std::result::Result<(), (&'static str, Error)> {
        let cfg = |key, msg: String| Err((key, Error::Config(msg)));
        self.resolve_models().map_err(|e| ("models", e))?;
        if self.particles == 0 {
            return cfg("particles", "particles must be at least 1".into());
        }
        self.moves.validate().map_err(|e| ("moves", e))?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return cfg("tau", format!("tau must be positive, got {}", self.tau));
        }
        if self.surface.stride == 0 {
            return cfg("stride", "surface stride must be at least 1".into());
        }
        if let Some(p) = self.early_stop.max_model_prob {
            if !(p > 0.0 && p <= 1.0) {
                return cfg(
                    "max_model_prob",
                    format!("max_model_prob must lie in (0, 1], got {p}"),
                );
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text, origin)?;
        cfg.check_field()
            .map_err(|(key, e)| locate(e, text, origin, key))?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let (cfg, text): (Self, String) = read_toml(path)?;
        let origin = path.display().to_string();
        cfg.check_field()
            .map_err(|(key, e)| locate(e, &text, &origin, key))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}
