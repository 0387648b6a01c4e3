//! Expected utility of a candidate design under the current particle
//! approximation, by exhaustive enumeration of the outcomes `z = 0..=d`.

mod surface;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{expected_proportion, family_lambda, pmf_row_linear};
use crate::scalar::{ln_choose_row, Scalar};
use crate::smc::{DesignState, ParticleSet};

pub use surface::{utility_surface, SurfaceOptions, UtilitySurface};

/// Outcomes whose predictive mass falls below this are unreachable at double
/// precision and carry no expected-utility weight.
pub const MASS_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    #[serde(alias = "pe", alias = "PE")]
    ParameterEstimation,
    #[serde(alias = "md", alias = "MD")]
    ModelDiscrimination,
    #[serde(alias = "te", alias = "TE")]
    TotalEntropy,
}

impl UtilityKind {
    pub const ALL: [UtilityKind; 3] = [
        UtilityKind::ParameterEstimation,
        UtilityKind::ModelDiscrimination,
        UtilityKind::TotalEntropy,
    ];

    pub fn short(self) -> &'static str {
        match self {
            UtilityKind::ParameterEstimation => "PE",
            UtilityKind::ModelDiscrimination => "MD",
            UtilityKind::TotalEntropy => "TE",
        }
    }

    fn needs_entropy(self) -> bool {
        self != UtilityKind::ModelDiscrimination
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "pe" | "parameter-estimation" => Ok(UtilityKind::ParameterEstimation),
            "md" | "model-discrimination" => Ok(UtilityKind::ModelDiscrimination),
            "te" | "total-entropy" => Ok(UtilityKind::TotalEntropy),
            other => Err(Error::Config(format!(
                "unknown utility kind `{other}` (expected pe, md or te)"
            ))),
        }
    }
}

/// Per-particle success probabilities `p_τ(θ_j, d)`, computed once per design.
fn proportions<T: Scalar>(ps: &ParticleSet<T>, d: u32, tau: T) -> Result<Vec<(T, Option<T>)>> {
    ps.particles
        .iter()
        .map(|th| {
            let p = expected_proportion(ps.model.mech, th, d, tau)?;
            Ok((p, family_lambda(&ps.model, th)?))
        })
        .collect()
}

/// Full predictive table of one model at one design: the pmf row of every
/// particle, from which the predictive masses and the updated weights
/// `W_j(d, z) ∝ W_j f(z | θ_j, d)` follow.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveTable<T> {
    pub model: u8,
    pub d: u32,
    /// Current normalized weights `W_j`.
    pub weights: Vec<T>,
    /// `pmf[j][z] = f(z | θ_j, d)`.
    pub pmf: Vec<Vec<T>>,
    /// `fhat[z] = Σ_j W_j f(z | θ_j, d)`.
    pub fhat: Vec<T>,
}

impl<T: Scalar> PredictiveTable<T> {
    pub fn updated_weights(&self, z: u32) -> Vec<T> {
        let z = z as usize;
        let total = self.fhat[z];
        self.weights
            .iter()
            .zip(&self.pmf)
            .map(|(&w, row)| {
                if total > T::zero() {
                    w * row[z] / total
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// `Σ_j W_j(d,z) log f(z|θ_j,d) − log f̂(z)`: the information gained about
    /// the parameters if `z` were observed.
    pub fn pe_utility(&self, z: u32) -> T {
        let zi = z as usize;
        let mut acc = T::zero();
        for (w, row) in self.updated_weights(z).into_iter().zip(&self.pmf) {
            if w > T::zero() {
                acc = acc + w * row[zi].ln();
            }
        }
        acc - self.fhat[zi].ln()
    }
}

pub fn predictive_table<T: Scalar>(
    ps: &ParticleSet<T>,
    d: u32,
    tau: T,
) -> Result<PredictiveTable<T>> {
    let props = proportions(ps, d, tau)?;
    let lc = ln_choose_row(d);
    let n = d as usize + 1;
    let mut fhat = vec![T::zero(); n];
    let mut pmf = Vec::with_capacity(ps.len());
    for ((p, lambda), &w) in props.into_iter().zip(&ps.weights) {
        let mut row = vec![T::zero(); n];
        pmf_row_linear(p, lambda, &lc, &mut row);
        for (acc, &f) in fhat.iter_mut().zip(&row) {
            *acc = *acc + w * f;
        }
        pmf.push(row);
    }
    Ok(PredictiveTable {
        model: ps.model.id,
        d,
        weights: ps.weights.clone(),
        pmf,
        fhat,
    })
}

/// Updated log model probabilities `log π(m | data, z, d)` for each model,
/// given current probabilities and each model's predictive mass at `z`.
pub fn md_utility<T: Scalar>(probs: &[T], fhat_at_z: &[T]) -> Vec<T> {
    let logits: Vec<T> = probs
        .iter()
        .zip(fhat_at_z)
        .map(|(&p, &f)| p.ln() + f.ln())
        .collect();
    let norm = crate::scalar::log_sum_exp(&logits);
    logits.iter().map(|&l| l - norm).collect()
}

/// Sufficient statistics of one model's predictive distribution at one
/// design: `f̂(z)` and `s(z) = Σ_j W_j f_jz log f_jz`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary<T> {
    pub model: u8,
    pub fhat: Vec<T>,
    pub s1: Vec<T>,
}

pub fn predictive_summary<T: Scalar>(
    ps: &ParticleSet<T>,
    d: u32,
    tau: T,
    with_entropy: bool,
) -> Result<PredictiveSummary<T>> {
    let n = d as usize + 1;
    let lc = ln_choose_row(d);
    let mut fhat = vec![T::zero(); n];
    let mut s1 = vec![T::zero(); if with_entropy { n } else { 0 }];
    let mut row = vec![T::zero(); n];
    for (th, &w) in ps.particles.iter().zip(&ps.weights) {
        if w <= T::zero() {
            continue;
        }
        let p = expected_proportion(ps.model.mech, th, d, tau)?;
        let lambda = family_lambda(&ps.model, th)?;
        let ranges = pmf_row_linear(p, lambda, &lc, &mut row);
        // Binomial log pmf values are affine in z given the ln C row.
        let (lp, lq) = (p.ln(), (-p).ln_1p());
        for range in ranges {
            for z in range {
                let wf = w * row[z];
                fhat[z] = fhat[z] + wf;
                if with_entropy {
                    let log_f = match lambda {
                        None => lc[z] + T::of_usize(z) * lp + T::of_usize(n - 1 - z) * lq,
                        Some(_) => row[z].ln(),
                    };
                    s1[z] = s1[z] + wf * log_f;
                }
            }
        }
    }
    Ok(PredictiveSummary {
        model: ps.model.id,
        fhat,
        s1,
    })
}

/// Expected utility of design `d` given the summaries of the models with
/// non-zero probability `probs`.
pub fn combine<T: Scalar>(kind: UtilityKind, probs: &[T], rows: &[PredictiveSummary<T>]) -> T {
    let floor = T::lit(MASS_FLOOR).max(T::min_positive_value());
    let n = rows.first().map_or(0, |r| r.fhat.len());
    let pe = |r: &PredictiveSummary<T>| {
        let mut acc = T::zero();
        for z in 0..n {
            let f = r.fhat[z];
            if f >= floor {
                acc = acc + r.s1[z] - f * f.ln();
            }
        }
        acc
    };
    match kind {
        UtilityKind::ParameterEstimation => probs
            .iter()
            .zip(rows)
            .fold(T::zero(), |acc, (&pi, r)| acc + pi * pe(r)),
        UtilityKind::ModelDiscrimination => {
            let mut acc = T::zero();
            for z in 0..n {
                let mix = probs
                    .iter()
                    .zip(rows)
                    .fold(T::zero(), |a, (&pi, r)| a + pi * r.fhat[z]);
                if mix < floor {
                    continue;
                }
                for (&pi, r) in probs.iter().zip(rows) {
                    let f = r.fhat[z];
                    if f >= floor {
                        acc = acc + pi * f * (pi * f / mix).ln();
                    }
                }
            }
            acc
        }
        UtilityKind::TotalEntropy => {
            // Expanded form: expected log-likelihood under the updated
            // posteriors minus the entropy of the model-averaged predictive,
            // plus the constant Σ π log π that makes it the exact sum of the
            // other two utilities.
            let mut acc = T::zero();
            for z in 0..n {
                let mix = probs
                    .iter()
                    .zip(rows)
                    .fold(T::zero(), |a, (&pi, r)| a + pi * r.fhat[z]);
                for (&pi, r) in probs.iter().zip(rows) {
                    if r.fhat[z] >= floor {
                        acc = acc + pi * r.s1[z];
                    }
                }
                if mix >= floor {
                    acc = acc - mix * mix.ln();
                }
            }
            probs.iter().fold(acc, |a, &pi| a + pi * pi.ln())
        }
    }
}

/// Expected utility of design `d` with assay duration `tau`.
///
/// Models whose posterior probability is exactly zero contribute nothing and
/// are skipped.
pub fn expected_utility<T: Scalar>(
    state: &DesignState<T>,
    d: u32,
    tau: T,
    kind: UtilityKind,
) -> Result<T> {
    if d == 0 {
        return Err(Error::DesignOutOfGrid(d));
    }
    let probs = state.model_probs();
    let mut live = Vec::new();
    let mut rows = Vec::new();
    for (ps, &pi) in state.sets.iter().zip(&probs) {
        if pi > T::zero() {
            live.push(pi);
            rows.push(predictive_summary(ps, d, tau, kind.needs_entropy())?);
        }
    }
    Ok(combine(kind, &live, &rows))
}
