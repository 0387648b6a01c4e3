use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::smc::DesignState;
use crate::utility::{expected_utility, UtilityKind};

/// How much of the design grid to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceOptions {
    /// Evaluate every `stride`-th grid entry (plus the last); 1 means the full grid.
    pub stride: usize,
    /// With `stride > 1`, every grid entry within this distance of the coarse
    /// argmax is evaluated as well before the final argmax is taken.
    pub refine_window: u32,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            refine_window: 5,
        }
    }
}

/// Expected utility over (part of) the design grid, in grid order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySurface {
    pub kind: UtilityKind,
    /// Evaluated designs; the whole grid unless a coarse stride was used.
    pub designs: Vec<u32>,
    #[serde(with = "crate::serde_float::vec")]
    pub values: Vec<f64>,
    pub argmax: u32,
    #[serde(with = "crate::serde_float")]
    pub max_value: f64,
}

impl UtilitySurface {
    /// Two-column CSV with header `d,utility`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["d", "utility"])?;
        for (d, v) in self.designs.iter().zip(&self.values) {
            w.write_record([d.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest value, ties to the smallest design.
fn best(designs: &[u32], values: &[f64]) -> Option<(u32, f64)> {
    let mut out: Option<(u32, f64)> = None;
    for (&d, &v) in designs.iter().zip(values) {
        out = match out {
            None => Some((d, v)),
            Some((bd, bv)) if v > bv || (v == bv && d < bd) || (bv.is_nan() && !v.is_nan()) => {
                Some((d, v))
            }
            keep => keep,
        };
    }
    out
}

/// Evaluates the expected utility at the grid designs, concurrently, and
/// returns the surface with its argmax.
pub fn utility_surface<T: Scalar>(
    state: &DesignState<T>,
    grid: &[u32],
    tau: T,
    kind: UtilityKind,
    opts: SurfaceOptions,
) -> Result<UtilitySurface> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("design grid is empty".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&d| d == 0) {
        return Err(Error::DesignOutOfGrid(bad));
    }
    let eval = |idx: &[usize]| -> Result<Vec<f64>> {
        idx.par_iter()
            .map(|&k| expected_utility(state, grid[k], tau, kind).map(Scalar::as_f64))
            .collect()
    };
    let stride = opts.stride.max(1);
    let mut picked: Vec<usize> = (0..grid.len()).step_by(stride).collect();
    if *picked.last().unwrap() != grid.len() - 1 {
        picked.push(grid.len() - 1);
    }
    let mut values = eval(&picked)?;
    if stride > 1 {
        let designs: Vec<u32> = picked.iter().map(|&k| grid[k]).collect();
        let (coarse, _) = best(&designs, &values).expect("non-empty grid");
        let lo = coarse.saturating_sub(opts.refine_window);
        let hi = coarse.saturating_add(opts.refine_window);
        let extra: Vec<usize> = (0..grid.len())
            .filter(|k| (lo..=hi).contains(&grid[*k]) && picked.binary_search(k).is_err())
            .collect();
        let extra_values = eval(&extra)?;
        let mut merged: Vec<(usize, f64)> = picked
            .into_iter()
            .zip(values)
            .chain(extra.into_iter().zip(extra_values))
            .collect();
        merged.sort_by_key(|&(k, _)| k);
        picked = merged.iter().map(|&(k, _)| k).collect();
        values = merged.into_iter().map(|(_, v)| v).collect();
    }
    let designs: Vec<u32> = picked.iter().map(|&k| grid[k]).collect();
    let (argmax, max_value) = best(&designs, &values).expect("non-empty grid");
    Ok(UtilitySurface {
        kind,
        designs,
        values,
        argmax,
        max_value,
    })
}
