use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StaticEstimate;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExchangeOptions {
    /// Full cycles over the coordinates at most.
    pub passes: usize,
    /// Evenly spaced grid points tried per coordinate (plus the current value).
    pub candidates: usize,
}

impl Default for ExchangeOptions {
    fn default() -> Self {
        Self {
            passes: 3,
            candidates: 20,
        }
    }
}

/// Result of coordinate exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticDesign {
    pub points: Vec<u32>,
    pub estimate: f64,
    pub se: f64,
    pub draws: usize,
    pub failures: usize,
    pub passes_run: usize,
    pub evaluations: usize,
}

/// `count` evenly spaced entries of `grid` (first and last included).
pub fn candidate_subgrid(grid: &[u32], count: usize) -> Vec<u32> {
    if grid.is_empty() || count == 0 {
        return Vec::new();
    }
    if count >= grid.len() || count == 1 {
        return if count == 1 {
            vec![grid[0]]
        } else {
            grid.to_vec()
        };
    }
    let last = (grid.len() - 1) as f64;
    let mut out: Vec<u32> = (0..count)
        .map(|k| grid[(k as f64 * last / (count - 1) as f64).round() as usize])
        .collect();
    out.dedup();
    out
}

/// Cyclic coordinate exchange. For each coordinate the candidates are swept
/// (evaluated concurrently); the best replaces the current value only when
/// it beats the current estimate by more than one standard error. Stops after
/// `passes` cycles or a cycle without change.
///
/// `objective` must be deterministic in the design (common random numbers),
/// which makes the reported estimate non-decreasing.
pub fn coordinate_exchange<F>(
    objective: F,
    d_init: &[u32],
    grid: &[u32],
    opts: ExchangeOptions,
) -> Result<StaticDesign>
where
    F: Fn(&[u32]) -> Result<StaticEstimate> + Sync,
{
    if let Some(&bad) = d_init.iter().find(|d| !grid.contains(d)) {
        return Err(Error::DesignOutOfGrid(bad));
    }
    let mut design = d_init.to_vec();
    let mut current = objective(&design)?;
    let mut evaluations = 1;
    let base = candidate_subgrid(grid, opts.candidates);
    let mut passes_run = 0;
    for _ in 0..opts.passes {
        passes_run += 1;
        let mut changed = false;
        for k in 0..design.len() {
            let cands: Vec<u32> = base.iter().copied().filter(|&c| c != design[k]).collect();
            let scored: Vec<(u32, StaticEstimate)> = cands
                .par_iter()
                .map(|&c| {
                    let mut trial = design.clone();
                    trial[k] = c;
                    objective(&trial).map(|e| (c, e))
                })
                .collect::<Result<_>>()?;
            evaluations += scored.len();
            let best = scored.iter().filter(|(_, e)| e.estimate.is_finite()).fold(
                None::<&(u32, StaticEstimate)>,
                |acc, x| match acc {
                    Some(a)
                        if a.1.estimate > x.1.estimate
                            || (a.1.estimate == x.1.estimate && a.0 <= x.0) =>
                    {
                        Some(a)
                    }
                    _ => Some(x),
                },
            );
            if let Some(&(c, est)) = best {
                let margin = if current.se.is_finite() {
                    current.se
                } else {
                    0.0
                };
                if est.estimate > current.estimate + margin {
                    design[k] = c;
                    current = est;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(StaticDesign {
        points: design,
        estimate: current.estimate,
        se: current.se,
        draws: current.draws,
        failures: current.failures,
        passes_run,
        evaluations,
    })
}
