use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Strategy, StudyRecord};

/// Five-number summary (linear interpolation between order statistics).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    /// `None` when no finite values are given.
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            if lo == hi {
                v[lo]
            } else {
                v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
            }
        };
        Some(Self {
            min: v[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Quantiles::of(values).map(|q| q.median)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive design range.
    pub lo: u32,
    pub hi: u32,
    pub count: usize,
}

/// Summary of one `(truth, strategy)` cell over its replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub truth: usize,
    pub truth_label: String,
    pub true_model: u8,
    pub strategy: Strategy,
    pub runs: usize,
    pub failed: usize,
    pub final_log_precision: Option<Quantiles>,
    pub final_true_model_prob: Option<Quantiles>,
    pub median_log_precision_by_iteration: Vec<f64>,
    pub median_true_model_prob_by_iteration: Vec<f64>,
    pub design_histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub cells: Vec<CellSummary>,
}

impl StudySummary {
    pub fn cell(&self, truth: usize, strategy: Strategy) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.truth == truth && c.strategy == strategy)
    }
}

fn histogram(
    designs: impl Iterator<Item = u32>,
    lo: u32,
    hi: u32,
    bins: usize,
) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let span = u64::from(hi - lo) + 1;
    let edges: Vec<u32> = (0..=bins)
        .map(|b| lo + (span * b as u64 / bins as u64) as u32)
        .collect();
    let mut out: Vec<HistogramBin> = edges
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| HistogramBin {
            lo: w[0],
            hi: w[1] - 1,
            count: 0,
        })
        .collect();
    for d in designs {
        if let Some(b) = out.iter_mut().find(|b| (b.lo..=b.hi).contains(&d)) {
            b.count += 1;
        }
    }
    out
}

fn per_iteration_medians(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col: Vec<f64> = rows.iter().filter_map(|r| r.get(i).copied()).collect();
            median(&col).unwrap_or(f64::NAN)
        })
        .collect()
}

/// Per `(truth, strategy)`: quantiles of the final log precision and final
/// true-model probability, per-iteration medians, and a histogram of chosen
/// designs over `[lo, hi]` with `bins` bins. Failed runs are counted but
/// excluded.
pub fn summarize(records: &[StudyRecord], lo: u32, hi: u32, bins: usize) -> StudySummary {
    let mut groups: BTreeMap<(usize, Strategy), Vec<&StudyRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.truth, r.strategy)).or_default().push(r);
    }
    let cells = groups
        .into_iter()
        .map(|((truth, strategy), rs)| {
            let ok: Vec<&StudyRecord> = rs.iter().copied().filter(|r| r.succeeded()).collect();
            let finals_p: Vec<f64> = ok.iter().filter_map(|r| r.final_log_precision()).collect();
            let finals_m: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.final_true_model_prob())
                .collect();
            let prec: Vec<Vec<f64>> = ok.iter().map(|r| r.true_log_precision.clone()).collect();
            let prob: Vec<Vec<f64>> = ok.iter().map(|r| r.true_model_prob()).collect();
            CellSummary {
                truth,
                truth_label: rs[0].truth_label.clone(),
                true_model: rs[0].true_model,
                strategy,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                final_log_precision: Quantiles::of(&finals_p),
                final_true_model_prob: Quantiles::of(&finals_m),
                median_log_precision_by_iteration: per_iteration_medians(&prec),
                median_true_model_prob_by_iteration: per_iteration_medians(&prob),
                design_histogram: histogram(
                    ok.iter().flat_map(|r| r.designs.iter().copied()),
                    lo,
                    hi,
                    bins,
                ),
            }
        })
        .collect();
    StudySummary { cells }
}
