//! Batch comparisons of design strategies over truths and replications, with
//! checkpointed records and plot-ready summaries.

mod manifest;
mod output;
mod summary;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{mix_seed, stream_rng, Stream};
use crate::sequential::Session;
use crate::static_design::{coordinate_exchange, expected_static_utility, StaticDesign};

pub use manifest::{DefaultTruths, StaticSettings, Strategy, StudyManifest, Truth};
pub use output::{
    read_records_csv, write_design_histogram_csv, write_final_model_probs_csv,
    write_final_precision_csv, write_model_probs_by_iteration_csv, write_outputs,
    write_precision_by_iteration_csv, write_records_csv, write_summary_csv, RecordRow,
};
pub use summary::{median, summarize, CellSummary, HistogramBin, Quantiles, StudySummary};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// One run of one strategy against one truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    /// Index into the resolved truth list.
    pub truth: usize,
    pub truth_label: String,
    pub true_model: u8,
    pub strategy: Strategy,
    pub replication: usize,
    pub seed: u64,
    pub model_ids: Vec<u8>,
    /// Per iteration.
    pub designs: Vec<u32>,
    pub observations: Vec<u32>,
    #[serde(with = "crate::serde_float::vec")]
    pub true_log_precision: Vec<f64>,
    /// Per iteration, one probability per model in `model_ids` order.
    pub model_probs: Vec<Vec<f64>>,
    pub static_design: Option<StaticDesign>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

impl StudyRecord {
    pub fn key(&self) -> (usize, Strategy, usize) {
        (self.truth, self.strategy, self.replication)
    }

    pub fn iterations(&self) -> usize {
        self.designs.len()
    }

    pub fn true_index(&self) -> Option<usize> {
        self.model_ids.iter().position(|&m| m == self.true_model)
    }

    pub fn true_model_prob(&self) -> Vec<f64> {
        match self.true_index() {
            Some(k) => self.model_probs.iter().map(|p| p[k]).collect(),
            None => vec![f64::NAN; self.model_probs.len()],
        }
    }

    pub fn final_log_precision(&self) -> Option<f64> {
        self.true_log_precision.last().copied()
    }

    pub fn final_true_model_prob(&self) -> Option<f64> {
        self.true_model_prob().last().copied()
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    /// The record with its timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Seed of one cell.
pub fn cell_seed(base: u64, truth: usize, strategy: Strategy, replication: usize) -> u64 {
    mix_seed(
        base,
        &[
            Stream::Study as u64,
            truth as u64,
            strategy.code(),
            replication as u64,
        ],
    )
}

fn static_seed(base: u64, truth: usize, strategy: Strategy, replication: Option<usize>) -> u64 {
    mix_seed(
        base,
        &[
            Stream::Static as u64,
            truth as u64,
            strategy.code(),
            replication.map_or(u64::MAX, |r| r as u64),
        ],
    )
}

/// Coordinate exchange for a static strategy, started from a uniform random
/// design.
fn optimize_static(
    manifest: &StudyManifest,
    models: &[ModelSpec<f64>],
    strategy: Strategy,
    seed: u64,
) -> Result<StaticDesign> {
    let kind = strategy
        .utility()
        .expect("static strategies have a utility");
    let grid = manifest.design_grid.points();
    let mut rng = stream_rng(seed, Stream::Design, &[]);
    let init: Vec<u32> = (0..manifest.experiments)
        .map(|_| grid[rng.random_range(0..grid.len())])
        .collect();
    let st = manifest.static_design;
    coordinate_exchange(
        |d| expected_static_utility(models, d, manifest.tau, kind, st.draws, seed),
        &init,
        grid,
        st.exchange(),
    )
}

struct Cell<'a> {
    truth_idx: usize,
    truth: &'a Truth,
    strategy: Strategy,
    replication: usize,
}

fn run_cell(
    manifest: &StudyManifest,
    models: &[ModelSpec<f64>],
    cell: &Cell<'_>,
    shared_static: Option<&Result<StaticDesign>>,
) -> StudyRecord {
    let started = Instant::now();
    let seed = cell_seed(
        manifest.seed,
        cell.truth_idx,
        cell.strategy,
        cell.replication,
    );
    let mut record = StudyRecord {
        truth: cell.truth_idx,
        truth_label: cell.truth.name(),
        true_model: cell.truth.model,
        strategy: cell.strategy,
        replication: cell.replication,
        seed,
        model_ids: models.iter().map(|m| m.id).collect(),
        designs: Vec::new(),
        observations: Vec::new(),
        true_log_precision: Vec::new(),
        model_probs: Vec::new(),
        static_design: None,
        warnings: Vec::new(),
        error: None,
        wall_seconds: 0.0,
    };
    let outcome = (|| -> Result<Session<f64>> {
        let truth_model = models
            .iter()
            .find(|m| m.id == cell.truth.model)
            .ok_or_else(|| {
                Error::Config(format!(
                    "truth model {} is not a candidate",
                    cell.truth.model
                ))
            })?;
        let theta = cell.truth.params()?;
        let mut session = Session::<f64>::new(manifest.session_config(seed, cell.strategy))?;
        if cell.strategy.is_static() {
            let design = match shared_static {
                Some(shared) => shared.clone()?,
                None => optimize_static(
                    manifest,
                    models,
                    cell.strategy,
                    static_seed(
                        manifest.seed,
                        cell.truth_idx,
                        cell.strategy,
                        Some(cell.replication),
                    ),
                )?,
            };
            let points = design.points.clone();
            record.static_design = Some(design);
            session.simulate_along(truth_model, &theta, &points)?;
        } else {
            session.simulate(truth_model, &theta)?;
        }
        Ok(session)
    })();
    match outcome {
        Ok(session) => {
            let k = record.true_index();
            for r in session.records() {
                record.designs.push(r.d);
                record.observations.push(r.n);
                record
                    .true_log_precision
                    .push(k.map_or(f64::NAN, |k| r.log_precisions[k]));
                record.model_probs.push(r.model_probs.clone());
                record.warnings.extend(
                    r.warnings
                        .iter()
                        .map(|w| format!("experiment {}: {w}", r.index)),
                );
            }
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record.wall_seconds = started.elapsed().as_secs_f64();
    record
}

/// Reads the records checkpointed so far. A torn final line (interrupted
/// write) is ignored.
pub fn read_checkpoint(path: &Path) -> Result<Vec<StudyRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::Io(format!("{}: {e}", path.display()))),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()?;
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => {
                log::warn!("{}: ignoring torn final line", path.display())
            }
            Err(e) => {
                return Err(Error::Serialization(format!(
                    "{}:{}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

fn sort_records(records: &mut [StudyRecord]) {
    records.sort_by_key(StudyRecord::key);
}

/// Runs every cell of the study. With `out_dir`, records are appended to a
/// checkpoint as they complete and cells already recorded there are skipped,
/// so an interrupted study resumes where it stopped; the manifest is stored
/// alongside and must match on resume. Returns all records in
/// `(truth, strategy, replication)` order.
pub fn run_study(manifest: &StudyManifest, out_dir: Option<&Path>) -> Result<Vec<StudyRecord>> {
    manifest.validate()?;
    let models = manifest.resolved_models()?;
    let truths = manifest.resolved_truths()?;
    let mut done: Vec<StudyRecord> = Vec::new();
    let mut writer = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let mpath = dir.join(MANIFEST_FILE);
        if mpath.exists() {
            let stored = StudyManifest::from_toml_file(&mpath)?;
            if &stored != manifest {
                return Err(Error::Config(format!(
                    "{} holds a different study; use a fresh output directory",
                    dir.display()
                )));
            }
        } else {
            std::fs::write(&mpath, manifest.to_toml()?)?;
        }
        let rpath = dir.join(RECORDS_FILE);
        done = read_checkpoint(&rpath)?;
        // Rewrite without a possibly torn tail before appending.
        let mut text = String::new();
        for r in &done {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(&rpath, text)?;
        let file = OpenOptions::new().append(true).open(&rpath)?;
        writer = Some(Mutex::new(file));
    }
    let have: BTreeSet<(usize, Strategy, usize)> = done.iter().map(StudyRecord::key).collect();

    let mut shared: BTreeMap<(usize, Strategy), Result<StaticDesign>> = BTreeMap::new();
    if manifest.static_design.reuse_across_replications {
        let jobs: Vec<(usize, Strategy)> = (0..truths.len())
            .flat_map(|t| {
                manifest
                    .strategies
                    .iter()
                    .filter(|s| s.is_static())
                    .map(move |&s| (t, s))
            })
            .filter(|&(t, s)| (0..manifest.replications).any(|r| !have.contains(&(t, s, r))))
            .collect();
        shared = jobs
            .par_iter()
            .map(|&(t, s)| {
                (
                    (t, s),
                    optimize_static(manifest, &models, s, static_seed(manifest.seed, t, s, None)),
                )
            })
            .collect();
    }

    let cells: Vec<Cell<'_>> = truths
        .iter()
        .enumerate()
        .flat_map(|(ti, truth)| {
            manifest.strategies.iter().flat_map(move |&strategy| {
                (0..manifest.replications).map(move |replication| Cell {
                    truth_idx: ti,
                    truth,
                    strategy,
                    replication,
                })
            })
        })
        .filter(|c| !have.contains(&(c.truth_idx, c.strategy, c.replication)))
        .collect();
    let total = cells.len();
    let counter = std::sync::atomic::AtomicUsize::new(0);
    let job = || -> Result<Vec<StudyRecord>> {
        cells
            .par_iter()
            .map(|cell| {
                let rec = run_cell(
                    manifest,
                    &models,
                    cell,
                    shared.get(&(cell.truth_idx, cell.strategy)),
                );
                if let Some(w) = &writer {
                    let line = serde_json::to_string(&rec)? + "\n";
                    let mut f = w
                        .lock()
                        .map_err(|_| Error::Io("checkpoint writer poisoned".into()))?;
                    f.write_all(line.as_bytes())?;
                    f.flush()?;
                }
                let n = counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                match &rec.error {
                    None => log::info!(
                        "[{n}/{total}] truth {} {} rep {} done in {:.1}s",
                        rec.truth,
                        rec.strategy,
                        rec.replication,
                        rec.wall_seconds
                    ),
                    Some(e) => log::warn!(
                        "[{n}/{total}] truth {} {} rep {} failed: {e}",
                        rec.truth,
                        rec.strategy,
                        rec.replication
                    ),
                }
                Ok(rec)
            })
            .collect()
    };
    let fresh = if manifest.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(manifest.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(job)?
    } else {
        job()?
    };
    done.extend(fresh);
    sort_records(&mut done);
    Ok(done)
}
