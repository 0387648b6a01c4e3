use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{summarize, StudyRecord, StudySummary};
use crate::error::{Error, Result};

/// One iteration of one run, as written to `records.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub truth: usize,
    pub truth_label: String,
    pub true_model: u8,
    pub strategy: String,
    pub replication: usize,
    pub seed: u64,
    pub iteration: usize,
    pub d: u32,
    pub n: u32,
    pub true_log_precision: f64,
    pub true_model_prob: f64,
    /// `id:probability` pairs separated by `;`.
    pub model_probs: String,
}

fn probs_field(ids: &[u8], probs: &[f64]) -> String {
    ids.iter()
        .zip(probs)
        .map(|(m, p)| format!("{m}:{p:?}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

/// Per-iteration rows of every successful run.
pub fn write_records_csv<W: Write>(records: &[StudyRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in records.iter().filter(|r| r.succeeded()) {
        let p_true = r.true_model_prob();
        for i in 0..r.iterations() {
            w.serialize(RecordRow {
                truth: r.truth,
                truth_label: r.truth_label.clone(),
                true_model: r.true_model,
                strategy: r.strategy.to_string(),
                replication: r.replication,
                seed: r.seed,
                iteration: i + 1,
                d: r.designs[i],
                n: r.observations[i],
                true_log_precision: r.true_log_precision[i],
                true_model_prob: p_true[i],
                model_probs: probs_field(&r.model_ids, &r.model_probs[i]),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RecordRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn write_summary_csv<W: Write>(summary: &StudySummary, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut header = vec![
        "truth",
        "truth_label",
        "true_model",
        "strategy",
        "runs",
        "failed",
    ];
    let stats = ["min", "q25", "median", "q75", "max"];
    let p_cols: Vec<String> = stats
        .iter()
        .map(|s| format!("final_log_precision_{s}"))
        .collect();
    let m_cols: Vec<String> = stats
        .iter()
        .map(|s| format!("final_true_model_prob_{s}"))
        .collect();
    header.extend(p_cols.iter().map(String::as_str));
    header.extend(m_cols.iter().map(String::as_str));
    w.write_record(&header)?;
    for c in &summary.cells {
        let mut row = vec![
            c.truth.to_string(),
            c.truth_label.clone(),
            c.true_model.to_string(),
            c.strategy.to_string(),
            c.runs.to_string(),
            c.failed.to_string(),
        ];
        for q in [c.final_log_precision, c.final_true_model_prob] {
            row.extend(
                [
                    q.map(|q| q.min),
                    q.map(|q| q.q25),
                    q.map(|q| q.median),
                    q.map(|q| q.q75),
                    q.map(|q| q.max),
                ]
                .map(opt),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn head(r: &StudyRecord) -> [String; 5] {
    [
        r.truth.to_string(),
        r.truth_label.clone(),
        r.true_model.to_string(),
        r.strategy.to_string(),
        r.replication.to_string(),
    ]
}

const HEAD: [&str; 5] = [
    "truth",
    "truth_label",
    "true_model",
    "strategy",
    "replication",
];

/// Final log D-posterior precision of the true model, one row per run.
pub fn write_final_precision_csv<W: Write>(records: &[StudyRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(HEAD.iter().chain(&["final_log_precision"]))?;
    for r in records.iter().filter(|r| r.succeeded()) {
        w.write_record(
            head(r)
                .iter()
                .cloned()
                .chain([opt(r.final_log_precision())]),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Final probability of every candidate model, one row per run and model.
pub fn write_final_model_probs_csv<W: Write>(records: &[StudyRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(HEAD.iter().chain(&["model", "probability"]))?;
    for r in records.iter().filter(|r| r.succeeded()) {
        if let Some(last) = r.model_probs.last() {
            for (m, p) in r.model_ids.iter().zip(last) {
                w.write_record(
                    head(r)
                        .iter()
                        .cloned()
                        .chain([m.to_string(), format!("{p:?}")]),
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// True-model log precision after each experiment.
pub fn write_precision_by_iteration_csv<W: Write>(records: &[StudyRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(HEAD.iter().chain(&["iteration", "log_precision"]))?;
    for r in records.iter().filter(|r| r.succeeded()) {
        for (i, p) in r.true_log_precision.iter().enumerate() {
            w.write_record(
                head(r)
                    .iter()
                    .cloned()
                    .chain([(i + 1).to_string(), format!("{p:?}")]),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Every model's probability after each experiment.
pub fn write_model_probs_by_iteration_csv<W: Write>(records: &[StudyRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(HEAD.iter().chain(&["iteration", "model", "probability"]))?;
    for r in records.iter().filter(|r| r.succeeded()) {
        for (i, probs) in r.model_probs.iter().enumerate() {
            for (m, p) in r.model_ids.iter().zip(probs) {
                w.write_record(head(r).iter().cloned().chain([
                    (i + 1).to_string(),
                    m.to_string(),
                    format!("{p:?}"),
                ]))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Design-point histograms per `(truth, strategy)` with relative frequencies.
pub fn write_design_histogram_csv<W: Write>(summary: &StudySummary, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "truth",
        "truth_label",
        "true_model",
        "strategy",
        "lo",
        "hi",
        "count",
        "relative_frequency",
    ])?;
    for c in &summary.cells {
        let total: usize = c.design_histogram.iter().map(|b| b.count).sum();
        for b in &c.design_histogram {
            let rel = if total > 0 {
                b.count as f64 / total as f64
            } else {
                0.0
            };
            w.write_record([
                c.truth.to_string(),
                c.truth_label.clone(),
                c.true_model.to_string(),
                c.strategy.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
                format!("{rel:?}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Bins used for design histograms.
pub const HISTOGRAM_BINS: usize = 30;

/// Writes every study output into `dir`: the per-iteration records, the
/// summary table and one CSV per plotted quantity.
pub fn write_outputs(dir: &Path, records: &[StudyRecord], grid: &[u32]) -> Result<StudySummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let lo = grid.iter().copied().min().unwrap_or(1);
    let hi = grid.iter().copied().max().unwrap_or(1);
    let summary = summarize(records, lo, hi, HISTOGRAM_BINS);
    let file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        let p = dir.join(name);
        Ok(std::io::BufWriter::new(
            std::fs::File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        ))
    };
    write_records_csv(records, file("records.csv")?)?;
    write_summary_csv(&summary, file("summary.csv")?)?;
    write_final_precision_csv(records, file("final_log_precision.csv")?)?;
    write_final_model_probs_csv(records, file("final_model_probs.csv")?)?;
    write_precision_by_iteration_csv(records, file("log_precision_by_iteration.csv")?)?;
    write_model_probs_by_iteration_csv(records, file("model_probs_by_iteration.csv")?)?;
    write_design_histogram_csv(&summary, file("design_points.csv")?)?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}
