use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentRecord, Proposal, Session, SessionConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::smc::DesignState;

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk form of a session. The particle state is optional: without it the
/// session is rebuilt by replaying the recorded observations from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SessionFile<T> {
    pub schema_version: u32,
    pub config: SessionConfig,
    pub records: Vec<ExperimentRecord>,
    pub pending: Option<Proposal>,
    pub stopped: Option<String>,
    #[serde(with = "crate::serde_float::vec")]
    pub initial_log_precisions: Vec<f64>,
    pub state: Option<DesignState<T>>,
}

impl<T: Scalar> Session<T> {
    pub fn to_file(&self, with_state: bool) -> SessionFile<T> {
        SessionFile {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            records: self.records.clone(),
            pending: self.pending.clone(),
            stopped: self.stopped.clone(),
            initial_log_precisions: self.initial_log_precisions.clone(),
            state: with_state.then(|| self.state.clone()),
        }
    }

    /// Restores a session. Without a stored particle state the observations
    /// are replayed, and the replay must reproduce the stored records.
    pub fn from_file(file: SessionFile<T>) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported session schema version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        file.config.validate()?;
        let session = match file.state {
            Some(state) => {
                if state.iteration() != file.records.len() {
                    return Err(Error::Serialization(format!(
                        "stored state has {} observations but {} records",
                        state.iteration(),
                        file.records.len()
                    )));
                }
                Self {
                    config: file.config,
                    state,
                    records: file.records,
                    pending: file.pending,
                    stopped: file.stopped,
                    initial_log_precisions: file.initial_log_precisions,
                }
            }
            None => {
                let obs: Vec<(u32, u32)> = file.records.iter().map(|r| (r.d, r.n)).collect();
                let mut s = Self::replay(file.config, &obs)?;
                for (a, b) in s.records.iter().zip(&file.records) {
                    if a.model_probs != b.model_probs || a.log_evidences != b.log_evidences {
                        return Err(Error::Serialization(format!(
                            "replay diverged from the stored record at experiment {}",
                            b.index
                        )));
                    }
                }
                // Replay cannot recover the surfaces that were on offer.
                s.records = file.records;
                s.pending = file.pending;
                s.stopped = file.stopped;
                s
            }
        };
        Ok(session)
    }

    pub fn to_json(&self, with_state: bool) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file(with_state))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    /// Writes the session as JSON, atomically (temporary file, then rename).
    pub fn save(&self, path: &Path, with_state: bool) -> Result<()> {
        let text = self.to_json(with_state)?;
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = std::fs::File::create(&tmp)
                .map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// One experiment of a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub experiment: usize,
    pub d: u32,
    pub n: u32,
    pub models: Vec<u8>,
    pub probabilities: Vec<f64>,
    pub log_evidences: Vec<f64>,
    pub log_precisions: Vec<f64>,
}

const TRACE_GROUPS: [&str; 3] = ["prob", "log_evidence", "log_precision"];

/// One row per experiment: `experiment,d,n`, then `prob_m<id>`,
/// `log_evidence_m<id>` and `log_precision_m<id>` for every model.
pub fn write_trace_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = records.first() else {
        w.write_record(["experiment", "d", "n"])?;
        w.flush()?;
        return Ok(());
    };
    let mut header = vec!["experiment".to_string(), "d".into(), "n".into()];
    for g in TRACE_GROUPS {
        header.extend(first.model_ids.iter().map(|m| format!("{g}_m{m}")));
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.index.to_string(), r.d.to_string(), r.n.to_string()];
        for col in [&r.model_probs, &r.log_evidences, &r.log_precisions] {
            row.extend(col.iter().map(|v| format!("{v:?}")));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let bad = |msg: String| Error::Serialization(format!("trace: {msg}"));
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || (header.len() - 3) % 3 != 0 {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let k = (header.len() - 3) / 3;
    let models = (0..k)
        .map(|i| {
            header[3 + i]
                .strip_prefix("prob_m")
                .and_then(|m| m.parse().ok())
                .ok_or_else(|| bad(format!("bad column `{}`", &header[3 + i])))
        })
        .collect::<Result<Vec<u8>>>()?;
    let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
    let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("`{s}`: {e}")));
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let group = |g: usize| {
                (0..k)
                    .map(|i| float(&rec[3 + g * k + i]))
                    .collect::<Result<Vec<_>>>()
            };
            Ok(TraceRow {
                experiment: int(&rec[0])? as usize,
                d: int(&rec[1])? as u32,
                n: int(&rec[2])? as u32,
                models: models.clone(),
                probabilities: group(0)?,
                log_evidences: group(1)?,
                log_precisions: group(2)?,
            })
        })
        .collect()
}
