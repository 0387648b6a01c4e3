//! Terminal loop for assisted sessions: show the proposed prey density, read
//! the observed count, show the updated posterior.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::Result;
use fr_design::sequential::{Session, SessionStatus};

/// What ended the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssistExit {
    Complete,
    /// The user quit or input ran out; the session is saved and can resume.
    Paused,
}

fn print_state<W: Write>(session: &Session<f64>, out: &mut W) -> Result<()> {
    let ids = session.model_ids();
    let probs = session.model_probs();
    let snaps = session.snapshots();
    writeln!(out, "  model  probability  log precision")?;
    for ((id, p), s) in ids.iter().zip(&probs).zip(&snaps) {
        writeln!(out, "  {id:>5}  {p:>11.4}  {:>13.4}", s.log_precision)?;
    }
    Ok(())
}

/// Runs until the session completes or the user types `q` (or input ends).
/// Each line is either `n` (trial run at the proposed density) or `d n`
/// (trial run at another density in the grid). Invalid input is reported
/// and the prompt repeats. After every accepted observation the session is
/// saved to `save_to`.
pub fn assist_loop<R: BufRead, W: Write>(
    session: &mut Session<f64>,
    mut input: R,
    out: &mut W,
    save_to: Option<&Path>,
) -> Result<AssistExit> {
    loop {
        if session.status() == SessionStatus::Complete {
            writeln!(
                out,
                "session complete after {} experiments",
                session.records().len()
            )?;
            if let Some(reason) = session.stop_reason() {
                writeln!(out, "stopped early: {reason}")?;
            }
            return Ok(AssistExit::Complete);
        }
        let proposal = session.propose_next_design()?.clone();
        writeln!(
            out,
            "experiment {}: run the trial with {} prey",
            proposal.index, proposal.d
        )?;
        if let Some(s) = &proposal.surface {
            writeln!(
                out,
                "  ({} utility {:.5} at the optimum)",
                s.kind, s.max_value
            )?;
        }
        loop {
            write!(out, "prey eaten (0..={}), `d n`, or q: ", proposal.d)?;
            out.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                writeln!(out)?;
                return Ok(AssistExit::Paused);
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let parsed: Option<(u32, u32)> = match words.as_slice() {
                ["q"] | ["quit"] => return Ok(AssistExit::Paused),
                [n] => n.parse().ok().map(|n| (proposal.d, n)),
                [d, n] => d.parse().ok().zip(n.parse().ok()),
                _ => None,
            };
            let Some((d, n)) = parsed else {
                writeln!(
                    out,
                    "could not read `{}`; enter a whole number",
                    line.trim()
                )?;
                continue;
            };
            match session.record_observation(d, n) {
                Ok(rec) => {
                    for w in &rec.warnings {
                        writeln!(out, "warning: {w}")?;
                    }
                    break;
                }
                Err(e) => writeln!(out, "rejected: {e}")?,
            }
        }
        print_state(session, out)?;
        if let Some(path) = save_to {
            session.save(path, true)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fr_design::sequential::{DesignGrid, SessionConfig};

    fn session() -> Session<f64> {
        Session::new(SessionConfig {
            particles: 50,
            experiments: 2,
            design_grid: DesignGrid::range(10, 50, 10).unwrap(),
            seed: 3,
            ..SessionConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn rejects_impossible_counts_and_reprompts() {
        let mut s = session();
        let d = s.propose_next_design().unwrap().d;
        let input = format!("{}\nmany\n3\n10 4\n", d + 1);
        let mut out = Vec::new();
        let exit = assist_loop(&mut s, input.as_bytes(), &mut out, None).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(exit, AssistExit::Complete);
        assert!(
            text.contains("rejected: observation out of range"),
            "{text}"
        );
        assert!(text.contains("could not read `many`"));
        assert_eq!(s.records().len(), 2);
        assert_eq!((s.records()[0].d, s.records()[0].n), (d, 3));
        assert_eq!((s.records()[1].d, s.records()[1].n), (10, 4));
    }

    #[test]
    fn quitting_pauses_and_saves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let mut s = session();
        let mut out = Vec::new();
        let exit = assist_loop(&mut s, "2\nq\n".as_bytes(), &mut out, Some(&path)).unwrap();
        assert_eq!(exit, AssistExit::Paused);
        let back = Session::<f64>::load(&path).unwrap();
        assert_eq!(back.records().len(), 1);
    }
}
