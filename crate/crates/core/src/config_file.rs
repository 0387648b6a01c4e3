//! TOML configuration loading with line-precise error messages.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// 1-based `(line, column)` of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, col)
}

/// Line on which `key` is assigned (`key = ...`), if any.
pub fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .map(|rest| rest.trim_start().starts_with('='))
                .unwrap_or(false)
        })
        .map(|i| i + 1)
}

/// Parses `text` as TOML into `T`. `origin` names the source in messages.
pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().trim().to_string();
        match e.span() {
            Some(span) => {
                let (line, col) = line_col(text, span.start);
                Error::Config(format!("{origin}:{line}:{col}: {msg}"))
            }
            None => Error::Config(format!("{origin}: {msg}")),
        }
    })
}

/// Attaches the line of `key` (when found) to a validation error.
pub fn locate(err: Error, text: &str, origin: &str, key: &str) -> Error {
    let msg = match err {
        Error::Config(m) | Error::InvalidParameter(m) => m,
        other => other.to_string(),
    };
    match key_line(text, key) {
        Some(line) => Error::Config(format!("{origin}:{line}: {msg}")),
        None => Error::Config(format!("{origin}: {msg}")),
    }
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<(T, String)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let value = parse_toml(&text, &path.display().to_string())?;
    Ok((value, text))
}
