//! `key=value` config files merged into the command line.
//!
//! Each non-empty line that does not start with `#` is `key = value`. It
//! becomes `--key value`; `true` yields a bare `--key` and `false` drops the
//! key. File values are inserted right after the subcommand, so flags given
//! on the command line take precedence.

use std::ffi::OsString;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
}

pub fn parse_config(text: &str) -> Result<Vec<String>, ConfigError> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            });
        };
        let (k, v) = (k.trim().trim_start_matches("--"), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            });
        }
        match v {
            "true" => args.push(format!("--{k}")),
            "false" => {}
            _ => {
                args.push(format!("--{k}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

/// Removes `--config <path>` / `--config=<path>` from `argv` and splices the
/// file's arguments in after the subcommand (the first positional argument).
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let mut out = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => path = it.next(),
            Some(s) if s.starts_with("--config=") => path = Some(s["--config=".len()..].into()),
            _ => out.push(a),
        }
    }
    let Some(path) = path else { return Ok(out) };
    let p = Path::new(&path);
    let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
        path: p.display().to_string(),
        source,
    })?;
    let extra = parse_config(&text)?;
    let at = out
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(out.len(), |i| i + 2);
    out.splice(at..at, extra.into_iter().map(OsString::from));
    Ok(out)
}
