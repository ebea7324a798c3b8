//! Flat `key = value` configuration files.
//!
//! Recognized keys: `phi`, `seed`, `replications`, `mode`, `epsilon_override`,
//! `freeze_tol`. Blank lines and lines starting with `#` are ignored. Command
//! line flags override file values.

use std::path::Path;

use serde::Serialize;

use crate::error::{GswError, Result};
use crate::montecarlo::Mode;
use crate::sampler::FREEZE_TOL;

pub const KEYS: [&str; 6] = [
    "phi",
    "seed",
    "replications",
    "mode",
    "epsilon_override",
    "freeze_tol",
];

/// Values read from a file; every field optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub phi: Option<f64>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub mode: Option<Mode>,
    pub epsilon_override: Option<f64>,
    pub freeze_tol: Option<f64>,
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse().map_err(|_| {
        GswError::Parameter(format!(
            "config line {line}: invalid value '{raw}' for '{key}'"
        ))
    })
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            GswError::Parameter(format!(
                "config line {line_no}: expected key=value, got '{line}'"
            ))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "phi" => cfg.phi = Some(parse_value(key, value, line_no)?),
            "seed" => cfg.seed = Some(parse_value(key, value, line_no)?),
            "replications" => cfg.replications = Some(parse_value(key, value, line_no)?),
            "mode" => cfg.mode = Some(value.parse()?),
            "epsilon_override" => cfg.epsilon_override = Some(parse_value(key, value, line_no)?),
            "freeze_tol" => cfg.freeze_tol = Some(parse_value(key, value, line_no)?),
            other => {
                return Err(GswError::Parameter(format!(
                    "config line {line_no}: unknown key '{other}' (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
    }
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GswError::Data(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Fully resolved settings, echoed in every manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub phi: f64,
    pub seed: u64,
    pub replications: usize,
    pub mode: Mode,
    pub epsilon_override: Option<f64>,
    pub freeze_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            phi: 0.5,
            seed: 0,
            replications: 1000,
            mode: Mode::Gsw,
            epsilon_override: None,
            freeze_tol: FREEZE_TOL,
        }
    }
}

impl RunConfig {
    /// Defaults, then the file, then `flags`.
    pub fn resolve(file: Option<&FileConfig>, flags: &FileConfig) -> Result<Self> {
        let mut cfg = Self::default();
        for layer in file.into_iter().chain(std::iter::once(flags)) {
            if let Some(v) = layer.phi {
                cfg.phi = v;
            }
            if let Some(v) = layer.seed {
                cfg.seed = v;
            }
            if let Some(v) = layer.replications {
                cfg.replications = v;
            }
            if let Some(v) = layer.mode {
                cfg.mode = v;
            }
            if let Some(v) = layer.epsilon_override {
                cfg.epsilon_override = Some(v);
            }
            if let Some(v) = layer.freeze_tol {
                cfg.freeze_tol = v;
            }
        }
        if !(cfg.phi > 0.0 && cfg.phi < 1.0) {
            return Err(GswError::Parameter(format!(
                "phi must lie strictly between 0 and 1, got {}",
                cfg.phi
            )));
        }
        if cfg.replications == 0 {
            return Err(GswError::Parameter(
                "replications must be at least 1".into(),
            ));
        }
        if let Some(e) = cfg.epsilon_override {
            if !(e > 0.0 && e < 1.0) {
                return Err(GswError::Parameter(format!(
                    "epsilon_override must lie in (0, 1), got {e}"
                )));
            }
        }
        if !(cfg.freeze_tol >= 0.0 && cfg.freeze_tol < 0.5) {
            return Err(GswError::Parameter(format!(
                "freeze_tol must lie in [0, 0.5), got {}",
                cfg.freeze_tol
            )));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let cfg = parse_config(
            "# comment\nphi = 0.3\nseed=7\nreplications = 20\nmode = iid\nepsilon_override = 0.2\nfreeze_tol = 1e-8\n",
        )
        .unwrap();
        assert_eq!(cfg.phi, Some(0.3));
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.replications, Some(20));
        assert_eq!(cfg.mode, Some(Mode::Iid));
        assert_eq!(cfg.epsilon_override, Some(0.2));
        assert_eq!(cfg.freeze_tol, Some(1e-8));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config("phi=0.5\nalpha=1\n").unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn flags_override_file() {
        let file = parse_config("phi=0.3\nseed=1\n").unwrap();
        let flags = FileConfig {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(&file), &flags).unwrap();
        assert_eq!(cfg.phi, 0.3);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn resolved_values_are_validated() {
        let flags = FileConfig {
            phi: Some(1.0),
            ..Default::default()
        };
        assert!(RunConfig::resolve(None, &flags).is_err());
    }
}
