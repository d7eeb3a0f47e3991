use std::fmt;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use cccert::metrics::{validate_eps_grid, DEFAULT_EPS_GRID};
use cccert::transforms::TransformSpec;

/// An invocation problem reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Comma-separated ascending thresholds in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpsGrid(pub Vec<f64>);

impl Default for EpsGrid {
    fn default() -> Self {
        EpsGrid(DEFAULT_EPS_GRID.to_vec())
    }
}

pub fn parse_eps_grid(s: &str) -> Result<EpsGrid, String> {
    let values = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| format!("bad threshold `{p}`")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("the epsilon grid is empty".into());
    }
    validate_eps_grid(&values).map_err(|e| e.to_string())?;
    Ok(EpsGrid(values))
}

pub fn parse_transform(s: &str) -> Result<String, String> {
    s.parse::<TransformSpec>()
        .map(|spec| spec.to_string())
        .map_err(|e| e.to_string())
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}
