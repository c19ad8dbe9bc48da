use std::fs;
use std::path::{Path, PathBuf};

use segrank::stf::write_atomic;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Writes `rows` as CSV (header from the field names) and, with `json`,
/// the same rows as a JSON array next to it. Both writes are atomic.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T], json: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    ensure_parent(path)?;
    write_atomic(path, &bytes)?;
    if json {
        let mut text = serde_json::to_vec_pretty(rows)?;
        text.push(b'\n');
        write_atomic(&json_path(path), &text)?;
    }
    Ok(())
}

pub fn json_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => create_dir(dir),
        _ => Ok(()),
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}
