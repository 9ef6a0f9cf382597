use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{validation, CliError, CliResult};

/// Refuses to clobber any of `paths` unless `force` is set.
pub fn ensure_writable(paths: &[PathBuf], force: bool) -> CliResult<()> {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        return Err(validation(format!(
            "refusing to overwrite {} (pass --force)",
            p.display()
        )));
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// CSV text preceded by `header` comment lines.
pub fn csv_text<R: Serialize>(header: &str, rows: &[R]) -> CliResult<Vec<u8>> {
    let mut out = header.as_bytes().to_vec();
    let mut w = csv::Writer::from_writer(&mut out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    drop(w);
    Ok(out)
}

pub fn json_text<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Reads a CSV file written by [`csv_text`], skipping `#` comment lines.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| validation(format!("{}: {e}", path.display())))
}
