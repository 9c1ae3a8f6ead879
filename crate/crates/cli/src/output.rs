//! Output locations and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const OUTPUT_ROOT_ENV: &str = "SEVAL_OUTPUT_ROOT";

/// Flag, then environment, then config file, then the working directory.
pub fn output_root(flag: Option<&Path>, from_config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    from_config.map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Writes into a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::bad(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::bad(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}
