//! Small filesystem helpers shared by every file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

/// Converts a serde_json line/column into a byte offset within `bytes`.
pub fn json_error(path: &Path, bytes: &[u8], err: &serde_json::Error) -> Error {
    let mut offset = 0;
    let mut line = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if line == err.line() {
            offset = i + err.column().saturating_sub(1);
            break;
        }
        if b == b'\n' {
            line += 1;
        }
    }
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset.min(bytes.len()),
        detail: err.to_string(),
    }
}
