//! Reading and atomically writing the text formats.

use std::io::Write;
use std::path::Path;

use super::kv::{from_kv, to_kv};
use super::polls::parse_polls;
use crate::model::{ModelSpec, PollObservation};
use crate::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file in the same directory, then renames, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

/// Parses a spec from key-value text, or JSON when `file` ends in `.json`.
pub fn parse_spec(text: &str, file: &str) -> Result<ModelSpec> {
    let spec: ModelSpec = if is_json(Path::new(file)) {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Schema {
            file: file.to_string(),
            line: e.inner().line(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?
    } else {
        from_kv(text, file)?
    };
    spec.factorize()?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<ModelSpec> {
    parse_spec(&read_text(path)?, &path.display().to_string())
}

pub fn save_spec(path: &Path, spec: &ModelSpec) -> Result<()> {
    let text = if is_json(path) {
        serde_json::to_string_pretty(spec).map_err(|e| Error::Config(e.to_string()))? + "\n"
    } else {
        to_kv(spec)?
    };
    write_atomic(path, text.as_bytes())
}

pub fn load_polls(path: &Path, spec: &ModelSpec) -> Result<Vec<PollObservation>> {
    parse_polls(&read_text(path)?, &path.display().to_string(), spec)
}
