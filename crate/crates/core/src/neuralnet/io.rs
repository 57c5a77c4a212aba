//! Model files: a `RAGGEDEDGE-MODEL v<N>` header line followed by JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::ensemble::MlpEnsemble;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "RAGGEDEDGE-MODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_model(model: &MlpEnsemble, path: &Path) -> Result<()> {
    let body = serde_json::to_string(model).map_err(|e| Error::ModelFormat(format!("cannot serialize model: {e}")))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{MODEL_MAGIC} v{MODEL_FORMAT_VERSION}").map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MlpEnsemble> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

pub(crate) fn parse_model(text: &str) -> Result<MlpEnsemble> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::ModelFormat("missing header line".into()))?;
    let version = header
        .strip_prefix(MODEL_MAGIC)
        .and_then(|rest| rest.trim().strip_prefix('v'))
        .ok_or_else(|| Error::ModelFormat(format!("bad magic {:?}", truncate(header))))?;
    let version: u32 = version
        .parse()
        .map_err(|_| Error::ModelFormat(format!("bad version {version:?}")))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let model: MlpEnsemble =
        serde_json::from_str(body).map_err(|e| Error::ModelFormat(format!("truncated or corrupt model body: {e}")))?;
    if model.members.is_empty() || model.members.len() != model.histories.len() {
        return Err(Error::ModelFormat("inconsistent member count".into()));
    }
    Ok(model)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(40) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
