use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    pub label: Label,
    pub generator: String,
    pub split: Split,
}

#[derive(Deserialize)]
struct RawSample {
    path: String,
    label: String,
    generator: String,
    split: String,
}

/// Reads a JSON-lines manifest. Blank lines are skipped; relative paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>, HarnessError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample =
            serde_json::from_str(line).map_err(|e| HarnessError::Parse { line: line_no, message: e.to_string() })?;
        let label = match raw.label.as_str() {
            "real" => Label::Real,
            "fake" => Label::Fake,
            _ => return Err(HarnessError::UnknownLabel { line: line_no, label: raw.label }),
        };
        let split = match raw.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(HarnessError::Parse { line: line_no, message: format!("unknown split {other:?}") }),
        };
        if raw.path.is_empty() {
            return Err(HarnessError::Parse { line: line_no, message: "empty path".into() });
        }
        let p = PathBuf::from(&raw.path);
        let path = if p.is_absolute() { p } else { base.join(p) };
        out.push(Sample { path, label, generator: raw.generator, split });
    }
    Ok(out)
}

/// Writes samples as JSON lines, with paths relative to `root` when they
/// lie under it.
pub fn write_manifest(path: impl AsRef<Path>, samples: &[Sample], root: &Path) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for s in samples {
        let rel = s.path.strip_prefix(root).unwrap_or(&s.path);
        let rec = Sample { path: rel.to_path_buf(), ..s.clone() };
        serde_json::to_writer(&mut buf, &rec).expect("sample serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&buf).map_err(|e| HarnessError::io(path, e))
}
