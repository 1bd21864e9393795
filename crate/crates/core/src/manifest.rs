//! JSONL manifests: source items, generated benchmark items and helpers.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ActionDirection;
use crate::planner::{ObjectCategory, ScenarioKind};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

/// Benchmark the source image came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Source {
    DriveBench,
    SaBench,
    Other(String),
}

impl Source {
    pub fn as_str(&self) -> &str {
        match self {
            Self::DriveBench => "DriveBench",
            Self::SaBench => "SA-Bench",
            Self::Other(tag) => tag,
        }
    }
}

impl From<String> for Source {
    fn from(s: String) -> Self {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "drivebench" => Self::DriveBench,
            "sabench" => Self::SaBench,
            _ => Self::Other(s),
        }
    }
}

impl From<Source> for String {
    fn from(s: Source) -> Self {
        s.as_str().to_string()
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One multiple-choice item. Source manifests leave `scenario`, `category`
/// and `origin` unset; generated items carry all three.
///
/// The three options are always "go left", "go straight", "go right" and are
/// therefore not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub id: String,
    /// Image path relative to the manifest directory.
    pub image: String,
    pub question: String,
    pub gt: ActionDirection,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ObjectCategory>,
    /// Id of the source item a generated item was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

impl BenchItem {
    pub fn options() -> [&'static str; 3] {
        ActionDirection::ALL.map(ActionDirection::option_text)
    }
}

/// Reads a JSONL file; blank lines are skipped, bad lines are reported with
/// their 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| ManifestError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ManifestError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| ManifestError::Malformed {
            path: display.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Like [`read_jsonl`] but treats a missing file as empty.
pub fn read_jsonl_if_exists<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

/// Writes all rows to a temporary sibling and renames it over `path`.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for row in rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)
}

pub fn load_items(path: &Path) -> Result<Vec<BenchItem>, ManifestError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_aliases() {
        assert_eq!(Source::from("SA-Bench".to_string()), Source::SaBench);
        assert_eq!(Source::from("sabench".to_string()), Source::SaBench);
        assert_eq!(Source::from("drivebench".to_string()), Source::DriveBench);
        assert_eq!(Source::from("nuScenes".to_string()), Source::Other("nuScenes".into()));
    }

    #[test]
    fn source_line_parses() {
        let line = r#"{"id":"a1","image":"img/a1.png","question":"Where?","gt":"center","source":"DriveBench"}"#;
        let item: BenchItem = serde_json::from_str(line).unwrap();
        assert_eq!(item.gt, ActionDirection::Center);
        assert_eq!(item.scenario, None);
        let back = serde_json::to_string(&item).unwrap();
        assert_eq!(back, line);
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(
            &p,
            "{\"id\":\"a\",\"image\":\"x\",\"question\":\"q\",\"gt\":\"left\",\"source\":\"DriveBench\"}\n\nnot json\n",
        )
        .unwrap();
        let err = read_jsonl::<BenchItem>(&p).unwrap_err();
        assert!(matches!(err, ManifestError::Malformed { line: 3, .. }), "{err}");
    }
}
