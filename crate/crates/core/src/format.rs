//! Line-oriented artifact files.
//!
//! Every artifact starts with a header line
//! `{"artifact":"effiset","kind":"<kind>","version":"<major>.<minor>"}`
//! followed by one JSON object per line. Readers accept any minor version of
//! a supported major version and reject everything else.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const ARTIFACT_TAG: &str = "effiset";
pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Tasks,
    Candidates,
    Profiles,
    Selected,
    Dataset,
    Results,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Tasks => "tasks",
            ArtifactKind::Candidates => "candidates",
            ArtifactKind::Profiles => "profiles",
            ArtifactKind::Selected => "selected",
            ArtifactKind::Dataset => "dataset",
            ArtifactKind::Results => "results",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tasks" => ArtifactKind::Tasks,
            "candidates" => ArtifactKind::Candidates,
            "profiles" => ArtifactKind::Profiles,
            "selected" => ArtifactKind::Selected,
            "dataset" => ArtifactKind::Dataset,
            "results" => ArtifactKind::Results,
            _ => return None,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    artifact: String,
    kind: String,
    version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: missing or malformed artifact header")]
    MissingHeader { path: PathBuf },
    #[error("{path}: unsupported artifact version {version} (this build reads {FORMAT_MAJOR}.x)")]
    UnsupportedVersion { path: PathBuf, version: String },
    #[error("{path}: expected a '{expected}' artifact, found '{found}'")]
    WrongKind {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn header_line(kind: ArtifactKind) -> String {
    let header = Header {
        artifact: ARTIFACT_TAG.to_string(),
        kind: kind.as_str().to_string(),
        version: format!("{FORMAT_MAJOR}.{FORMAT_MINOR}"),
    };
    serde_json::to_string(&header).expect("header serializes")
}

/// Serializes `records` under a header line into any writer.
pub fn write_records<W: Write, T: Serialize>(
    mut out: W,
    kind: ArtifactKind,
    records: &[T],
) -> io::Result<()> {
    writeln!(out, "{}", header_line(kind))?;
    for record in records {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    out.flush()
}

pub fn write_file<T: Serialize>(
    path: &Path,
    kind: ArtifactKind,
    records: &[T],
) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let file = File::create(path).map_err(io_err)?;
    write_records(BufWriter::new(file), kind, records).map_err(io_err)
}

/// Reads the header of an artifact and returns its kind.
pub fn peek_kind(path: &Path) -> Result<ArtifactKind, FormatError> {
    let file = File::open(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    parse_header(path, &first)
}

fn parse_header(path: &Path, line: &str) -> Result<ArtifactKind, FormatError> {
    let missing = || FormatError::MissingHeader {
        path: path.to_path_buf(),
    };
    let header: Header = serde_json::from_str(line.trim()).map_err(|_| missing())?;
    if header.artifact != ARTIFACT_TAG {
        return Err(missing());
    }
    let major = header
        .version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok());
    if major != Some(FORMAT_MAJOR) {
        return Err(FormatError::UnsupportedVersion {
            path: path.to_path_buf(),
            version: header.version,
        });
    }
    ArtifactKind::parse(&header.kind).ok_or_else(|| FormatError::WrongKind {
        path: path.to_path_buf(),
        expected: "known kind".into(),
        found: header.kind.clone(),
    })
}

/// Parses an artifact from an in-memory string. `path` is used for messages only.
pub fn parse_records<T: DeserializeOwned>(
    path: &Path,
    text: &str,
    kind: ArtifactKind,
) -> Result<Vec<T>, FormatError> {
    let mut lines = text.lines().enumerate();
    let first = lines
        .next()
        .map(|(_, l)| l)
        .ok_or_else(|| FormatError::MissingHeader {
            path: path.to_path_buf(),
        })?;
    let found = parse_header(path, first)?;
    if found != kind {
        return Err(FormatError::WrongKind {
            path: path.to_path_buf(),
            expected: kind.as_str().into(),
            found: found.as_str().into(),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| FormatError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_file<T: DeserializeOwned>(
    path: &Path,
    kind: ArtifactKind,
) -> Result<Vec<T>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_records(path, &text, kind)
}
