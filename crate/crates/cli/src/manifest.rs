//! Tab-separated utterance list.
//!
//! Columns: `utterance_id speaker_id timestamp audio labels split condition`.
//! `labels` may be empty for unlabeled rows; paths are relative to the
//! manifest's directory unless absolute.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Heldout,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Heldout => "heldout",
        })
    }
}

impl FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Split::Labeled),
            "unlabeled" => Ok(Split::Unlabeled),
            "heldout" => Ok(Split::Heldout),
            other => Err(CliError::usage(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub speaker_id: String,
    pub timestamp: u64,
    pub audio: String,
    #[serde(default)]
    pub labels: String,
    pub split: Split,
    #[serde(default)]
    pub condition: String,
}

impl ManifestRow {
    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory that relative paths are resolved against.
    pub base: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            rows,
            base: base.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(rows, base)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        {
            let mut w = csv::WriterBuilder::new()
                .delimiter(b'\t')
                .from_writer(&mut buf);
            for row in &self.rows {
                w.serialize(row)
                    .map_err(|e| CliError::data(e.to_string()))?;
            }
            w.flush().map_err(|e| CliError::file(path.as_ref(), e))?;
        }
        crate::util::write_atomic(path, &buf)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if row.utterance_id.is_empty() || row.speaker_id.is_empty() {
                return Err(CliError::data(
                    "manifest row with empty utterance or speaker id",
                ));
            }
            if !seen.insert(row.utterance_id.as_str()) {
                return Err(CliError::data(format!(
                    "duplicate utterance id {:?}",
                    row.utterance_id
                )));
            }
            if row.split != Split::Unlabeled && !row.has_labels() {
                return Err(CliError::data(format!(
                    "{} utterance {:?} has no label file",
                    row.split, row.utterance_id
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.utterance_id == utterance_id)
    }
}
