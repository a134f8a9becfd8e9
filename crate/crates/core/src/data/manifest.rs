use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::io::{read_record, RecordError};
use crate::data::record::UtteranceRecord;
use crate::synth::GenConfig;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Corpus index. Record paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus: String,
    pub format_version: u32,
    pub seed: u64,
    pub splits: BTreeMap<String, Vec<String>>,
    pub generator: Option<GenConfig>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("unsupported manifest version {0}")]
    Version(u32),
    #[error("unknown split {0}")]
    UnknownSplit(String),
}

#[derive(Debug)]
pub struct ManifestIssue {
    pub path: String,
    pub message: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let m: Manifest = toml::from_str(&text).map_err(|e| ManifestError::Parse(e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(ManifestError::Version(m.format_version));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_toml()).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn split_paths(&self, root: &Path, split: &str) -> Result<Vec<PathBuf>, ManifestError> {
        self.splits
            .get(split)
            .map(|files| files.iter().map(|f| root.join(f)).collect())
            .ok_or_else(|| ManifestError::UnknownSplit(split.into()))
    }

    pub fn load_split(
        &self,
        root: &Path,
        split: &str,
    ) -> Result<Vec<UtteranceRecord>, Box<dyn std::error::Error + Send + Sync>> {
        let paths = self.split_paths(root, split)?;
        let mut out = Vec::with_capacity(paths.len());
        for p in paths {
            out.push(read_record(&p).map_err(|e| format!("{}: {e}", p.display()))?);
        }
        Ok(out)
    }

    /// Checks split disjointness, file presence and every record's invariants.
    /// Returns one issue per problem found.
    pub fn validate(&self, root: &Path) -> Vec<ManifestIssue> {
        let mut issues = Vec::new();
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        let mut speakers: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (split, files) in &self.splits {
            for f in files {
                if let Some(other) = seen.insert(f.as_str(), split.as_str()) {
                    issues.push(ManifestIssue {
                        path: f.clone(),
                        message: format!("listed in both {other} and {split}"),
                    });
                }
                match read_record(&root.join(f)) {
                    Ok(r) => {
                        speakers
                            .entry(split.clone())
                            .or_default()
                            .insert(r.speaker_id);
                    }
                    Err(RecordError::Invalid(v)) => {
                        for violation in v {
                            issues.push(ManifestIssue {
                                path: f.clone(),
                                message: violation.to_string(),
                            });
                        }
                    }
                    Err(e) => issues.push(ManifestIssue {
                        path: f.clone(),
                        message: e.to_string(),
                    }),
                }
            }
        }
        let names: Vec<&String> = speakers.keys().collect();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                for s in speakers[*a].intersection(&speakers[*b]) {
                    issues.push(ManifestIssue {
                        path: MANIFEST_FILE.into(),
                        message: format!("speaker {s} appears in both {a} and {b}"),
                    });
                }
            }
        }
        issues
    }
}
