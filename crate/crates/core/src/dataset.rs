//! JSONL dataset records.
//!
//! One JSON object per line. Readers accept any file with the same schema
//! major version, warn on a different minor, and ignore unknown fields.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::filters::{FilterVerdict, RuleResult};
use crate::model::{
    CodeVersion, DiffLines, ExecStatus, PreferencePair, Provenance, TaskSpec, TokenMask,
};

pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterEntry {
    pub rule: String,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl From<&RuleResult> for FilterEntry {
    fn from(r: &RuleResult) -> Self {
        Self {
            rule: r.rule.as_str().to_owned(),
            pass: r.pass,
            detail: r.detail.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub iterations_used: usize,
    pub failure_statuses: Vec<ExecStatus>,
    pub llm_calls: u64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: String,
    pub id: String,
    pub instruction: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_iteration: usize,
    pub rejected_iteration: usize,
    pub diff_plus: DiffLines,
    pub diff_minus: DiffLines,
    pub tokenizer_id: String,
    pub token_mask: Vec<u8>,
    pub token_spans: Vec<(usize, usize)>,
    pub filters: Vec<FilterEntry>,
    pub metadata: RecordMetadata,
}

impl DatasetRecord {
    pub fn new(
        pair: &PreferencePair,
        mask: &TokenMask,
        verdict: Option<&FilterVerdict>,
        metadata: RecordMetadata,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            id: pair.x.id.clone(),
            instruction: pair.x.instruction.clone(),
            chosen: pair.chosen.source.clone(),
            rejected: pair.rejected.source.clone(),
            chosen_iteration: pair.provenance.chosen_iteration,
            rejected_iteration: pair.provenance.rejected_iteration,
            diff_plus: pair.diff_plus.clone(),
            diff_minus: pair.diff_minus.clone(),
            tokenizer_id: mask.tokenizer_id.clone(),
            token_mask: mask.mask.iter().map(|&b| u8::from(b)).collect(),
            token_spans: mask.token_spans.clone(),
            filters: verdict
                .map(|v| v.rule_results.iter().map(FilterEntry::from).collect())
                .unwrap_or_default(),
            metadata,
        }
    }

    pub fn to_pair(&self) -> PreferencePair {
        PreferencePair {
            x: TaskSpec {
                id: self.id.clone(),
                instruction: self.instruction.clone(),
                env_notes: Vec::new(),
            },
            chosen: CodeVersion::new(self.chosen_iteration, &self.chosen),
            rejected: CodeVersion::new(self.rejected_iteration, &self.rejected),
            diff_plus: self.diff_plus.clone(),
            diff_minus: self.diff_minus.clone(),
            provenance: Provenance {
                trace_id: self.id.clone(),
                chosen_iteration: self.chosen_iteration,
                rejected_iteration: self.rejected_iteration,
                rng_seed: self.metadata.rng_seed,
            },
        }
    }

    pub fn token_mask(&self) -> TokenMask {
        TokenMask {
            tokenizer_id: self.tokenizer_id.clone(),
            mask: self.token_mask.iter().map(|&b| b != 0).collect(),
            token_spans: self.token_spans.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line}: schema version {found} is incompatible with {expected}")]
    SchemaVersion {
        path: PathBuf,
        line: usize,
        found: String,
        expected: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

fn major_minor(version: &str) -> Option<(u64, u64)> {
    let mut parts = version.split('.');
    let major = parts.next()?.parse().ok()?;
    let minor = parts.next().unwrap_or("0").parse().ok()?;
    Some((major, minor))
}

/// Appends JSON lines to a file, one `write` per record.
#[derive(Debug)]
pub struct JsonlWriter {
    file: File,
    path: PathBuf,
    count: usize,
}

impl JsonlWriter {
    /// Creates (or truncates) `path`.
    pub fn create(path: &Path) -> Result<Self, DatasetError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            file,
            path: path.to_owned(),
            count: 0,
        })
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> Result<(), DatasetError> {
        let mut line = serde_json::to_vec(value).map_err(|e| DatasetError::Malformed {
            path: self.path.clone(),
            line: self.count + 1,
            message: e.to_string(),
        })?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize, DatasetError> {
        self.file.flush().map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        Ok(self.count)
    }
}

pub fn write_records<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a DatasetRecord>,
) -> Result<usize, DatasetError> {
    let mut w = JsonlWriter::create(path)?;
    for r in records {
        w.append(r)?;
    }
    w.finish()
}

/// Streams records from a JSONL file, checking the schema version per line.
pub struct RecordReader {
    lines: std::io::Lines<BufReader<File>>,
    path: PathBuf,
    line: usize,
    warned: bool,
}

impl RecordReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let file = File::open(path).map_err(io_err(path))?;
        Ok(Self {
            lines: BufReader::new(file).lines(),
            path: path.to_owned(),
            line: 0,
            warned: false,
        })
    }

    fn parse(&mut self, text: &str) -> Result<DatasetRecord, DatasetError> {
        let malformed = |message: String| DatasetError::Malformed {
            path: self.path.clone(),
            line: self.line,
            message,
        };
        let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("missing schema_version".into()))?
            .to_owned();
        let (ours, theirs) = (major_minor(SCHEMA_VERSION), major_minor(&found));
        match (ours, theirs) {
            (Some((m, n)), Some((fm, fn_))) if m == fm => {
                if n != fn_ && !self.warned {
                    log::warn!(
                        "{}: schema version {found} differs from {SCHEMA_VERSION} in minor version",
                        self.path.display()
                    );
                    self.warned = true;
                }
            }
            _ => {
                return Err(DatasetError::SchemaVersion {
                    path: self.path.clone(),
                    line: self.line,
                    found,
                    expected: SCHEMA_VERSION.to_owned(),
                })
            }
        }
        serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
    }
}

impl Iterator for RecordReader {
    type Item = Result<DatasetRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(io_err(&self.path)(e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&text));
        }
    }
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    RecordReader::open(path)?.collect()
}
