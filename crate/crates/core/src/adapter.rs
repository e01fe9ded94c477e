//! Source adapters: where write-back plans are applied.
//!
//! The file adapter keeps one directory per origin holding numbered
//! snapshots (`snapshot-1.jsonl`, `snapshot-2.jsonl`, ...) and a
//! `deploy.journal`. Applying a plan amends the latest snapshot into the
//! next one and appends a journal line; plans already in the journal are
//! skipped.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::{RecordEdit, WriteBackPlan};
use crate::error::{Error, Result};
use crate::snapshot::SnapshotRecord;

pub const JOURNAL_FILE: &str = "deploy.journal";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied { snapshot: PathBuf },
    AlreadyApplied,
}

pub trait SourceAdapter {
    fn apply(&self, plan: &WriteBackPlan) -> Result<ApplyOutcome>;
}

pub trait AdapterRegistry {
    fn adapter(&self, origin: &str) -> Option<Box<dyn SourceAdapter + '_>>;
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    enhancement_id: String,
    snapshot: String,
    edits: usize,
}

/// Directory of per-origin snapshot folders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileSources {
    root: PathBuf,
}

impl FileSources {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileSources { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn origin_dir(&self, origin: &str) -> PathBuf {
        self.root.join(origin)
    }

    /// Origins with a folder under the root.
    pub fn origins(&self) -> Result<Vec<String>> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.root, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if entry.path().is_dir() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    /// Highest-numbered snapshot of an origin.
    pub fn latest_snapshot(&self, origin: &str) -> Result<Option<(u64, PathBuf)>> {
        latest_snapshot(&self.origin_dir(origin))
    }
}

impl AdapterRegistry for FileSources {
    fn adapter(&self, origin: &str) -> Option<Box<dyn SourceAdapter + '_>> {
        let dir = self.origin_dir(origin);
        dir.is_dir()
            .then(|| Box::new(FileSourceAdapter { dir }) as Box<dyn SourceAdapter>)
    }
}

pub fn snapshot_name(seq: u64) -> String {
    format!("snapshot-{seq}.jsonl")
}

fn snapshot_seq(name: &str) -> Option<u64> {
    name.strip_prefix("snapshot-")?
        .strip_suffix(".jsonl")?
        .parse()
        .ok()
}

pub fn latest_snapshot(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(seq) = snapshot_seq(&name.to_string_lossy()) {
            if best.as_ref().is_none_or(|(b, _)| seq > *b) {
                best = Some((seq, entry.path()));
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileSourceAdapter {
    dir: PathBuf,
}

impl FileSourceAdapter {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileSourceAdapter { dir: dir.into() }
    }

    fn journal(&self) -> PathBuf {
        self.dir.join(JOURNAL_FILE)
    }

    fn journaled(&self, enhancement_id: &str) -> Result<bool> {
        let path = self.journal();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(false),
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str::<JournalEntry>(l).ok())
            .any(|e| e.enhancement_id == enhancement_id))
    }
}

/// Applies edits to snapshot lines. Lines that do not parse are kept.
pub fn apply_edits(lines: &[String], edits: &[RecordEdit]) -> Vec<String> {
    let mut rows: Vec<(String, Option<SnapshotRecord>)> = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| (l.clone(), SnapshotRecord::parse_line(l).ok()))
        .collect();
    for edit in edits {
        match edit {
            RecordEdit::Upsert(record) => {
                let hit = rows
                    .iter_mut()
                    .find(|(_, r)| r.as_ref().is_some_and(|r| r.same_identity(record)));
                match hit {
                    Some((line, Some(existing))) => {
                        for (f, v) in &record.fields {
                            existing.fields.insert(f.clone(), v.clone());
                        }
                        *line = existing.to_line();
                    }
                    _ => rows.push((record.to_line(), Some(record.clone()))),
                }
            }
            RecordEdit::Delete(record) => {
                rows.retain(|(_, r)| !r.as_ref().is_some_and(|r| r.same_identity(record)));
            }
        }
    }
    rows.into_iter().map(|(l, _)| l).collect()
}

impl SourceAdapter for FileSourceAdapter {
    fn apply(&self, plan: &WriteBackPlan) -> Result<ApplyOutcome> {
        if self.journaled(&plan.enhancement_id)? {
            return Ok(ApplyOutcome::AlreadyApplied);
        }
        let Some((seq, base)) = latest_snapshot(&self.dir)? else {
            return Err(Error::NotFound(format!(
                "no snapshot to amend in {}",
                self.dir.display()
            )));
        };
        let text = fs::read_to_string(&base).map_err(|e| Error::io(&base, e))?;
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        let amended = apply_edits(&lines, &plan.edits);

        let name = snapshot_name(seq + 1);
        let target = self.dir.join(&name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let mut body = amended.join("\n");
        body.push('\n');
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;

        let entry = JournalEntry {
            enhancement_id: plan.enhancement_id.clone(),
            snapshot: name,
            edits: plan.edits.len(),
        };
        let journal = self.journal();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal)
            .map_err(|e| Error::io(&journal, e))?;
        let line = serde_json::to_string(&entry).expect("journal entry serializes");
        writeln!(file, "{line}").map_err(|e| Error::io(&journal, e))?;
        Ok(ApplyOutcome::Applied { snapshot: target })
    }
}
