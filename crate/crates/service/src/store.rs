//! Content-addressed grid files plus an append-only JSON-lines journal.
//!
//! Every model entry and every job state change is appended as one line;
//! replaying the journal with last-write-wins rebuilds the in-memory index.
//! Progress ticks stay in memory only.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use arch_core::dataprep::sha256_hex;
use arch_core::prior::TokenSequence;
use arch_core::voxcore::{decode_vxg1, encode_vxg1, Volume, VoxelGrid};
use serde::{Deserialize, Serialize};

use crate::jobs::JobSpec;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const OBJECT_DIR: &str = "objects";

/// Random 128-bit id as 32 hex digits.
pub fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parents: Vec<String>,
    pub operation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub resolution: usize,
    pub voxel_size: f32,
    pub origin: [f32; 3],
    pub sha256: String,
    /// Grid file relative to the data directory.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenSequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    #[serde(flatten)]
    pub spec: JobSpec,
    pub state: JobState,
    pub progress: f64,
    #[serde(default)]
    pub result_ids: Vec<String>,
    /// Kind-specific output: the metric report, or the partial grid id of a plan completion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Model(ModelEntry),
    Job(Job),
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
    #[error("illegal job transition {from:?} -> {to:?}")]
    Transition { from: JobState, to: JobState },
    #[error("unknown id {0}")]
    Unknown(String),
    #[error(transparent)]
    Vox(#[from] arch_core::voxcore::VoxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Inner {
    models: HashMap<String, ModelEntry>,
    model_order: Vec<String>,
    jobs: HashMap<String, Job>,
    job_order: Vec<String>,
    journal: File,
}

impl Inner {
    fn append(&mut self, record: &Record) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        self.journal.write_all(line.as_bytes())?;
        self.journal.flush()?;
        Ok(())
    }
}

pub struct Store {
    root: PathBuf,
    inner: Mutex<Inner>,
}

impl Store {
    /// Open or create the store under `root`. Returns the store and the ids
    /// of jobs that were queued or running when the journal was last written.
    pub fn open(root: &Path) -> Result<(Store, Vec<String>), StoreError> {
        std::fs::create_dir_all(root.join(OBJECT_DIR))?;
        let path = root.join(JOURNAL_FILE);
        let mut models = HashMap::new();
        let mut model_order = Vec::new();
        let mut jobs: HashMap<String, Job> = HashMap::new();
        let mut job_order = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: Record = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    // A crash mid-append leaves at most a torn final line.
                    Err(e) if e.is_eof() => {
                        log::warn!("ignoring torn journal line {}", i + 1);
                        continue;
                    }
                    Err(e) => return Err(StoreError::Journal { line: i + 1, message: e.to_string() }),
                };
                match record {
                    Record::Model(m) => {
                        if !models.contains_key(&m.id) {
                            model_order.push(m.id.clone());
                        }
                        models.insert(m.id.clone(), m);
                    }
                    Record::Job(j) => {
                        if !jobs.contains_key(&j.id) {
                            job_order.push(j.id.clone());
                        }
                        jobs.insert(j.id.clone(), j);
                    }
                }
            }
        }
        let pending = job_order.iter().filter(|id| !jobs[*id].state.is_terminal()).cloned().collect();
        let journal = OpenOptions::new().create(true).append(true).open(&path)?;
        let inner = Inner { models, model_order, jobs, job_order, journal };
        Ok((Store { root: root.to_path_buf(), inner: Mutex::new(inner) }, pending))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Write the grid file (once per content hash) and record a new entry.
    pub fn put_grid(&self, grid: &VoxelGrid, tokens: Option<TokenSequence>, lineage: Option<Lineage>) -> Result<ModelEntry, StoreError> {
        let bytes = encode_vxg1(grid);
        let sha = sha256_hex(&bytes);
        let rel = format!("{OBJECT_DIR}/{sha}.vxg");
        let path = self.root.join(&rel);
        if !path.exists() {
            let tmp = self.root.join(OBJECT_DIR).join(format!("{sha}.{}.tmp", new_id()));
            std::fs::write(&tmp, &bytes)?;
            std::fs::rename(&tmp, &path)?;
        }
        let entry = ModelEntry {
            id: new_id(),
            resolution: grid.resolution(),
            voxel_size: grid.voxel_size(),
            origin: grid.origin(),
            sha256: sha,
            path: rel,
            tokens,
            lineage,
        };
        let mut inner = self.lock();
        inner.append(&Record::Model(entry.clone()))?;
        inner.model_order.push(entry.id.clone());
        inner.models.insert(entry.id.clone(), entry.clone());
        Ok(entry)
    }

    pub fn model(&self, id: &str) -> Option<ModelEntry> {
        self.lock().models.get(id).cloned()
    }

    pub fn models(&self) -> Vec<ModelEntry> {
        let inner = self.lock();
        inner.model_order.iter().map(|id| inner.models[id].clone()).collect()
    }

    pub fn voxel_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let entry = self.model(id).ok_or_else(|| StoreError::Unknown(id.to_string()))?;
        Ok(std::fs::read(self.root.join(entry.path))?)
    }

    pub fn grid(&self, id: &str) -> Result<VoxelGrid, StoreError> {
        Ok(decode_vxg1(&self.voxel_bytes(id)?)?)
    }

    pub fn insert_job(&self, spec: JobSpec) -> Result<Job, StoreError> {
        let job = Job { id: new_id(), spec, state: JobState::Queued, progress: 0.0, result_ids: Vec::new(), result: None, error: None };
        let mut inner = self.lock();
        inner.append(&Record::Job(job.clone()))?;
        inner.job_order.push(job.id.clone());
        inner.jobs.insert(job.id.clone(), job.clone());
        Ok(job)
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.lock().jobs.get(id).cloned()
    }

    pub fn jobs(&self) -> Vec<Job> {
        let inner = self.lock();
        inner.job_order.iter().map(|id| inner.jobs[id].clone()).collect()
    }

    /// Move a job to `to`, journaling the new snapshot. Staying in the same
    /// state is allowed so a re-queued running job can be picked up again.
    pub fn transition(&self, id: &str, to: JobState, edit: impl FnOnce(&mut Job)) -> Result<Job, StoreError> {
        let mut inner = self.lock();
        let job = inner.jobs.get_mut(id).ok_or_else(|| StoreError::Unknown(id.to_string()))?;
        let ok = match (job.state, to) {
            (a, b) if a == b => !a.is_terminal(),
            (JobState::Queued, JobState::Running) => true,
            (JobState::Running, JobState::Done | JobState::Failed) => true,
            _ => false,
        };
        if !ok {
            return Err(StoreError::Transition { from: job.state, to });
        }
        job.state = to;
        edit(job);
        if to == JobState::Done {
            job.progress = 1.0;
        }
        let snapshot = job.clone();
        inner.append(&Record::Job(snapshot.clone()))?;
        Ok(snapshot)
    }

    /// Raise a running job's progress; lower values are ignored.
    pub fn set_progress(&self, id: &str, fraction: f64) {
        if let Some(job) = self.lock().jobs.get_mut(id) {
            if job.state == JobState::Running && fraction.is_finite() {
                job.progress = job.progress.max(fraction.clamp(0.0, 1.0));
            }
        }
    }
}
