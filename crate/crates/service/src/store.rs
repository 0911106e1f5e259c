//! Content-addressed blobs and one JSON document per job.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use stylegallery_core::pipeline::sha256_hex;

use crate::error::ApiError;
use crate::job::TransferJob;

#[derive(Debug)]
pub struct BlobStore {
    dir: PathBuf,
}

impl BlobStore {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Stores `bytes` under their SHA-256 and returns the hash.
    pub fn put(&self, bytes: &[u8]) -> std::io::Result<String> {
        let hash = sha256_hex(bytes);
        let path = self.dir.join(&hash);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> std::io::Result<Vec<u8>> {
        if hash.is_empty() || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "malformed blob hash"));
        }
        std::fs::read(self.dir.join(hash))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

/// Job documents with optimistic versioning: every write bumps `version`
/// and a write against a stale version is refused.
#[derive(Debug)]
pub struct JobStore {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl JobStore {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            lock: Mutex::new(()),
        })
    }

    fn path(&self, id: &str) -> Result<PathBuf, ApiError> {
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-') {
            return Err(ApiError::NotFound(format!("job `{id}`")));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    fn read(&self, id: &str) -> Result<TransferJob, ApiError> {
        let path = self.path(id)?;
        let bytes = std::fs::read(&path).map_err(|_| ApiError::NotFound(format!("job `{id}`")))?;
        serde_json::from_slice(&bytes).map_err(|e| ApiError::Internal(format!("job document `{id}`: {e}")))
    }

    fn write(&self, job: &TransferJob) -> Result<(), ApiError> {
        let bytes = serde_json::to_vec_pretty(job).map_err(|e| ApiError::Internal(e.to_string()))?;
        write_atomic(&self.path(&job.id)?, &bytes).map_err(ApiError::from)
    }

    /// Persists a new job under the next free `job-N` id.
    pub fn create(&self, mut job: TransferJob) -> Result<TransferJob, ApiError> {
        let _g = self.lock.lock().expect("job store lock");
        let mut n = std::fs::read_dir(&self.dir)?.count() + 1;
        while self.dir.join(format!("job-{n}.json")).exists() {
            n += 1;
        }
        job.id = format!("job-{n}");
        job.version = 1;
        self.write(&job)?;
        Ok(job)
    }

    pub fn get(&self, id: &str) -> Result<TransferJob, ApiError> {
        let _g = self.lock.lock().expect("job store lock");
        self.read(id)
    }

    /// Applies `f` to the stored job and persists the result. With
    /// `expected_version` set, a job changed since that version is refused.
    pub fn update<T>(
        &self,
        id: &str,
        expected_version: Option<u64>,
        f: impl FnOnce(&mut TransferJob) -> Result<T, ApiError>,
    ) -> Result<(TransferJob, T), ApiError> {
        let _g = self.lock.lock().expect("job store lock");
        let mut job = self.read(id)?;
        if let Some(v) = expected_version {
            if v != job.version {
                return Err(ApiError::Conflict(format!(
                    "job `{id}` is at version {}, request was based on {v}",
                    job.version
                )));
            }
        }
        let out = f(&mut job)?;
        job.version += 1;
        self.write(&job)?;
        Ok((job, out))
    }
}
